//! Rationales and rationale vocabularies with their JSON file format.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chemgraph::{
    canonical_key, canonical_ranks, parse_smiles, write_smiles_ordered, MolGraph,
};
use crate::error::{Error, Result};

pub const VOCAB_VERSION: u32 = 1;

/// A subgraph (one or more fragments) with the atoms the decoder may extend.
///
/// Atoms are stored in the order a canonical SMILES rendering visits them,
/// so `fragments()` text reparses to the identical graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Rationale {
    graph: MolGraph,
    peripheral: Vec<usize>,
    pub scores: BTreeMap<String, f64>,
    pub source: String,
    /// Atom index in the source molecule for each rationale atom, when the
    /// rationale came from a single molecule.
    pub source_atoms: Vec<usize>,
}

impl Rationale {
    pub fn new(
        graph: MolGraph,
        peripheral: &[usize],
        scores: BTreeMap<String, f64>,
        source: impl Into<String>,
        source_atoms: Vec<usize>,
    ) -> Result<Rationale> {
        let n = graph.atom_count();
        if n == 0 {
            return Err(Error::Empty("rationale has no atoms".into()));
        }
        if peripheral.iter().any(|&p| p >= n) {
            return Err(Error::InvalidArgument(format!(
                "peripheral atom out of range for {n}-atom rationale"
            )));
        }
        if !source_atoms.is_empty() && source_atoms.len() != n {
            return Err(Error::InvalidArgument(
                "source atom map has wrong length".into(),
            ));
        }
        let rank = canonical_ranks(&graph);
        let (_, order) = write_smiles_ordered(&graph, &rank);
        let mut inv = vec![0usize; n];
        for (k, &old) in order.iter().enumerate() {
            inv[old] = k;
        }
        let mut per: Vec<usize> = peripheral.iter().map(|&p| inv[p]).collect();
        per.sort_unstable();
        per.dedup();
        let src = if source_atoms.is_empty() {
            Vec::new()
        } else {
            order.iter().map(|&old| source_atoms[old]).collect()
        };
        Ok(Rationale {
            graph: graph.permuted(&order),
            peripheral: per,
            scores,
            source: source.into(),
            source_atoms: src,
        })
    }

    pub fn graph(&self) -> &MolGraph {
        &self.graph
    }

    /// Sorted ascending.
    pub fn peripheral(&self) -> &[usize] {
        &self.peripheral
    }

    pub fn atom_count(&self) -> usize {
        self.graph.atom_count()
    }

    pub fn key(&self) -> String {
        canonical_key(&self.graph)
    }

    pub fn smiles(&self) -> String {
        let identity: Vec<usize> = (0..self.atom_count()).collect();
        write_smiles_ordered(&self.graph, &identity).0
    }

    /// One SMILES string per connected fragment.
    pub fn fragment_smiles(&self) -> Vec<String> {
        self.smiles().split('.').map(str::to_string).collect()
    }

    /// Connected fragments, each with the rationale atom index of its atoms.
    pub fn fragments(&self) -> Vec<(MolGraph, Vec<usize>)> {
        self.graph
            .components()
            .into_iter()
            .map(|c| self.graph.induced_subgraph(&c))
            .collect()
    }

    pub fn fragment_count(&self) -> usize {
        self.graph.components().len()
    }

    fn to_record(&self) -> RationaleRecord {
        RationaleRecord {
            fragments: self.fragment_smiles(),
            scores: self.scores.clone(),
            peripheral: self.peripheral.clone(),
            source: self.source.clone(),
            source_atoms: self.source_atoms.clone(),
        }
    }

    fn from_record(r: RationaleRecord) -> Result<Rationale> {
        let parsed = parse_smiles(&r.fragments.join("."))?;
        let n = parsed.atom_count();
        // Parsing yields atoms in write order; normalize bond order only.
        let graph = parsed.permuted(&(0..n).collect::<Vec<_>>());
        if r.peripheral.iter().any(|&p| p >= n) {
            return Err(Error::Format("peripheral index out of range".into()));
        }
        if !r.source_atoms.is_empty() && r.source_atoms.len() != n {
            return Err(Error::Format("source_atoms length mismatch".into()));
        }
        let mut peripheral = r.peripheral;
        peripheral.sort_unstable();
        peripheral.dedup();
        Ok(Rationale {
            graph,
            peripheral,
            scores: r.scores,
            source: r.source,
            source_atoms: r.source_atoms,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RationaleRecord {
    fragments: Vec<String>,
    scores: BTreeMap<String, f64>,
    peripheral: Vec<usize>,
    source: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    source_atoms: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    properties: Vec<String>,
    rationales: Vec<RationaleRecord>,
}

/// Rationales deduplicated by canonical key, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct RationaleVocab {
    pub properties: Vec<String>,
    rationales: Vec<Rationale>,
    keys: Vec<String>,
    seen: HashSet<String>,
}

impl PartialEq for RationaleVocab {
    fn eq(&self, other: &Self) -> bool {
        self.properties == other.properties && self.rationales == other.rationales
    }
}

impl RationaleVocab {
    pub fn new(properties: Vec<String>) -> RationaleVocab {
        RationaleVocab {
            properties,
            rationales: Vec::new(),
            keys: Vec::new(),
            seen: HashSet::new(),
        }
    }

    /// Adds `r` unless an isomorphic rationale is present; returns whether it
    /// was added.
    pub fn insert(&mut self, r: Rationale) -> bool {
        let k = r.key();
        if !self.seen.insert(k.clone()) {
            return false;
        }
        self.keys.push(k);
        self.rationales.push(r);
        true
    }

    pub fn rationales(&self) -> &[Rationale] {
        &self.rationales
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.rationales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rationales.is_empty()
    }

    pub fn get(&self, i: usize) -> &Rationale {
        &self.rationales[i]
    }

    pub fn to_json(&self) -> String {
        let f = VocabFile {
            version: VOCAB_VERSION,
            properties: self.properties.clone(),
            rationales: self.rationales.iter().map(Rationale::to_record).collect(),
        };
        serde_json::to_string_pretty(&f).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<RationaleVocab> {
        let f: VocabFile = serde_json::from_str(s)?;
        if f.version != VOCAB_VERSION {
            return Err(Error::Format(format!(
                "vocabulary version {} (expected {VOCAB_VERSION})",
                f.version
            )));
        }
        let mut v = RationaleVocab::new(f.properties);
        let mut seen = HashSet::new();
        for rec in f.rationales {
            let r = Rationale::from_record(rec)?;
            if !seen.insert(r.key()) {
                return Err(Error::Format(format!("duplicate rationale {}", r.smiles())));
            }
            v.insert(r);
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RationaleVocab> {
        RationaleVocab::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Atoms of a subgraph that lost a neighbour relative to the source molecule,
/// plus degree-1 atoms. `map[i]` is subgraph atom `i`'s index in `source`.
pub fn peripheral_atoms(sub: &MolGraph, map: &[usize], source: &MolGraph) -> Vec<usize> {
    (0..sub.atom_count())
        .filter(|&i| sub.degree(i) < source.degree(map[i]) || sub.degree(i) == 1)
        .collect()
}
