//! Multi-property rationales: superpose single-property rationales on their
//! maximum common substructure and keep candidates passing every threshold.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chemgraph::{Atom, Bond, MolGraph};
use crate::error::{Error, Result};
use crate::forest::Property;
use crate::rationale::{Rationale, RationaleVocab};

/// Largest input either side of an MCS search.
pub const MAX_MCS_ATOMS: usize = 20;
/// Largest number of maximum mappings reported.
pub const MAX_MAPPINGS: usize = 4096;

/// Injective atom correspondence, sorted by the `a` index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AtomMapping {
    pub pairs: Vec<(usize, usize)>,
}

impl AtomMapping {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

struct McsSearch<'a> {
    a: &'a MolGraph,
    b: &'a MolGraph,
    seed: usize,
    a_to_b: Vec<usize>,
    b_used: Vec<bool>,
    /// Excluded pairs, `a * |b| + b`.
    banned: Vec<bool>,
    best: usize,
    found: Vec<AtomMapping>,
    size: usize,
}

impl McsSearch<'_> {
    /// `v` may take `u`: labels agree and bonds present on both sides agree.
    /// Returns whether it also shares a bond with the current mapping.
    fn consistent(&self, u: usize, v: usize) -> Option<bool> {
        if self.a.atom(u) != self.b.atom(v) {
            return None;
        }
        let mut linked = false;
        for &(x, bond) in self.a.neighbors(u) {
            let y = self.a_to_b[x];
            if y == usize::MAX {
                continue;
            }
            if let Some(o) = self.b.order_between(v, y) {
                if o != self.a.bond(bond).order {
                    return None;
                }
                linked = true;
            }
        }
        Some(linked)
    }

    fn bound(&self) -> usize {
        let mut a_left: BTreeMap<u64, usize> = BTreeMap::new();
        for u in self.seed + 1..self.a.atom_count() {
            if self.a_to_b[u] == usize::MAX {
                *a_left.entry(self.a.atom(u).code()).or_default() += 1;
            }
        }
        let mut b_left: BTreeMap<u64, usize> = BTreeMap::new();
        for v in 0..self.b.atom_count() {
            if !self.b_used[v] {
                *b_left.entry(self.b.atom(v).code()).or_default() += 1;
            }
        }
        self.size
            + a_left
                .iter()
                .map(|(k, &c)| c.min(b_left.get(k).copied().unwrap_or(0)))
                .sum::<usize>()
    }

    fn record(&mut self) {
        if self.size > self.best {
            self.best = self.size;
            self.found.clear();
        }
        if self.size == self.best && self.found.len() < MAX_MAPPINGS {
            let pairs = (0..self.a.atom_count())
                .filter(|&u| self.a_to_b[u] != usize::MAX)
                .map(|u| (u, self.a_to_b[u]))
                .collect();
            self.found.push(AtomMapping { pairs });
        }
    }

    /// Smallest non-banned pair joined to the mapping by a common bond.
    fn next_pair(&self) -> Option<(usize, usize)> {
        let nb = self.b.atom_count();
        let mut best: Option<(usize, usize)> = None;
        for u in self.seed + 1..self.a.atom_count() {
            if self.a_to_b[u] != usize::MAX {
                continue;
            }
            if !self
                .a
                .neighbors(u)
                .iter()
                .any(|&(x, _)| self.a_to_b[x] != usize::MAX)
            {
                continue;
            }
            for v in 0..nb {
                if self.b_used[v] || self.banned[u * nb + v] {
                    continue;
                }
                if self.consistent(u, v) == Some(true) {
                    best = Some((u, v));
                    break;
                }
            }
            if best.is_some() {
                break;
            }
        }
        best
    }

    fn search(&mut self) {
        if self.bound() < self.best {
            return;
        }
        let Some((u, v)) = self.next_pair() else {
            return;
        };
        let nb = self.b.atom_count();
        self.a_to_b[u] = v;
        self.b_used[v] = true;
        self.size += 1;
        self.record();
        self.search();
        self.size -= 1;
        self.a_to_b[u] = usize::MAX;
        self.b_used[v] = false;

        self.banned[u * nb + v] = true;
        self.search();
        self.banned[u * nb + v] = false;
    }
}

/// All maximum-size connected common subgraphs of `a` and `b` (bonds present
/// in both must agree in order; connectivity is through such common bonds).
pub fn max_common_substructure(a: &MolGraph, b: &MolGraph) -> Result<Vec<AtomMapping>> {
    if a.atom_count() > MAX_MCS_ATOMS || b.atom_count() > MAX_MCS_ATOMS {
        return Err(Error::Resource(format!(
            "MCS limited to {MAX_MCS_ATOMS} atoms (got {} and {})",
            a.atom_count(),
            b.atom_count()
        )));
    }
    let mut s = McsSearch {
        a,
        b,
        seed: 0,
        a_to_b: vec![usize::MAX; a.atom_count()],
        b_used: vec![false; b.atom_count()],
        banned: vec![false; a.atom_count() * b.atom_count()],
        best: 1,
        found: Vec::new(),
        size: 0,
    };
    for i in 0..a.atom_count() {
        for j in 0..b.atom_count() {
            if a.atom(i) != b.atom(j) {
                continue;
            }
            s.seed = i;
            s.a_to_b[i] = j;
            s.b_used[j] = true;
            s.size = 1;
            s.record();
            s.search();
            s.a_to_b[i] = usize::MAX;
            s.b_used[j] = false;
        }
    }
    Ok(s.found)
}

/// Superposes `b` onto `a` along `m`. Returns the union graph and, for each
/// atom of `b`, its index in the union. Fails on bond-order conflicts and
/// valence violations.
pub fn superpose(a: &MolGraph, b: &MolGraph, m: &AtomMapping) -> Result<(MolGraph, Vec<usize>)> {
    let mut b_to_u = vec![usize::MAX; b.atom_count()];
    for &(x, y) in &m.pairs {
        b_to_u[y] = x;
    }
    let mut atoms: Vec<Atom> = a.atoms().to_vec();
    for (y, slot) in b_to_u.iter_mut().enumerate() {
        if *slot == usize::MAX {
            *slot = atoms.len();
            atoms.push(*b.atom(y));
        }
    }
    let mut bonds: Vec<Bond> = a.bonds().to_vec();
    for bond in b.bonds() {
        let (x, y) = (b_to_u[bond.a], b_to_u[bond.b]);
        if x < a.atom_count() && y < a.atom_count() {
            match a.order_between(x, y) {
                Some(o) if o == bond.order => continue,
                Some(o) => {
                    return Err(Error::InvalidGraph(format!(
                        "bond {x}-{y} is {o:?} in one input and {:?} in the other",
                        bond.order
                    )))
                }
                None => {}
            }
        }
        bonds.push(Bond::new(x, y, bond.order));
    }
    Ok((MolGraph::new(atoms, bonds)?, b_to_u))
}

fn union_peripheral(a: &Rationale, b: &Rationale, b_to_u: &[usize]) -> Vec<usize> {
    let mut p: Vec<usize> = a.peripheral().to_vec();
    p.extend(b.peripheral().iter().map(|&i| b_to_u[i]));
    p.sort_unstable();
    p.dedup();
    p
}

/// Every valid superposition of `b` onto `a`, deduplicated; a single
/// two-fragment rationale when they share no atom type.
pub fn merge_pair(a: &Rationale, b: &Rationale) -> Result<Vec<Rationale>> {
    let source = format!("{}+{}", a.key(), b.key());
    let mappings = max_common_substructure(a.graph(), b.graph())?;
    if mappings.is_empty() {
        let g = a.graph().disjoint_union(b.graph());
        let off = a.atom_count();
        let b_to_u: Vec<usize> = (0..b.atom_count()).map(|i| i + off).collect();
        let per = union_peripheral(a, b, &b_to_u);
        return Ok(vec![Rationale::new(
            g,
            &per,
            BTreeMap::new(),
            source,
            Vec::new(),
        )?]);
    }
    let mut out = RationaleVocab::new(Vec::new());
    for m in &mappings {
        let Ok((g, b_to_u)) = superpose(a.graph(), b.graph(), m) else {
            continue;
        };
        let per = union_peripheral(a, b, &b_to_u);
        out.insert(Rationale::new(
            g,
            &per,
            BTreeMap::new(),
            source.clone(),
            Vec::new(),
        )?);
    }
    Ok(out.rationales().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeParams {
    /// Rationales taken from each single-property vocabulary.
    pub shortlist: Vec<usize>,
}

/// Indices of the top `k` rationales by `estimate` (descending), ties by the
/// rationale's own property score, then by position.
pub fn shortlist(
    vocab: &RationaleVocab,
    prop: &str,
    estimate: Option<&[f64]>,
    k: usize,
) -> Vec<usize> {
    let score = |i: usize| vocab.get(i).scores.get(prop).copied().unwrap_or(0.0);
    let est = |i: usize| estimate.map_or(0.0, |e| e[i]);
    let mut idx: Vec<usize> = (0..vocab.len()).collect();
    idx.sort_by(|&x, &y| {
        est(y)
            .total_cmp(&est(x))
            .then(score(y).total_cmp(&score(x)))
            .then(x.cmp(&y))
    });
    idx.truncate(k);
    idx
}

/// Folds `merge_pair` left over the shortlisted vocabularies and keeps the
/// candidates that pass every property.
pub fn build_multi_vocab<P: Property>(
    vocabs: &[RationaleVocab],
    props: &[P],
    params: &MergeParams,
    estimates: Option<&[Vec<f64>]>,
) -> Result<RationaleVocab> {
    if vocabs.len() < 2 || vocabs.len() != props.len() || params.shortlist.len() != vocabs.len() {
        return Err(Error::InvalidArgument(format!(
            "need one vocabulary and shortlist size per property (got {} vocabularies, {} properties, {} sizes)",
            vocabs.len(),
            props.len(),
            params.shortlist.len()
        )));
    }
    let lists: Vec<Vec<Rationale>> = vocabs
        .iter()
        .zip(props)
        .enumerate()
        .map(|(i, (v, p))| {
            let est = estimates.map(|e| e[i].as_slice());
            shortlist(v, p.name(), est, params.shortlist[i])
                .into_iter()
                .map(|k| v.get(k).clone())
                .collect()
        })
        .collect();
    let mut current = lists[0].clone();
    for next in &lists[1..] {
        let pairs: Vec<(usize, usize)> = (0..current.len())
            .flat_map(|i| (0..next.len()).map(move |j| (i, j)))
            .collect();
        let merged: Vec<Vec<Rationale>> = pairs
            .par_iter()
            .map(|&(i, j)| match merge_pair(&current[i], &next[j]) {
                Ok(v) => v,
                Err(Error::Resource(msg)) => {
                    warn!("merge skipped: {msg}");
                    Vec::new()
                }
                Err(e) => panic!("merge of valid rationales failed: {e}"),
            })
            .collect();
        let mut dedup = RationaleVocab::new(Vec::new());
        for r in merged.into_iter().flatten() {
            dedup.insert(r);
        }
        current = dedup.rationales().to_vec();
    }
    let names: Vec<String> = props.iter().map(|p| p.name().to_string()).collect();
    let scored: Vec<Option<Rationale>> = current
        .into_par_iter()
        .map(|mut r| {
            let mut ok = true;
            for p in props {
                let s = p.score(r.graph());
                ok &= s >= p.threshold();
                r.scores.insert(p.name().to_string(), s);
            }
            ok.then_some(r)
        })
        .collect();
    let mut out = RationaleVocab::new(names);
    for r in scored.into_iter().flatten() {
        out.insert(r);
    }
    if out.is_empty() {
        warn!("no merged rationale satisfies every property");
    }
    Ok(out)
}
