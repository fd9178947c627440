//! Synthetic labeled corpora: random valence-valid molecules, optionally
//! grown around planted motifs, labeled by motif containment.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chemgraph::{
    apply_deletion, contains_subgraph, parse_smiles, peripheral_deletions, write_smiles, Atom,
    BondOrder, Element, MolGraph,
};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;

const CHAIN_ELEMENTS: [(Element, f64); 7] = [
    (Element::C, 0.64),
    (Element::N, 0.12),
    (Element::O, 0.12),
    (Element::S, 0.03),
    (Element::F, 0.03),
    (Element::Cl, 0.04),
    (Element::Br, 0.02),
];

const RINGS: [&str; 5] = ["c1ccccc1", "c1ccncc1", "C1CCCCC1", "C1CCCC1", "C1CCNCC1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowParams {
    pub min_atoms: usize,
    pub max_atoms: usize,
    /// Chance that an attachment step adds a whole ring.
    pub ring_prob: f64,
    pub double_prob: f64,
    pub triple_prob: f64,
}

impl Default for GrowParams {
    fn default() -> Self {
        GrowParams {
            min_atoms: 8,
            max_atoms: 25,
            ring_prob: 0.3,
            double_prob: 0.15,
            triple_prob: 0.03,
        }
    }
}

fn ring_templates() -> Vec<MolGraph> {
    RINGS
        .iter()
        .map(|s| parse_smiles(s).expect("ring template"))
        .collect()
}

fn open_atoms(g: &MolGraph) -> Vec<usize> {
    (0..g.atom_count())
        .filter(|&i| g.free_valence(i) > 0)
        .collect()
}

fn pick<R: Rng + ?Sized, T: Copy>(rng: &mut R, xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        None
    } else {
        Some(xs[rng.random_range(0..xs.len())])
    }
}

fn chain_element<R: Rng + ?Sized>(rng: &mut R) -> Element {
    let mut r: f64 = rng.random();
    for &(e, w) in &CHAIN_ELEMENTS {
        if r < w {
            return e;
        }
        r -= w;
    }
    Element::C
}

/// Joins `frag` to `g` by a single bond between random open atoms.
fn attach<R: Rng + ?Sized>(g: &MolGraph, frag: &MolGraph, rng: &mut R) -> Option<MolGraph> {
    if g.is_empty() {
        return Some(frag.clone());
    }
    let a = pick(rng, &open_atoms(g))?;
    let b = pick(rng, &open_atoms(frag))?;
    let off = g.atom_count();
    g.disjoint_union(frag)
        .with_bond(a, off + b, BondOrder::Single)
        .ok()
}

/// Adds random atoms and rings to `start` until it has `target` atoms or no
/// atom can take another bond.
pub fn grow<R: Rng + ?Sized>(
    start: &MolGraph,
    target: usize,
    params: &GrowParams,
    rng: &mut R,
) -> MolGraph {
    let rings = ring_templates();
    let mut g = start.clone();
    if g.is_empty() {
        g = MolGraph::empty().with_atom(Atom::new(Element::C));
    }
    while g.atom_count() < target {
        let Some(a) = pick(rng, &open_atoms(&g)) else {
            break;
        };
        let room = target - g.atom_count();
        if rng.random::<f64>() < params.ring_prob {
            let ring = &rings[rng.random_range(0..rings.len())];
            if ring.atom_count() <= room {
                if let Some(b) = pick(rng, &open_atoms(ring)) {
                    let off = g.atom_count();
                    g = g
                        .disjoint_union(ring)
                        .with_bond(a, off + b, BondOrder::Single)
                        .expect("new bond between distinct atoms");
                    continue;
                }
            }
        }
        let atom = Atom::new(chain_element(rng));
        let free = g.free_valence(a).min(atom.max_valence());
        let aromatic = g.atom(a).aromatic;
        let order = if !aromatic && free >= 3 && rng.random::<f64>() < params.triple_prob {
            BondOrder::Triple
        } else if !aromatic && free >= 2 && rng.random::<f64>() < params.double_prob {
            BondOrder::Double
        } else {
            BondOrder::Single
        };
        g = g.with_atom(atom);
        let u = g.atom_count() - 1;
        g = g
            .with_bond(a, u, order)
            .expect("new bond between distinct atoms");
    }
    g
}

/// A random molecule whose size is uniform in the configured range, grown
/// around `fragments` (joined by single bonds first).
pub fn random_molecule<R: Rng + ?Sized>(
    fragments: &[MolGraph],
    params: &GrowParams,
    rng: &mut R,
) -> Result<MolGraph> {
    let base: usize = fragments.iter().map(MolGraph::atom_count).sum();
    for _ in 0..100 {
        let target = rng
            .random_range(params.min_atoms..=params.max_atoms)
            .max(base);
        let mut g = MolGraph::empty();
        let mut ok = true;
        for f in fragments {
            match attach(&g, f, rng) {
                Some(next) => g = next,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        if g.is_empty() && rng.random::<f64>() < params.ring_prob {
            let rings = ring_templates();
            g = rings[rng.random_range(0..rings.len())].clone();
        }
        let g = grow(&g, target, params, rng);
        if g.atom_count() >= params.min_atoms.min(target) && g.is_valid() && g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::InvalidArgument(
        "could not grow a valid molecule around the given fragments".into(),
    ))
}

/// A property defined by a structural motif.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifSpec {
    pub name: String,
    pub smiles: String,
    /// Chance that a molecule is grown around the motif.
    #[serde(default = "default_rate")]
    pub rate: f64,
    /// Chance that a molecule without the motif is grown around a motif
    /// with one peripheral piece removed.
    #[serde(default)]
    pub decoy_rate: f64,
    /// Label is absence rather than presence of the motif.
    #[serde(default)]
    pub negate: bool,
}

fn default_rate() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub size: usize,
    pub motifs: Vec<MotifSpec>,
    #[serde(default)]
    pub grow: GrowParams,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub properties: Vec<String>,
    pub molecules: Vec<MolGraph>,
    pub smiles: Vec<String>,
    pub labels: Vec<Vec<bool>>,
    pub motifs: Vec<MolGraph>,
}

fn decoys(motif: &MolGraph) -> Result<Vec<MolGraph>> {
    let mut out = Vec::new();
    for d in peripheral_deletions(motif)? {
        let g = apply_deletion(motif, &d)?;
        if !g.is_empty() && g.atom_count() + 1 >= motif.atom_count() {
            out.push(g);
        }
    }
    Ok(out)
}

/// Generates `spec.size` molecules. Molecule `i` draws from its own stream
/// so corpora are reproducible from the seed.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    let motifs = spec
        .motifs
        .iter()
        .map(|m| {
            parse_smiles(&m.smiles)
                .map_err(|e| Error::InvalidArgument(format!("motif {}: {e}", m.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(m) = motifs.iter().find(|m| !m.is_connected()) {
        return Err(Error::InvalidArgument(format!(
            "motif {} is not connected",
            write_smiles(m)
        )));
    }
    let decoy_sets = motifs.iter().map(decoys).collect::<Result<Vec<_>>>()?;
    let mut corpus = SynthCorpus {
        properties: spec.motifs.iter().map(|m| m.name.clone()).collect(),
        molecules: Vec::with_capacity(spec.size),
        smiles: Vec::with_capacity(spec.size),
        labels: Vec::with_capacity(spec.size),
        motifs: motifs.clone(),
    };
    for i in 0..spec.size {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[i as u64]));
        let mut fragments = Vec::new();
        for (k, m) in spec.motifs.iter().enumerate() {
            if rng.random::<f64>() < m.rate {
                fragments.push(motifs[k].clone());
            } else if rng.random::<f64>() < m.decoy_rate {
                if let Some(d) = pick(&mut rng, &(0..decoy_sets[k].len()).collect::<Vec<_>>()) {
                    fragments.push(decoy_sets[k][d].clone());
                }
            }
        }
        let g = random_molecule(&fragments, &spec.grow, &mut rng)?;
        let labels = motifs
            .iter()
            .zip(&spec.motifs)
            .map(|(m, s)| Ok(contains_subgraph(&g, m)?.is_some() != s.negate))
            .collect::<Result<Vec<bool>>>()?;
        corpus.smiles.push(write_smiles(&g));
        corpus.molecules.push(g);
        corpus.labels.push(labels);
    }
    Ok(corpus)
}

impl SynthCorpus {
    /// Positive fraction per property.
    pub fn balance(&self) -> Vec<f64> {
        (0..self.properties.len())
            .map(|p| {
                self.labels.iter().filter(|l| l[p]).count() as f64 / self.labels.len().max(1) as f64
            })
            .collect()
    }

    pub fn write_smiles<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.smiles {
            writeln!(w, "{s}")?;
        }
        Ok(())
    }

    /// `smiles,<property>...` with 0/1 labels.
    pub fn write_labeled_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["smiles".to_string()];
        header.extend(self.properties.iter().cloned());
        out.write_record(&header)
            .map_err(|e| Error::Format(e.to_string()))?;
        for (s, l) in self.smiles.iter().zip(&self.labels) {
            let mut row = vec![s.clone()];
            row.extend(l.iter().map(|&b| if b { "1" } else { "0" }.to_string()));
            out.write_record(&row)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}
