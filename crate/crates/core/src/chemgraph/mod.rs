//! Molecular graph data model.
//!
//! A [`MolGraph`] is an immutable, labeled, undirected graph of heavy atoms.
//! Hydrogens are implicit and never stored. Everything downstream (fingerprints,
//! rationale search, merging, the generator) consumes and produces these.

mod canon;
mod deletion;
mod matching;
mod rings;
mod smiles;

use std::collections::VecDeque;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use canon::{canonical_key, canonical_ranks};
pub use deletion::{
    apply_deletion, apply_deletion_mapped, peripheral_deletions, Deletion, DeletionKind,
};
pub use matching::{contains_subgraph, subgraph_matches, MatchMode, MAX_MATCH_ATOMS};
pub use rings::{Ring, MAX_RING_SIZE};
pub use smiles::{parse_smiles, write_smiles, write_smiles_ordered, write_smiles_random};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Element {
    C,
    N,
    O,
    S,
    P,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 9] = [
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::P,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
            Element::P => "P",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == s)
    }

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::S => 16,
            Element::P => 15,
            Element::F => 9,
            Element::Cl => 17,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    /// Neutral maximum valence.
    pub fn base_valence(self) -> u32 {
        match self {
            Element::C => 4,
            Element::N => 3,
            Element::O => 2,
            Element::S => 6,
            Element::P => 5,
            Element::F | Element::Cl | Element::Br | Element::I => 1,
        }
    }

    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::C | Element::N | Element::O | Element::S | Element::P
        )
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub charge: i8,
    pub aromatic: bool,
}

impl Atom {
    pub fn new(element: Element) -> Atom {
        Atom {
            element,
            charge: 0,
            aromatic: false,
        }
    }

    pub fn aromatic(element: Element) -> Atom {
        Atom {
            element,
            charge: 0,
            aromatic: true,
        }
    }

    pub fn charged(element: Element, charge: i8) -> Atom {
        Atom {
            element,
            charge,
            aromatic: false,
        }
    }

    /// Maximum bond-order sum. Carbon loses capacity with any charge;
    /// heteroatoms gain one per positive charge and lose one per negative.
    pub fn max_valence(&self) -> u32 {
        let base = self.element.base_valence() as i32;
        let charge = self.charge as i32;
        let v = match self.element {
            Element::C => base - charge.abs(),
            _ => base + charge,
        };
        v.max(0) as u32
    }

    /// Stable small integer used by hashing and canonical ordering.
    pub fn code(&self) -> u64 {
        ((self.element.atomic_number() as u64) << 16)
            | (((self.charge as i64 + 128) as u64) << 1)
            | self.aromatic as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub const ALL: [BondOrder; 4] = [
        BondOrder::Single,
        BondOrder::Double,
        BondOrder::Triple,
        BondOrder::Aromatic,
    ];

    /// Contribution in half-units, so aromatic (1.5) stays integral.
    pub fn half_units(self) -> u32 {
        match self {
            BondOrder::Single => 2,
            BondOrder::Double => 4,
            BondOrder::Triple => 6,
            BondOrder::Aromatic => 3,
        }
    }

    pub fn code(self) -> u64 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub fn index(self) -> usize {
        self.code() as usize - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn new(a: usize, b: usize, order: BondOrder) -> Bond {
        Bond { a, b, order }
    }

    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// Bond-order sum of an atom given the orders of its bonds: integral bonds
/// count fully, aromatic bonds 1.5 each with the aromatic part rounded down.
pub fn valence_sum<I: IntoIterator<Item = BondOrder>>(orders: I) -> u32 {
    let mut whole = 0;
    let mut aromatic = 0;
    for o in orders {
        match o {
            BondOrder::Aromatic => aromatic += 1,
            o => whole += o.half_units() / 2,
        }
    }
    whole + (3 * aromatic) / 2
}

#[derive(Clone)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
    rings: OnceLock<Vec<Ring>>,
}

impl PartialEq for MolGraph {
    fn eq(&self, other: &Self) -> bool {
        self.atoms == other.atoms && self.bonds == other.bonds
    }
}

impl fmt::Debug for MolGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MolGraph({})", write_smiles(self))
    }
}

impl MolGraph {
    /// Builds a graph and checks every structural and valence invariant.
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<MolGraph> {
        let g = Self::build(atoms, bonds)?;
        g.check_valence()?;
        Ok(g)
    }

    /// Builds a graph checking structure (indices, self-loops, duplicate
    /// bonds) but not valence.
    pub fn build(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<MolGraph> {
        let n = atoms.len();
        let mut adjacency = vec![Vec::new(); n];
        for (i, b) in bonds.iter().enumerate() {
            if b.a >= n || b.b >= n {
                return Err(Error::InvalidGraph(format!(
                    "bond {i} references atom outside 0..{n}"
                )));
            }
            if b.a == b.b {
                return Err(Error::InvalidGraph(format!("self-loop on atom {}", b.a)));
            }
            if adjacency[b.a].iter().any(|&(nb, _)| nb == b.b) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate bond between {} and {}",
                    b.a, b.b
                )));
            }
            adjacency[b.a].push((b.b, i));
            adjacency[b.b].push((b.a, i));
        }
        Ok(MolGraph {
            atoms,
            bonds,
            adjacency,
            rings: OnceLock::new(),
        })
    }

    pub fn empty() -> MolGraph {
        MolGraph {
            atoms: Vec::new(),
            bonds: Vec::new(),
            adjacency: Vec::new(),
            rings: OnceLock::new(),
        }
    }

    pub fn check_valence(&self) -> Result<()> {
        for i in 0..self.atoms.len() {
            let sum = self.valence(i);
            let max = self.atoms[i].max_valence();
            if sum > max {
                return Err(Error::Valence {
                    atom: i,
                    element: self.atoms[i].element.symbol(),
                    sum,
                    max,
                });
            }
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.check_valence().is_ok()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn bond(&self, i: usize) -> &Bond {
        &self.bonds[i]
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `(neighbor, bond index)` pairs in bond insertion order.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn bond_between(&self, i: usize, j: usize) -> Option<usize> {
        self.adjacency[i]
            .iter()
            .find(|&&(nb, _)| nb == j)
            .map(|&(_, b)| b)
    }

    pub fn order_between(&self, i: usize, j: usize) -> Option<BondOrder> {
        self.bond_between(i, j).map(|b| self.bonds[b].order)
    }

    pub fn valence(&self, i: usize) -> u32 {
        valence_sum(self.adjacency[i].iter().map(|&(_, b)| self.bonds[b].order))
    }

    /// Remaining bond-order capacity of atom `i`.
    pub fn free_valence(&self, i: usize) -> u32 {
        self.atoms[i].max_valence().saturating_sub(self.valence(i))
    }

    /// Connected components, each sorted ascending, ordered by smallest atom.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        !self.atoms.is_empty() && self.components().len() == 1
    }

    /// Induced subgraph on `keep` (any order; result follows ascending original
    /// index). Returns the graph and, for each new atom, its original index.
    pub fn induced_subgraph(&self, keep: &[usize]) -> (MolGraph, Vec<usize>) {
        let mut kept: Vec<usize> = keep.to_vec();
        kept.sort_unstable();
        kept.dedup();
        let mut remap = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in kept.iter().enumerate() {
            remap[old] = new;
        }
        let atoms = kept.iter().map(|&i| self.atoms[i]).collect();
        let bonds = self
            .bonds
            .iter()
            .filter(|b| remap[b.a] != usize::MAX && remap[b.b] != usize::MAX)
            .map(|b| Bond::new(remap[b.a], remap[b.b], b.order))
            .collect();
        let g = MolGraph::build(atoms, bonds).expect("induced subgraph of a valid graph");
        (g, kept)
    }

    /// Relabels atoms: new atom `k` is old atom `order[k]`. `order` must be a
    /// permutation of `0..n`.
    pub fn permuted(&self, order: &[usize]) -> MolGraph {
        assert_eq!(order.len(), self.atoms.len(), "permutation length");
        let mut inv = vec![usize::MAX; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inv[old] = new;
        }
        let atoms = order.iter().map(|&o| self.atoms[o]).collect();
        let mut bonds: Vec<Bond> = self
            .bonds
            .iter()
            .map(|b| {
                let (x, y) = (inv[b.a], inv[b.b]);
                Bond::new(x.min(y), x.max(y), b.order)
            })
            .collect();
        bonds.sort_by_key(|b| (b.a, b.b));
        MolGraph::build(atoms, bonds).expect("permutation of a valid graph")
    }

    /// Disjoint union; atoms of `other` are appended after ours.
    pub fn disjoint_union(&self, other: &MolGraph) -> MolGraph {
        let off = self.atoms.len();
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        let mut bonds = self.bonds.clone();
        bonds.extend(
            other
                .bonds
                .iter()
                .map(|b| Bond::new(b.a + off, b.b + off, b.order)),
        );
        MolGraph::build(atoms, bonds).expect("union of valid graphs")
    }

    /// Returns a copy with one extra atom.
    pub fn with_atom(&self, atom: Atom) -> MolGraph {
        let mut atoms = self.atoms.clone();
        atoms.push(atom);
        let mut adjacency = self.adjacency.clone();
        adjacency.push(Vec::new());
        MolGraph {
            atoms,
            bonds: self.bonds.clone(),
            adjacency,
            rings: OnceLock::new(),
        }
    }

    /// Returns a copy with one extra bond (structure checked, valence not).
    pub fn with_bond(&self, a: usize, b: usize, order: BondOrder) -> Result<MolGraph> {
        let mut bonds = self.bonds.clone();
        bonds.push(Bond::new(a, b, order));
        MolGraph::build(self.atoms.clone(), bonds)
    }

    /// Smallest set of smallest rings, restricted to rings of at most
    /// [`MAX_RING_SIZE`] atoms.
    pub fn rings(&self) -> &[Ring] {
        self.rings.get_or_init(|| rings::sssr(self))
    }

    /// Whether each bond lies on some cycle of the graph.
    pub fn ring_bonds(&self) -> Vec<bool> {
        rings::cyclic_bonds(self)
    }

    /// Atom-index-annotated JSON for debugging.
    pub fn to_debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "smiles": write_smiles(self),
            "atoms": self.atoms.iter().enumerate().map(|(i, a)| serde_json::json!({
                "index": i,
                "element": a.element.symbol(),
                "charge": a.charge,
                "aromatic": a.aromatic,
            })).collect::<Vec<_>>(),
            "bonds": self.bonds.iter().map(|b| serde_json::json!({
                "a": b.a, "b": b.b, "order": format!("{:?}", b.order),
            })).collect::<Vec<_>>(),
        })
    }
}

impl fmt::Display for MolGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&write_smiles(self))
    }
}
