//! Peripheral deletions: the legal moves of rationale search.
//!
//! A peripheral bond is a non-aromatic bridge with exactly one degree-1
//! endpoint; deleting it removes that endpoint. A peripheral ring is a
//! perceived ring whose exclusive atoms (atoms in no other perceived ring) can
//! be removed, together with every bond touching them, leaving a connected,
//! non-empty graph.

use serde::{Deserialize, Serialize};

use super::{BondOrder, MolGraph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeletionKind {
    PeripheralBond,
    PeripheralRing,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Deletion {
    pub kind: DeletionKind,
    /// Sorted ascending.
    pub atoms: Vec<usize>,
    /// Sorted ascending; every bond incident to a removed atom.
    pub bonds: Vec<usize>,
}

fn incident_bonds(g: &MolGraph, atoms: &[usize]) -> Vec<usize> {
    let mut bonds: Vec<usize> = atoms
        .iter()
        .flat_map(|&a| g.neighbors(a).iter().map(|&(_, b)| b))
        .collect();
    bonds.sort_unstable();
    bonds.dedup();
    bonds
}

fn remainder(g: &MolGraph, removed: &[usize]) -> Vec<usize> {
    (0..g.atom_count())
        .filter(|a| removed.binary_search(a).is_err())
        .collect()
}

fn connected_after(g: &MolGraph, removed: &[usize]) -> bool {
    let keep = remainder(g, removed);
    if keep.is_empty() {
        return false;
    }
    g.induced_subgraph(&keep).0.is_connected()
}

/// Enumerates every legal deletion: peripheral bonds first (by bond index),
/// then peripheral rings (in perception order).
pub fn peripheral_deletions(g: &MolGraph) -> Result<Vec<Deletion>> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let mut out = Vec::new();
    let cyclic = g.ring_bonds();
    for (bi, bond) in g.bonds().iter().enumerate() {
        if bond.order == BondOrder::Aromatic || cyclic[bi] {
            continue;
        }
        let (da, db) = (g.degree(bond.a), g.degree(bond.b));
        let leaf = match (da == 1, db == 1) {
            (true, false) => bond.a,
            (false, true) => bond.b,
            _ => continue,
        };
        out.push(Deletion {
            kind: DeletionKind::PeripheralBond,
            atoms: vec![leaf],
            bonds: vec![bi],
        });
    }
    let rings = g.rings();
    for (ri, ring) in rings.iter().enumerate() {
        let mut exclusive: Vec<usize> = ring
            .atoms
            .iter()
            .copied()
            .filter(|&a| {
                rings
                    .iter()
                    .enumerate()
                    .all(|(rj, other)| rj == ri || !other.contains_atom(a))
            })
            .collect();
        exclusive.sort_unstable();
        if exclusive.is_empty() || !connected_after(g, &exclusive) {
            continue;
        }
        out.push(Deletion {
            kind: DeletionKind::PeripheralRing,
            bonds: incident_bonds(g, &exclusive),
            atoms: exclusive,
        });
    }
    Ok(out)
}

/// Applies a deletion, returning the reduced graph and for each of its atoms
/// the index it had in `g`.
pub fn apply_deletion_mapped(g: &MolGraph, d: &Deletion) -> Result<(MolGraph, Vec<usize>)> {
    let n = g.atom_count();
    if d.atoms.is_empty() || d.atoms.iter().any(|&a| a >= n) {
        return Err(Error::StaleDeletion(format!(
            "atoms {:?} out of range for {n}-atom graph",
            d.atoms
        )));
    }
    if d.bonds.iter().any(|&b| b >= g.bond_count()) {
        return Err(Error::StaleDeletion(format!(
            "bonds {:?} out of range",
            d.bonds
        )));
    }
    let mut atoms = d.atoms.clone();
    atoms.sort_unstable();
    atoms.dedup();
    if incident_bonds(g, &atoms) != d.bonds {
        return Err(Error::StaleDeletion(
            "bond list does not match the removed atoms".into(),
        ));
    }
    if d.kind == DeletionKind::PeripheralBond && (atoms.len() != 1 || g.degree(atoms[0]) != 1) {
        return Err(Error::StaleDeletion(
            "peripheral bond no longer ends in a degree-1 atom".into(),
        ));
    }
    let keep = remainder(g, &atoms);
    if keep.is_empty() {
        return Err(Error::StaleDeletion(
            "deletion would empty the graph".into(),
        ));
    }
    let (out, map) = g.induced_subgraph(&keep);
    if !out.is_connected() {
        return Err(Error::StaleDeletion(
            "deletion disconnects the graph".into(),
        ));
    }
    Ok((out, map))
}

pub fn apply_deletion(g: &MolGraph, d: &Deletion) -> Result<MolGraph> {
    apply_deletion_mapped(g, d).map(|(out, _)| out)
}
