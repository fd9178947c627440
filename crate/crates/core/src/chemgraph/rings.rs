//! Ring perception: bridge detection for cyclic bonds, and a smallest set of
//! smallest rings built from Horton candidate cycles with GF(2) elimination.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{BondOrder, MolGraph};

/// Rings larger than this are not perceived.
pub const MAX_RING_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ring {
    /// Atom cycle starting at the smallest index; consecutive atoms are bonded.
    pub atoms: Vec<usize>,
    pub bonds: Vec<usize>,
    pub aromatic: bool,
}

impl Ring {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn contains_atom(&self, a: usize) -> bool {
        self.atoms.contains(&a)
    }
}

/// `true` for every bond that is not a bridge.
pub fn cyclic_bonds(g: &MolGraph) -> Vec<bool> {
    let n = g.atom_count();
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut cyclic = vec![true; g.bond_count()];
    let mut time = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // (atom, parent bond, neighbor cursor)
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        disc[root] = time;
        low[root] = time;
        time += 1;
        while let Some(&mut (u, pbond, ref mut cursor)) = stack.last_mut() {
            if *cursor < g.neighbors(u).len() {
                let (v, bond) = g.neighbors(u)[*cursor];
                *cursor += 1;
                if bond == pbond {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = time;
                    low[v] = time;
                    time += 1;
                    stack.push((v, bond, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        cyclic[pbond] = false;
                    }
                }
            }
        }
    }
    cyclic
}

struct Candidate {
    atoms: Vec<usize>,
    bonds: Vec<usize>,
    bits: Vec<u64>,
}

fn bitset(bonds: &[usize], words: usize) -> Vec<u64> {
    let mut bits = vec![0u64; words];
    for &b in bonds {
        bits[b / 64] |= 1 << (b % 64);
    }
    bits
}

fn path_to_root(parent: &[(usize, usize)], mut v: usize, root: usize) -> (Vec<usize>, Vec<usize>) {
    let mut atoms = vec![v];
    let mut bonds = Vec::new();
    while v != root {
        let (p, b) = parent[v];
        bonds.push(b);
        atoms.push(p);
        v = p;
    }
    (atoms, bonds)
}

fn order_cycle(g: &MolGraph, bonds: &[usize]) -> Vec<usize> {
    let start = bonds
        .iter()
        .flat_map(|&b| [g.bond(b).a, g.bond(b).b])
        .min()
        .expect("non-empty cycle");
    let mut cycle = vec![start];
    let mut prev_bond = usize::MAX;
    let mut cur = start;
    loop {
        let next = g
            .neighbors(cur)
            .iter()
            .filter(|&&(_, b)| b != prev_bond && bonds.contains(&b))
            .min_by_key(|&&(nb, _)| nb)
            .copied();
        let Some((nb, b)) = next else { break };
        if nb == start {
            break;
        }
        cycle.push(nb);
        prev_bond = b;
        cur = nb;
    }
    cycle
}

pub(crate) fn sssr(g: &MolGraph) -> Vec<Ring> {
    let n = g.atom_count();
    let m = g.bond_count();
    if m < 3 {
        return Vec::new();
    }
    let cyclic = cyclic_bonds(g);
    if !cyclic.iter().any(|&c| c) {
        return Vec::new();
    }
    let cycle_rank = m + g.components().len() - n;
    let words = m.div_ceil(64);

    let mut candidates: Vec<Candidate> = Vec::new();
    for root in 0..n {
        if !g.neighbors(root).iter().any(|&(_, b)| cyclic[b]) {
            continue;
        }
        let mut dist = vec![usize::MAX; n];
        let mut parent = vec![(usize::MAX, usize::MAX); n];
        dist[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            if 2 * dist[u] + 1 > MAX_RING_SIZE {
                continue;
            }
            for &(v, b) in g.neighbors(u) {
                if cyclic[b] && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    parent[v] = (u, b);
                    queue.push_back(v);
                }
            }
        }
        for (bi, bond) in g.bonds().iter().enumerate() {
            if !cyclic[bi] {
                continue;
            }
            let (u, v) = (bond.a, bond.b);
            if dist[u] == usize::MAX || dist[v] == usize::MAX {
                continue;
            }
            let len = dist[u] + dist[v] + 1;
            if len < 3 || len > MAX_RING_SIZE {
                continue;
            }
            let (pu_atoms, pu_bonds) = path_to_root(&parent, u, root);
            let (pv_atoms, pv_bonds) = path_to_root(&parent, v, root);
            let shared = pu_atoms.iter().filter(|a| pv_atoms.contains(a)).count();
            if shared != 1 || pu_bonds.contains(&bi) || pv_bonds.contains(&bi) {
                continue;
            }
            let mut bonds: Vec<usize> = pu_bonds.into_iter().chain(pv_bonds).collect();
            bonds.push(bi);
            bonds.sort_unstable();
            let mut atoms: Vec<usize> = pu_atoms.into_iter().chain(pv_atoms).collect();
            atoms.sort_unstable();
            atoms.dedup();
            if atoms.len() != bonds.len() {
                continue;
            }
            let bits = bitset(&bonds, words);
            candidates.push(Candidate { atoms, bonds, bits });
        }
    }
    candidates.sort_by(|a, b| {
        (a.bonds.len(), &a.atoms, &a.bonds).cmp(&(b.bonds.len(), &b.atoms, &b.bonds))
    });
    candidates.dedup_by(|a, b| a.bits == b.bits);

    // Basis rows kept with their pivot bit for incremental elimination.
    let mut basis: Vec<(usize, Vec<u64>)> = Vec::new();
    let mut rings = Vec::new();
    for cand in candidates {
        if rings.len() == cycle_rank {
            break;
        }
        let mut row = cand.bits.clone();
        for (pivot, brow) in &basis {
            if row[pivot / 64] >> (pivot % 64) & 1 == 1 {
                for (x, y) in row.iter_mut().zip(brow) {
                    *x ^= y;
                }
            }
        }
        let Some(pivot) = (0..m).find(|&b| row[b / 64] >> (b % 64) & 1 == 1) else {
            continue;
        };
        // Keep the basis reduced on the new pivot.
        for (_, brow) in basis.iter_mut() {
            if brow[pivot / 64] >> (pivot % 64) & 1 == 1 {
                for (x, y) in brow.iter_mut().zip(&row) {
                    *x ^= y;
                }
            }
        }
        basis.push((pivot, row));
        let aromatic = cand
            .bonds
            .iter()
            .all(|&b| g.bond(b).order == BondOrder::Aromatic);
        rings.push(Ring {
            atoms: order_cycle(g, &cand.bonds),
            bonds: cand.bonds,
            aromatic,
        });
    }
    rings
}
