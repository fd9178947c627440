//! Canonical labeling by colour refinement plus individualization.
//!
//! The search explores every individualization branch and keeps the
//! lexicographically smallest encoding of the relabeled graph, which makes the
//! result an exact isomorphism invariant. The size of that search tree is itself
//! invariant, so when it exceeds the leaf budget the key falls back to a
//! refinement hash for every isomorphic copy alike.

use std::cmp::Ordering;

use super::{write_smiles_ordered, MolGraph};
use crate::hashing::{mix, mix_all};

const LEAF_BUDGET: usize = 4096;

fn initial_colors(g: &MolGraph) -> Vec<u32> {
    let inv: Vec<(u64, usize)> = (0..g.atom_count())
        .map(|i| (g.atom(i).code(), g.degree(i)))
        .collect();
    ranks_of(&inv)
}

/// Dense ranks of arbitrary ordered keys.
fn ranks_of<T: Ord + Clone>(keys: &[T]) -> Vec<u32> {
    let mut sorted: Vec<T> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).expect("present") as u32)
        .collect()
}

fn class_count(colors: &[u32]) -> usize {
    colors.iter().copied().max().map_or(0, |m| m as usize + 1)
}

fn refine(g: &MolGraph, mut colors: Vec<u32>) -> Vec<u32> {
    let n = g.atom_count();
    let mut classes = class_count(&colors);
    loop {
        let sigs: Vec<(u32, Vec<(u64, u32)>)> = (0..n)
            .map(|i| {
                let mut nb: Vec<(u64, u32)> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(v, b)| (g.bond(b).order.code(), colors[v]))
                    .collect();
                nb.sort_unstable();
                (colors[i], nb)
            })
            .collect();
        let next = ranks_of(&sigs);
        let next_classes = class_count(&next);
        colors = next;
        if next_classes == classes {
            return colors;
        }
        classes = next_classes;
    }
}

type Encoding = Vec<u64>;

fn encode(g: &MolGraph, colors: &[u32]) -> Encoding {
    // Discrete colouring: colour = canonical position.
    let n = g.atom_count();
    let mut at = vec![0usize; n];
    for (i, &c) in colors.iter().enumerate() {
        at[c as usize] = i;
    }
    let mut enc: Vec<u64> = at.iter().map(|&i| g.atom(i).code()).collect();
    let mut edges: Vec<(u32, u32, u64)> = g
        .bonds()
        .iter()
        .map(|b| {
            let (x, y) = (colors[b.a], colors[b.b]);
            (x.min(y), x.max(y), b.order.code())
        })
        .collect();
    edges.sort_unstable();
    for (x, y, o) in edges {
        enc.push(((x as u64) << 40) | ((y as u64) << 8) | o);
    }
    enc
}

struct Search<'a> {
    g: &'a MolGraph,
    best: Option<(Encoding, Vec<u32>)>,
    leaves: usize,
    exhausted: bool,
}

impl Search<'_> {
    fn run(&mut self, colors: Vec<u32>) {
        if self.exhausted {
            return;
        }
        let colors = refine(self.g, colors);
        let n = self.g.atom_count();
        if class_count(&colors) == n {
            self.leaves += 1;
            if self.leaves > LEAF_BUDGET {
                self.exhausted = true;
                return;
            }
            let enc = encode(self.g, &colors);
            let better = match &self.best {
                None => true,
                Some((b, _)) => enc.cmp(b) == Ordering::Less,
            };
            if better {
                self.best = Some((enc, colors));
            }
            return;
        }
        // First non-singleton cell.
        let mut sizes = vec![0usize; n];
        for &c in &colors {
            sizes[c as usize] += 1;
        }
        let target = (0..n).find(|&c| sizes[c] > 1).expect("non-discrete") as u32;
        let members: Vec<usize> = (0..n).filter(|&i| colors[i] == target).collect();
        for v in members {
            let individualized: Vec<u32> = colors
                .iter()
                .enumerate()
                .map(|(i, &c)| if c < target || i == v { c } else { c + 1 })
                .collect();
            self.run(individualized);
        }
    }
}

/// Canonical position of every atom (a permutation of `0..n`), or `None` when
/// the individualization search exceeds its budget.
fn canonical_labeling(g: &MolGraph) -> Option<Vec<u32>> {
    let mut s = Search {
        g,
        best: None,
        leaves: 0,
        exhausted: false,
    };
    s.run(initial_colors(g));
    if s.exhausted {
        None
    } else {
        s.best.map(|(_, c)| c)
    }
}

fn refinement_hash(g: &MolGraph) -> u64 {
    let n = g.atom_count();
    let mut h: Vec<u64> = (0..n)
        .map(|i| mix_all(&[g.atom(i).code(), g.degree(i) as u64]))
        .collect();
    for round in 0..n.min(12) {
        h = (0..n)
            .map(|i| {
                let mut nb: Vec<u64> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(v, b)| mix_all(&[g.bond(b).order.code(), h[v]]))
                    .collect();
                nb.sort_unstable();
                let mut acc = mix_all(&[round as u64, h[i]]);
                for x in nb {
                    acc = mix(acc ^ x);
                }
                acc
            })
            .collect();
    }
    h.sort_unstable();
    let mut acc = mix_all(&[n as u64, g.bond_count() as u64]);
    for x in h {
        acc = mix(acc ^ x);
    }
    acc
}

/// Canonical rank of every atom: an isomorphism-invariant total order (up to
/// automorphism) used for tie-breaking in traversal orders.
pub fn canonical_ranks(g: &MolGraph) -> Vec<usize> {
    match canonical_labeling(g) {
        Some(c) => c.into_iter().map(|x| x as usize).collect(),
        None => {
            let colors = refine(g, initial_colors(g));
            let mut idx: Vec<usize> = (0..g.atom_count()).collect();
            idx.sort_by_key(|&i| (colors[i], i));
            let mut rank = vec![0; idx.len()];
            for (r, &i) in idx.iter().enumerate() {
                rank[i] = r;
            }
            rank
        }
    }
}

/// Isomorphism key: the canonical SMILES when the exact labeling is within
/// budget, otherwise `#` followed by a hex refinement hash.
pub fn canonical_key(g: &MolGraph) -> String {
    if g.is_empty() {
        return String::new();
    }
    match canonical_labeling(g) {
        Some(colors) => {
            let rank: Vec<usize> = colors.iter().map(|&c| c as usize).collect();
            // Write the relabeled graph so the text depends only on the encoding.
            let mut order = vec![0usize; rank.len()];
            for (i, &r) in rank.iter().enumerate() {
                order[r] = i;
            }
            let relabeled = g.permuted(&order);
            let identity: Vec<usize> = (0..rank.len()).collect();
            write_smiles_ordered(&relabeled, &identity).0
        }
        None => format!("#{:016x}", refinement_hash(g)),
    }
}
