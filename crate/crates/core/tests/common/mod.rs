//! Brute-force oracles shared by the property and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use ratgen::chemgraph::{peripheral_deletions, BondOrder, DeletionKind, MolGraph};

pub fn connected(n: usize, edges: &[(usize, usize)], alive: &[bool]) -> bool {
    let Some(start) = (0..n).find(|&i| alive[i]) else {
        return false;
    };
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(x) = stack.pop() {
        for &(a, b) in edges {
            for (p, q) in [(a, b), (b, a)] {
                if p == x && alive[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    (0..n).all(|i| !alive[i] || seen[i])
}

/// Every simple cycle as a sorted edge set.
pub fn simple_cycles(g: &MolGraph) -> Vec<(Vec<usize>, BTreeSet<usize>)> {
    fn walk(
        g: &MolGraph,
        start: usize,
        path: &mut Vec<usize>,
        edges: &mut Vec<usize>,
        out: &mut BTreeSet<(Vec<usize>, BTreeSet<usize>)>,
    ) {
        let last = *path.last().unwrap();
        for &(nb, bond) in g.neighbors(last) {
            if nb == start && path.len() >= 3 && edges.first() != Some(&bond) {
                let mut atoms = path.clone();
                atoms.sort_unstable();
                let mut es: BTreeSet<usize> = edges.iter().copied().collect();
                es.insert(bond);
                out.insert((atoms, es));
            } else if nb > start && !path.contains(&nb) {
                path.push(nb);
                edges.push(bond);
                walk(g, start, path, edges, out);
                path.pop();
                edges.pop();
            }
        }
    }
    let mut out = BTreeSet::new();
    for s in 0..g.atom_count() {
        walk(g, s, &mut vec![s], &mut Vec::new(), &mut out);
    }
    out.into_iter().collect()
}

/// Smallest set of smallest rings by greedy GF(2) independence over cycles
/// sorted by length.
pub fn sssr(g: &MolGraph) -> Vec<Vec<usize>> {
    let mut cycles = simple_cycles(g);
    cycles.sort_by_key(|(a, _)| a.len());
    let comps = g.components().len();
    let rank = g.bond_count() + comps - g.atom_count();
    let mut basis: Vec<Vec<bool>> = Vec::new();
    let mut rings = Vec::new();
    for (atoms, edges) in cycles {
        if rings.len() == rank {
            break;
        }
        let mut v: Vec<bool> = (0..g.bond_count()).map(|b| edges.contains(&b)).collect();
        for row in &basis {
            let pivot = row.iter().position(|&x| x).unwrap();
            if v[pivot] {
                for (x, &r) in v.iter_mut().zip(row) {
                    *x ^= r;
                }
            }
        }
        if let Some(p) = v.iter().position(|&x| x) {
            for row in basis.iter_mut() {
                if row[p] {
                    for (x, &r) in row.iter_mut().zip(&v) {
                        *x ^= r;
                    }
                }
            }
            basis.push(v);
            rings.push(atoms);
        }
    }
    rings
}

/// Legal deletions by direct search: removed-atom sets tagged by kind.
pub fn oracle_deletions(g: &MolGraph) -> BTreeSet<(bool, Vec<usize>)> {
    let n = g.atom_count();
    let edges: Vec<(usize, usize)> = g.bonds().iter().map(|b| (b.a, b.b)).collect();
    let mut out = BTreeSet::new();
    for (bi, b) in g.bonds().iter().enumerate() {
        if b.order == BondOrder::Aromatic {
            continue;
        }
        let rest: Vec<(usize, usize)> = edges
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != bi)
            .map(|(_, &e)| e)
            .collect();
        if connected(n, &rest, &vec![true; n]) {
            continue;
        }
        for leaf in [b.a, b.b] {
            let other = if leaf == b.a { b.b } else { b.a };
            let isolated = !rest.iter().any(|&(x, y)| x == leaf || y == leaf);
            let other_isolated = !rest.iter().any(|&(x, y)| x == other || y == other);
            if isolated && !other_isolated {
                out.insert((false, vec![leaf]));
            }
        }
    }
    let rings: Vec<Vec<usize>> = sssr(g).into_iter().filter(|r| r.len() <= 8).collect();
    for (i, r) in rings.iter().enumerate() {
        let excl: Vec<usize> = r
            .iter()
            .copied()
            .filter(|a| {
                rings
                    .iter()
                    .enumerate()
                    .all(|(j, o)| j == i || !o.contains(a))
            })
            .collect();
        if excl.is_empty() {
            continue;
        }
        let alive: Vec<bool> = (0..n).map(|a| !excl.contains(&a)).collect();
        if connected(n, &edges, &alive) {
            out.insert((true, excl));
        }
    }
    out
}

pub fn produced(g: &MolGraph) -> BTreeSet<(bool, Vec<usize>)> {
    peripheral_deletions(g)
        .unwrap()
        .into_iter()
        .map(|d| (d.kind == DeletionKind::PeripheralRing, d.atoms))
        .collect()
}

/// Common bonds of a mapping, as pairs of `a` indices; `None` on an order
/// conflict.
pub fn common_bonds(
    a: &MolGraph,
    b: &MolGraph,
    pairs: &[(usize, usize)],
) -> Option<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (i, &(x, y)) in pairs.iter().enumerate() {
        for &(u, v) in &pairs[i + 1..] {
            match (a.order_between(x, u), b.order_between(y, v)) {
                (Some(p), Some(q)) if p != q => return None,
                (Some(_), Some(_)) => out.push((x, u)),
                _ => {}
            }
        }
    }
    Some(out)
}

pub fn linked(pairs: &[(usize, usize)], bonds: &[(usize, usize)]) -> bool {
    let atoms: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let mut seen = BTreeSet::from([atoms[0]]);
    let mut grew = true;
    while grew {
        grew = false;
        for &(x, u) in bonds {
            if seen.contains(&x) != seen.contains(&u) {
                seen.insert(x);
                seen.insert(u);
                grew = true;
            }
        }
    }
    seen.len() == atoms.len()
}

/// Largest connected common subgraph by exhaustive partial injections.
pub fn oracle_mcs(a: &MolGraph, b: &MolGraph) -> usize {
    fn go(
        a: &MolGraph,
        b: &MolGraph,
        u: usize,
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        best: &mut usize,
    ) {
        if pairs.len() + (a.atom_count() - u) <= *best {
            return;
        }
        if u == a.atom_count() {
            if !pairs.is_empty() {
                if let Some(bonds) = common_bonds(a, b, pairs) {
                    if linked(pairs, &bonds) {
                        *best = pairs.len();
                    }
                }
            }
            return;
        }
        for v in 0..b.atom_count() {
            if !used[v] && a.atom(u) == b.atom(v) {
                used[v] = true;
                pairs.push((u, v));
                go(a, b, u + 1, used, pairs, best);
                pairs.pop();
                used[v] = false;
            }
        }
        go(a, b, u + 1, used, pairs, best);
    }
    let mut best = 0;
    go(
        a,
        b,
        0,
        &mut vec![false; b.atom_count()],
        &mut Vec::new(),
        &mut best,
    );
    best
}

/// Euclidean projection onto the probability simplex.
pub fn project(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Maximizes `Σ P·Î − λ Σ P log P` over the simplex by projected gradient
/// ascent.
pub fn simplex_oracle(est: &[f64], lambda: f64) -> Vec<f64> {
    let n = est.len();
    let mut p = vec![1.0 / n as f64; n];
    let eta = 1e-3;
    for _ in 0..200_000 {
        let step: Vec<f64> = p
            .iter()
            .zip(est)
            .map(|(&q, &i)| q + eta * (i - lambda * (q.max(1e-300).ln() + 1.0)))
            .collect();
        p = project(&step);
    }
    p
}
