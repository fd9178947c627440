//! Backtracking substructure matching on labeled graphs.

use super::MolGraph;
use crate::error::{Error, Result};

/// Largest graph either side of a match may have.
pub const MAX_MATCH_ATOMS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    /// Every pattern bond must exist in the target with the same order.
    Monomorphism,
    /// Additionally, non-bonded pattern pairs must be non-bonded in the target.
    Induced,
}

struct Matcher<'a> {
    g: &'a MolGraph,
    s: &'a MolGraph,
    mode: MatchMode,
    order: Vec<usize>,
    /// For each position in `order`, an already-placed neighbour to anchor on.
    anchor: Vec<Option<usize>>,
    map: Vec<usize>,
    used: Vec<bool>,
    found: Vec<Vec<usize>>,
    limit: usize,
}

impl Matcher<'_> {
    fn feasible(&self, sv: usize, gv: usize) -> bool {
        if self.used[gv]
            || self.g.atom(gv) != self.s.atom(sv)
            || self.g.degree(gv) < self.s.degree(sv)
        {
            return false;
        }
        for &(sw, b) in self.s.neighbors(sv) {
            let gw = self.map[sw];
            if gw == usize::MAX {
                continue;
            }
            match self.g.order_between(gv, gw) {
                Some(o) if o == self.s.bond(b).order => {}
                _ => return false,
            }
        }
        if self.mode == MatchMode::Induced {
            for &(gw, _) in self.g.neighbors(gv) {
                if !self.used[gw] {
                    continue;
                }
                let sw = self
                    .map
                    .iter()
                    .position(|&m| m == gw)
                    .expect("used atom is mapped");
                if self.s.bond_between(sv, sw).is_none() {
                    return false;
                }
            }
        }
        true
    }

    fn search(&mut self, depth: usize) {
        if self.found.len() >= self.limit {
            return;
        }
        if depth == self.order.len() {
            self.found.push(self.map.clone());
            return;
        }
        let sv = self.order[depth];
        let candidates: Vec<usize> = match self.anchor[depth] {
            Some(sp) => self
                .g
                .neighbors(self.map[sp])
                .iter()
                .map(|&(v, _)| v)
                .collect(),
            None => (0..self.g.atom_count()).collect(),
        };
        for gv in candidates {
            if !self.feasible(sv, gv) {
                continue;
            }
            self.map[sv] = gv;
            self.used[gv] = true;
            self.search(depth + 1);
            self.map[sv] = usize::MAX;
            self.used[gv] = false;
            if self.found.len() >= self.limit {
                return;
            }
        }
    }
}

fn match_order(s: &MolGraph) -> (Vec<usize>, Vec<Option<usize>>) {
    let n = s.atom_count();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut anchor = Vec::with_capacity(n);
    while order.len() < n {
        // Start each component at its highest-degree atom.
        let root = (0..n)
            .filter(|&i| !placed[i])
            .max_by_key(|&i| (s.degree(i), std::cmp::Reverse(i)))
            .expect("unplaced atom");
        placed[root] = true;
        order.push(root);
        anchor.push(None);
        let mut head = order.len() - 1;
        while head < order.len() {
            let u = order[head];
            head += 1;
            for &(v, _) in s.neighbors(u) {
                if !placed[v] {
                    placed[v] = true;
                    order.push(v);
                    anchor.push(Some(u));
                }
            }
        }
    }
    (order, anchor)
}

/// Up to `limit` embeddings of `s` into `g`; each maps pattern atom `i` to
/// target atom `m[i]`.
pub fn subgraph_matches(
    g: &MolGraph,
    s: &MolGraph,
    mode: MatchMode,
    limit: usize,
) -> Result<Vec<Vec<usize>>> {
    if g.atom_count() > MAX_MATCH_ATOMS || s.atom_count() > MAX_MATCH_ATOMS {
        return Err(Error::Resource(format!(
            "subgraph match limited to {MAX_MATCH_ATOMS} atoms (got {} and {})",
            s.atom_count(),
            g.atom_count()
        )));
    }
    if s.atom_count() > g.atom_count() || s.bond_count() > g.bond_count() {
        return Ok(Vec::new());
    }
    let (order, anchor) = match_order(s);
    let mut m = Matcher {
        g,
        s,
        mode,
        order,
        anchor,
        map: vec![usize::MAX; s.atom_count()],
        used: vec![false; g.atom_count()],
        found: Vec::new(),
        limit,
    };
    m.search(0);
    Ok(m.found)
}

/// Finds one embedding of `s` in `g` preserving element, charge, aromatic
/// flag and the presence and order of every pattern bond.
pub fn contains_subgraph(g: &MolGraph, s: &MolGraph) -> Result<Option<Vec<usize>>> {
    Ok(subgraph_matches(g, s, MatchMode::Monomorphism, 1)?.pop())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemgraph::parse_smiles;

    fn has(g: &str, s: &str) -> bool {
        contains_subgraph(&parse_smiles(g).unwrap(), &parse_smiles(s).unwrap())
            .unwrap()
            .is_some()
    }

    #[test]
    fn basic_containment() {
        assert!(has("CCO", "C"));
        assert!(!has("CCC", "C1CC1"));
        assert!(has("CC(=O)O", "C(=O)O"));
        assert!(!has("CC(O)O", "C(=O)O"));
        assert!(has("c1ccccc1CC", "c1ccccc1"));
        assert!(!has("C1CCCCC1", "c1ccccc1"));
        assert!(has("CCO.CN", "CN"));
    }

    #[test]
    fn mapping_is_valid() {
        let g = parse_smiles("CC(=O)Nc1ccccc1").unwrap();
        let s = parse_smiles("O=CN").unwrap();
        let m = contains_subgraph(&g, &s).unwrap().unwrap();
        for b in s.bonds() {
            assert_eq!(g.order_between(m[b.a], m[b.b]), Some(b.order));
        }
        for (i, &gi) in m.iter().enumerate() {
            assert_eq!(g.atom(gi), s.atom(i));
        }
    }

    #[test]
    fn induced_mode_rejects_extra_bonds() {
        let tri = parse_smiles("C1CC1").unwrap();
        let path = parse_smiles("CCC").unwrap();
        assert!(contains_subgraph(&tri, &path).unwrap().is_some());
        assert!(subgraph_matches(&tri, &path, MatchMode::Induced, 1)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn enumerates_automorphisms() {
        let bz = parse_smiles("c1ccccc1").unwrap();
        let all = subgraph_matches(&bz, &bz, MatchMode::Induced, 100).unwrap();
        assert_eq!(all.len(), 12);
    }

    #[test]
    fn size_limit() {
        let big = parse_smiles(&"C".repeat(61)).unwrap();
        let c = parse_smiles("C").unwrap();
        assert!(matches!(
            contains_subgraph(&big, &c),
            Err(Error::Resource(_))
        ));
    }
}
