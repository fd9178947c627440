//! SMILES subset reader and writer.
//!
//! Supported: organic-subset atoms (C N O S P F Cl Br I and aromatic
//! c n o s p), bracket atoms with optional hydrogen count and charge,
//! branches, ring closures (`1`..`9`, `%nn`), bond symbols `- = # :` and the
//! fragment separator `.`. Stereo markers and isotopes are rejected.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Atom, Bond, BondOrder, Element, MolGraph};
use crate::error::{Error, Result};

fn perr<T>(pos: usize, cause: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        pos,
        cause: cause.into(),
    })
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    atom_pos: Vec<usize>,
    bonds: Vec<Bond>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn parse_bracket(&mut self) -> Result<Atom> {
        let open = self.pos;
        self.pos += 1;
        if matches!(self.peek(), Some(b'0'..=b'9')) {
            return perr(self.pos, "isotopes are not supported");
        }
        let (element, aromatic) = match self.peek() {
            Some(c @ b'A'..=b'Z') => {
                self.pos += 1;
                let mut sym = String::from(c as char);
                if let Some(l @ b'a'..=b'z') = self.peek() {
                    let two = format!("{}{}", c as char, l as char);
                    if Element::from_symbol(&two).is_some() {
                        sym = two;
                        self.pos += 1;
                    }
                }
                match Element::from_symbol(&sym) {
                    Some(e) => (e, false),
                    None => return perr(self.pos - sym.len(), format!("unknown element '{sym}'")),
                }
            }
            Some(c @ b'a'..=b'z') => {
                self.pos += 1;
                match aromatic_symbol(c) {
                    Some(e) => (e, true),
                    None => return perr(self.pos - 1, format!("unknown element '{}'", c as char)),
                }
            }
            _ => return perr(self.pos, "expected element symbol in bracket atom"),
        };
        let mut charge: i32 = 0;
        loop {
            match self.peek() {
                Some(b'@') => return perr(self.pos, "stereo markers are not supported"),
                Some(b'H') => {
                    self.pos += 1;
                    while matches!(self.peek(), Some(b'0'..=b'9')) {
                        self.pos += 1;
                    }
                }
                Some(sign @ (b'+' | b'-')) => {
                    let unit = if sign == b'+' { 1 } else { -1 };
                    self.pos += 1;
                    if let Some(d @ b'0'..=b'9') = self.peek() {
                        self.pos += 1;
                        charge += unit * (d - b'0') as i32;
                    } else {
                        charge += unit;
                        while self.peek() == Some(sign) {
                            self.pos += 1;
                            charge += unit;
                        }
                    }
                }
                Some(b']') => {
                    self.pos += 1;
                    break;
                }
                Some(c) => {
                    return perr(
                        self.pos,
                        format!("unexpected '{}' in bracket atom", c as char),
                    )
                }
                None => return perr(open, "unterminated bracket atom"),
            }
        }
        if !(-4..=4).contains(&charge) {
            return perr(open, format!("charge {charge} out of range"));
        }
        Ok(Atom {
            element,
            charge: charge as i8,
            aromatic,
        })
    }

    fn parse_organic(&mut self) -> Result<Atom> {
        let c = self.peek().expect("caller checked");
        let start = self.pos;
        self.pos += 1;
        let atom = match c {
            b'C' if self.peek() == Some(b'l') => {
                self.pos += 1;
                Atom::new(Element::Cl)
            }
            b'B' if self.peek() == Some(b'r') => {
                self.pos += 1;
                Atom::new(Element::Br)
            }
            b'C' => Atom::new(Element::C),
            b'N' => Atom::new(Element::N),
            b'O' => Atom::new(Element::O),
            b'S' => Atom::new(Element::S),
            b'P' => Atom::new(Element::P),
            b'F' => Atom::new(Element::F),
            b'I' => Atom::new(Element::I),
            c if c.is_ascii_lowercase() => match aromatic_symbol(c) {
                Some(e) => Atom::aromatic(e),
                None => return perr(start, format!("unknown element '{}'", c as char)),
            },
            c => return perr(start, format!("unknown element '{}'", c as char)),
        };
        Ok(atom)
    }

    fn add_bond(&mut self, a: usize, b: usize, order: Option<BondOrder>, pos: usize) -> Result<()> {
        if a == b {
            return perr(pos, "ring closure bonds an atom to itself");
        }
        let order = order.unwrap_or_else(|| {
            if self.atoms[a].aromatic && self.atoms[b].aromatic {
                BondOrder::Aromatic
            } else {
                BondOrder::Single
            }
        });
        if self
            .bonds
            .iter()
            .any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a))
        {
            return perr(pos, format!("duplicate bond between atoms {a} and {b}"));
        }
        self.bonds.push(Bond::new(a, b, order));
        Ok(())
    }

    fn run(mut self) -> Result<MolGraph> {
        if self.text.is_empty() {
            return perr(0, "empty SMILES");
        }
        let mut prev: Option<usize> = None;
        let mut pending: Option<(BondOrder, usize)> = None;
        let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
        let mut rings: BTreeMap<u32, (usize, Option<BondOrder>, usize)> = BTreeMap::new();
        let mut after_dot = false;

        while let Some(c) = self.peek() {
            let here = self.pos;
            match c {
                b'[' | b'A'..=b'Z' | b'a'..=b'z' => {
                    let atom = if c == b'[' {
                        self.parse_bracket()?
                    } else {
                        self.parse_organic()?
                    };
                    if atom.aromatic && !atom.element.can_be_aromatic() {
                        return perr(here, format!("{} cannot be aromatic", atom.element));
                    }
                    let idx = self.atoms.len();
                    self.atoms.push(atom);
                    self.atom_pos.push(here);
                    if let Some(p) = prev {
                        let order = pending.take().map(|(o, _)| o);
                        self.add_bond(p, idx, order, here)?;
                    } else if let Some((_, bpos)) = pending {
                        return perr(bpos, "bond symbol without a preceding atom");
                    }
                    prev = Some(idx);
                    after_dot = false;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if pending.is_some() {
                        return perr(here, "two consecutive bond symbols");
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    pending = Some((order, here));
                    self.pos += 1;
                }
                b'/' | b'\\' => return perr(here, "stereo bond markers are not supported"),
                b'(' => {
                    if prev.is_none() {
                        return perr(here, "branch without a preceding atom");
                    }
                    if pending.is_some() {
                        return perr(here, "bond symbol before '('");
                    }
                    branches.push((prev, here));
                    self.pos += 1;
                }
                b')' => {
                    if pending.is_some() {
                        return perr(here, "dangling bond symbol before ')'");
                    }
                    match branches.pop() {
                        Some((p, _)) => prev = p,
                        None => return perr(here, "unbalanced parenthesis: unexpected ')'"),
                    }
                    self.pos += 1;
                }
                b'.' => {
                    if pending.is_some() || prev.is_none() {
                        return perr(here, "misplaced '.'");
                    }
                    if !branches.is_empty() {
                        return perr(here, "'.' inside a branch");
                    }
                    prev = None;
                    after_dot = true;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let number = if c == b'%' {
                        let digits = self.text.get(self.pos + 1..self.pos + 3);
                        match digits {
                            Some(d) if d.iter().all(u8::is_ascii_digit) => {
                                self.pos += 3;
                                ((d[0] - b'0') * 10 + (d[1] - b'0')) as u32
                            }
                            _ => return perr(here, "'%' must be followed by two digits"),
                        }
                    } else {
                        self.pos += 1;
                        (c - b'0') as u32
                    };
                    let Some(atom) = prev else {
                        return perr(here, "ring closure without a preceding atom");
                    };
                    let order = pending.take().map(|(o, _)| o);
                    match rings.remove(&number) {
                        Some((other, other_order, _)) => {
                            let order = match (order, other_order) {
                                (Some(a), Some(b)) if a != b => {
                                    return perr(
                                        here,
                                        format!(
                                            "conflicting bond symbols on ring closure {number}"
                                        ),
                                    )
                                }
                                (a, b) => a.or(b),
                            };
                            self.add_bond(other, atom, order, here)?;
                        }
                        None => {
                            rings.insert(number, (atom, order, here));
                        }
                    }
                }
                b'@' => return perr(here, "stereo markers are not supported"),
                c => return perr(here, format!("unexpected character '{}'", c as char)),
            }
        }
        if let Some((_, bpos)) = pending {
            return perr(bpos, "dangling bond symbol at end of input");
        }
        if after_dot {
            return perr(self.text.len(), "trailing '.'");
        }
        if let Some((_, open)) = branches.pop() {
            return perr(open, "unbalanced parenthesis: '(' never closed");
        }
        if let Some((&number, &(_, _, pos))) = rings.iter().next() {
            return perr(pos, format!("unclosed ring closure {number}"));
        }
        let atom_pos = std::mem::take(&mut self.atom_pos);
        let g = MolGraph::build(self.atoms, self.bonds).map_err(|e| Error::Parse {
            pos: 0,
            cause: e.to_string(),
        })?;
        if let Err(Error::Valence {
            atom,
            element,
            sum,
            max,
        }) = g.check_valence()
        {
            return perr(
                atom_pos[atom],
                format!("valence violation on {element} (bond order sum {sum} > {max})"),
            );
        }
        Ok(g)
    }
}

fn aromatic_symbol(c: u8) -> Option<Element> {
    match c {
        b'c' => Some(Element::C),
        b'n' => Some(Element::N),
        b'o' => Some(Element::O),
        b's' => Some(Element::S),
        b'p' => Some(Element::P),
        _ => None,
    }
}

/// Parses one molecule (possibly several `.`-separated fragments).
pub fn parse_smiles(text: &str) -> Result<MolGraph> {
    let text = text.trim();
    Parser {
        text: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        atom_pos: Vec::new(),
        bonds: Vec::new(),
    }
    .run()
}

fn atom_token(a: &Atom) -> String {
    let sym = if a.aromatic {
        a.element.symbol().to_ascii_lowercase()
    } else {
        a.element.symbol().to_string()
    };
    if a.charge == 0 {
        return sym;
    }
    let charge = match a.charge {
        1 => "+".to_string(),
        -1 => "-".to_string(),
        c if c > 0 => format!("+{c}"),
        c => format!("-{}", -c),
    };
    format!("[{sym}{charge}]")
}

fn bond_token(g: &MolGraph, a: usize, b: usize, order: BondOrder) -> &'static str {
    let both_aromatic = g.atom(a).aromatic && g.atom(b).aromatic;
    match order {
        BondOrder::Single if both_aromatic => "-",
        BondOrder::Single => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic if both_aromatic => "",
        BondOrder::Aromatic => ":",
    }
}

struct Layout {
    children: Vec<Vec<usize>>,
    /// Per atom: ring-closure bonds opened here, as (partner, bond index).
    opens: Vec<Vec<(usize, usize)>>,
    /// Per atom: ring-closure bonds closed here, as (partner, bond index).
    closes: Vec<Vec<(usize, usize)>>,
    roots: Vec<usize>,
    order: Vec<usize>,
}

fn layout(g: &MolGraph, rank: &[usize]) -> Layout {
    let n = g.atom_count();
    let sorted_nbrs: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|u| {
            let mut v = g.neighbors(u).to_vec();
            v.sort_by_key(|&(nb, _)| rank[nb]);
            v
        })
        .collect();
    let mut visited = vec![false; n];
    let mut bond_done = vec![false; g.bond_count()];
    let mut lay = Layout {
        children: vec![Vec::new(); n],
        opens: vec![Vec::new(); n],
        closes: vec![Vec::new(); n],
        roots: Vec::new(),
        order: Vec::with_capacity(n),
    };
    let mut by_rank: Vec<usize> = (0..n).collect();
    by_rank.sort_by_key(|&i| rank[i]);
    for &root in &by_rank {
        if visited[root] {
            continue;
        }
        lay.roots.push(root);
        // Iterative DFS: (atom, next neighbor cursor).
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        visited[root] = true;
        lay.order.push(root);
        while let Some(&mut (u, ref mut cursor)) = stack.last_mut() {
            if *cursor >= sorted_nbrs[u].len() {
                stack.pop();
                continue;
            }
            let (v, bond) = sorted_nbrs[u][*cursor];
            *cursor += 1;
            if bond_done[bond] {
                continue;
            }
            bond_done[bond] = true;
            if visited[v] {
                lay.opens[v].push((u, bond));
                lay.closes[u].push((v, bond));
            } else {
                visited[v] = true;
                lay.children[u].push(v);
                lay.order.push(v);
                stack.push((v, 0));
            }
        }
    }
    lay
}

struct Writer<'a> {
    g: &'a MolGraph,
    lay: &'a Layout,
    out: String,
    digit_of_bond: BTreeMap<usize, u32>,
    free: Vec<bool>,
}

impl Writer<'_> {
    fn alloc_digit(&mut self) -> u32 {
        let d = (1..self.free.len())
            .find(|&d| self.free[d])
            .expect("fewer than 99 simultaneous ring closures");
        self.free[d] = false;
        d as u32
    }

    fn push_digit(&mut self, d: u32) {
        if d < 10 {
            self.out.push(char::from(b'0' + d as u8));
        } else {
            self.out.push_str(&format!("%{d:02}"));
        }
    }

    fn write_atom(&mut self, u: usize) {
        self.out.push_str(&atom_token(self.g.atom(u)));
        let mut released = Vec::new();
        for &(_, bond) in &self.lay.closes[u] {
            let d = self.digit_of_bond[&bond];
            self.push_digit(d);
            released.push(d);
        }
        for &(partner, bond) in &self.lay.opens[u] {
            let d = self.alloc_digit();
            self.digit_of_bond.insert(bond, d);
            let order = self.g.bond(bond).order;
            self.out.push_str(bond_token(self.g, u, partner, order));
            self.push_digit(d);
        }
        for d in released {
            self.free[d as usize] = true;
        }
        let kids = &self.lay.children[u];
        for (k, &v) in kids.iter().enumerate() {
            let last = k + 1 == kids.len();
            if !last {
                self.out.push('(');
            }
            let order = self.g.order_between(u, v).expect("tree edge");
            self.out.push_str(bond_token(self.g, u, v, order));
            self.write_atom(v);
            if !last {
                self.out.push(')');
            }
        }
    }
}

/// Writes SMILES visiting atoms by ascending `rank` (lowest-ranked atom of
/// each fragment starts it; neighbors explored in rank order). Returns the
/// string and the output atom order: parsing the string yields atom `k` =
/// original atom `order[k]`.
pub fn write_smiles_ordered(g: &MolGraph, rank: &[usize]) -> (String, Vec<usize>) {
    assert_eq!(rank.len(), g.atom_count());
    let lay = layout(g, rank);
    let mut w = Writer {
        g,
        lay: &lay,
        out: String::new(),
        digit_of_bond: BTreeMap::new(),
        free: vec![true; 100],
    };
    for (i, &root) in lay.roots.iter().enumerate() {
        if i > 0 {
            w.out.push('.');
        }
        w.write_atom(root);
    }
    let out = w.out;
    (out, lay.order)
}

pub fn write_smiles(g: &MolGraph) -> String {
    let rank: Vec<usize> = (0..g.atom_count()).collect();
    write_smiles_ordered(g, &rank).0
}

/// A random valid rendering of the same molecule.
pub fn write_smiles_random<R: Rng + ?Sized>(g: &MolGraph, rng: &mut R) -> String {
    let mut rank: Vec<usize> = (0..g.atom_count()).collect();
    rank.shuffle(rng);
    write_smiles_ordered(g, &rank).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemgraph::canonical_key;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reads_simple_chain() {
        let g = parse_smiles("CCO").unwrap();
        assert_eq!(g.atom_count(), 3);
        assert_eq!(g.bond_count(), 2);
        assert!(g.bonds().iter().all(|b| b.order == BondOrder::Single));
        assert_eq!(g.atom(2).element, Element::O);
    }

    #[test]
    fn reads_cyclopropane() {
        let g = parse_smiles("C1CC1").unwrap();
        assert_eq!((g.atom_count(), g.bond_count()), (3, 3));
        assert_eq!(g.rings().len(), 1);
    }

    #[test]
    fn unclosed_ring_is_an_error() {
        let err = parse_smiles("C1CC").unwrap_err();
        match err {
            Error::Parse { pos, cause } => {
                assert_eq!(pos, 1);
                assert!(cause.contains("unclosed ring closure 1"), "{cause}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn grammar_errors() {
        for bad in [
            "C(C",
            "CC)",
            "Xe",
            "[Xe]",
            "C=",
            "=C",
            "[13C]",
            "C[C@H](O)N",
            "F/C=C/F",
            "C..C",
            "",
            "C(=)C",
            "C%1",
            "FCl(C)",
        ] {
            assert!(parse_smiles(bad).is_err(), "{bad} should fail");
        }
        let err = parse_smiles("CC(C)(C)(C)C").unwrap_err();
        assert!(matches!(err, Error::Parse { pos: 1, .. }), "{err}");
    }

    #[test]
    fn brackets_and_bonds() {
        let g = parse_smiles("C[N+](C)(C)C.[O-]C(=O)C#N").unwrap();
        assert_eq!(g.atom(1).charge, 1);
        assert_eq!(g.atom(5).charge, -1);
        assert_eq!(g.order_between(6, 7), Some(BondOrder::Double));
        assert_eq!(g.order_between(8, 9), Some(BondOrder::Triple));
        let pyrrole = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(pyrrole.atom_count(), 5);
        assert!(pyrrole.atoms().iter().all(|a| a.aromatic));
        let big = parse_smiles("C%12CC%12").unwrap();
        assert_eq!(big.bond_count(), 3);
    }

    #[test]
    fn aromatic_implicit_bonds() {
        let g = parse_smiles("c1ccccc1-c1ccccc1").unwrap();
        let singles = g
            .bonds()
            .iter()
            .filter(|b| b.order == BondOrder::Single)
            .count();
        assert_eq!(singles, 1);
        let written = write_smiles(&g);
        assert_eq!(
            canonical_key(&parse_smiles(&written).unwrap()),
            canonical_key(&g)
        );
    }

    #[test]
    fn writes_single_atom_and_rings() {
        let c = parse_smiles("C").unwrap();
        assert_eq!(write_smiles(&c), "C");
        let cp = parse_smiles("C1CC1").unwrap();
        let again = parse_smiles(&write_smiles(&cp)).unwrap();
        assert_eq!(again.rings().len(), 1);
        assert_eq!(again.rings()[0].atoms.len(), 3);
        let bz = parse_smiles("c1ccccc1").unwrap();
        let again = parse_smiles(&write_smiles(&bz)).unwrap();
        assert_eq!(again.atom_count(), 6);
        assert!(again.atoms().iter().all(|a| a.aromatic));
    }

    #[test]
    fn ordered_writer_reports_parse_order() {
        let g = parse_smiles("OCC(N)C1CC1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let mut rank: Vec<usize> = (0..g.atom_count()).collect();
            rank.shuffle(&mut rng);
            let (s, order) = write_smiles_ordered(&g, &rank);
            let h = parse_smiles(&s).unwrap();
            for (k, &orig) in order.iter().enumerate() {
                assert_eq!(h.atom(k), g.atom(orig));
            }
            for b in h.bonds() {
                assert_eq!(
                    g.order_between(order[b.a], order[b.b]),
                    Some(b.order),
                    "{s}"
                );
            }
            assert_eq!(h.bond_count(), g.bond_count());
        }
    }
}
