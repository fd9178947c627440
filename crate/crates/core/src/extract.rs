//! Rationale extraction by Monte Carlo tree search over peripheral deletions.
//!
//! States are connected subgraphs of the input molecule; actions are the
//! legal deletions of [`peripheral_deletions`]. Isomorphic states reached
//! along different paths share one node.

use std::collections::{BTreeMap, HashMap};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chemgraph::{
    apply_deletion_mapped, canonical_key, peripheral_deletions, Deletion, MolGraph,
};
use crate::error::{Error, Result};
use crate::forest::Property;
use crate::rationale::{peripheral_atoms, Rationale, RationaleVocab};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeStats {
    pub n: u32,
    pub w: f64,
    pub r: f64,
}

impl EdgeStats {
    pub fn with_prior(r: f64) -> EdgeStats {
        EdgeStats { n: 0, w: 0.0, r }
    }

    pub fn q(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.w / self.n as f64
        }
    }

    pub fn u(&self, c_puct: f64, total_n: u32) -> f64 {
        c_puct * self.r * (total_n as f64).sqrt() / (1.0 + self.n as f64)
    }
}

/// Index of the child maximizing `Q + U`; ties go to higher `R`, then to the
/// lowest index.
pub fn select_action(children: &[EdgeStats], c_puct: f64) -> Result<usize> {
    if children.is_empty() {
        return Err(Error::NoLegalAction);
    }
    let total: u32 = children.iter().map(|c| c.n).sum();
    let mut best = 0;
    let mut best_v = children[0].q() + children[0].u(c_puct, total);
    for (i, c) in children.iter().enumerate().skip(1) {
        let v = c.q() + c.u(c_puct, total);
        if v > best_v || (v == best_v && c.r > children[best].r) {
            best = i;
            best_v = v;
        }
    }
    Ok(best)
}

/// Adds one visit and `reward` to every edge on the path.
pub fn backup<'a, I: IntoIterator<Item = &'a mut EdgeStats>>(path: I, reward: f64) {
    for e in path {
        e.n += 1;
        e.w += reward;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractParams {
    pub iterations: usize,
    pub c_puct: f64,
    /// Largest rationale kept (N_s).
    pub max_atoms: usize,
    /// Rollouts stop at states with fewer atoms than this.
    pub rollout_floor: usize,
}

impl Default for ExtractParams {
    fn default() -> Self {
        ExtractParams {
            iterations: 20,
            c_puct: 10.0,
            max_atoms: 20,
            rollout_floor: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchNode {
    pub graph: MolGraph,
    pub key: String,
    /// Index in the root molecule of each state atom.
    pub source_map: Vec<usize>,
    pub score: f64,
    pub actions: Vec<Deletion>,
    pub stats: Vec<EdgeStats>,
    /// Child node ids, filled on first expansion.
    pub children: Vec<usize>,
    /// Rollouts that selected an action here.
    pub passes: u32,
}

impl SearchNode {
    pub fn expanded(&self) -> bool {
        !self.actions.is_empty() && self.children.len() == self.actions.len()
    }
}

pub struct SearchTree<'p, P: Property + ?Sized> {
    prop: &'p P,
    params: ExtractParams,
    pub nodes: Vec<SearchNode>,
    index: HashMap<String, usize>,
}

impl<'p, P: Property + ?Sized> SearchTree<'p, P> {
    pub fn new(root: &MolGraph, prop: &'p P, params: ExtractParams) -> Result<Self> {
        if !root.is_connected() {
            return Err(Error::Disconnected);
        }
        let mut t = SearchTree {
            prop,
            params,
            nodes: Vec::new(),
            index: HashMap::new(),
        };
        t.intern(root.clone(), (0..root.atom_count()).collect())?;
        Ok(t)
    }

    fn intern(&mut self, graph: MolGraph, source_map: Vec<usize>) -> Result<usize> {
        let key = canonical_key(&graph);
        if let Some(&id) = self.index.get(&key) {
            return Ok(id);
        }
        let actions = peripheral_deletions(&graph)?;
        let score = self.prop.score(&graph);
        let id = self.nodes.len();
        self.index.insert(key.clone(), id);
        self.nodes.push(SearchNode {
            graph,
            key,
            source_map,
            score,
            actions,
            stats: Vec::new(),
            children: Vec::new(),
            passes: 0,
        });
        Ok(id)
    }

    fn is_leaf(&self, id: usize) -> bool {
        let n = &self.nodes[id];
        n.graph.atom_count() < self.params.rollout_floor || n.actions.is_empty()
    }

    fn expand(&mut self, id: usize) -> Result<()> {
        if self.nodes[id].expanded() {
            return Ok(());
        }
        let mut children = Vec::with_capacity(self.nodes[id].actions.len());
        for k in 0..self.nodes[id].actions.len() {
            let node = &self.nodes[id];
            let (child, map) = apply_deletion_mapped(&node.graph, &node.actions[k])?;
            let source: Vec<usize> = map.iter().map(|&i| node.source_map[i]).collect();
            children.push(self.intern(child, source)?);
        }
        let stats = children
            .iter()
            .map(|&c| EdgeStats::with_prior(self.nodes[c].score))
            .collect();
        let node = &mut self.nodes[id];
        node.children = children;
        node.stats = stats;
        Ok(())
    }

    /// One root-to-leaf rollout; returns the leaf reward.
    pub fn rollout(&mut self) -> Result<f64> {
        let mut path: Vec<(usize, usize)> = Vec::new();
        let mut cur = 0;
        while !self.is_leaf(cur) {
            self.expand(cur)?;
            let a = select_action(&self.nodes[cur].stats, self.params.c_puct)?;
            self.nodes[cur].passes += 1;
            path.push((cur, a));
            cur = self.nodes[cur].children[a];
            if path.len() > self.nodes[0].graph.atom_count() {
                return Err(Error::InvalidGraph("deletion path did not shrink".into()));
            }
        }
        let reward = self.nodes[cur].score;
        for &(id, a) in &path {
            backup(std::iter::once(&mut self.nodes[id].stats[a]), reward);
        }
        Ok(reward)
    }

    pub fn run(&mut self) -> Result<()> {
        for _ in 0..self.params.iterations {
            self.rollout()?;
        }
        Ok(())
    }

    /// Every evaluated state within the size bound scoring at least the
    /// threshold, in discovery order.
    pub fn rationales(&self, source: &MolGraph) -> Result<Vec<Rationale>> {
        let source_key = canonical_key(source);
        self.nodes
            .iter()
            .filter(|n| {
                n.graph.atom_count() <= self.params.max_atoms && n.score >= self.prop.threshold()
            })
            .map(|n| {
                let peripheral = peripheral_atoms(&n.graph, &n.source_map, source);
                let scores = BTreeMap::from([(self.prop.name().to_string(), n.score)]);
                Rationale::new(
                    n.graph.clone(),
                    &peripheral,
                    scores,
                    source_key.clone(),
                    n.source_map.clone(),
                )
            })
            .collect()
    }
}

pub fn extract_rationales<P: Property + ?Sized>(
    g: &MolGraph,
    prop: &P,
    params: &ExtractParams,
) -> Result<Vec<Rationale>> {
    let mut tree = SearchTree::new(g, prop, *params)?;
    tree.run()?;
    tree.rationales(g)
}

/// Smallest rationale, then highest score, then smallest key.
pub fn best_rationale<'a>(rationales: &'a [Rationale], prop_name: &str) -> Option<&'a Rationale> {
    rationales.iter().min_by(|a, b| {
        let sa = a.scores.get(prop_name).copied().unwrap_or(0.0);
        let sb = b.scores.get(prop_name).copied().unwrap_or(0.0);
        a.atom_count()
            .cmp(&b.atom_count())
            .then(sb.total_cmp(&sa))
            .then_with(|| a.key().cmp(&b.key()))
    })
}

/// Union of per-molecule rationales, deduplicated. Returns the vocabulary and
/// the number of inputs skipped for scoring below threshold.
pub fn build_vocab<P: Property + ?Sized>(
    positives: &[MolGraph],
    prop: &P,
    params: &ExtractParams,
) -> Result<(RationaleVocab, usize)> {
    if positives.is_empty() {
        return Err(Error::Empty("no positive molecules".into()));
    }
    let per_mol: Vec<Option<Vec<Rationale>>> = positives
        .par_iter()
        .map(|g| {
            if !prop.passes(g) || !g.is_connected() {
                return Ok(None);
            }
            extract_rationales(g, prop, params).map(Some)
        })
        .collect::<Result<_>>()?;
    let skipped = per_mol.iter().filter(|r| r.is_none()).count();
    if skipped > 0 {
        warn!(
            "{skipped} inputs skipped: not predicted positive for {}",
            prop.name()
        );
    }
    let mut vocab = RationaleVocab::new(vec![prop.name().to_string()]);
    for r in per_mol.into_iter().flatten().flatten() {
        vocab.insert(r);
    }
    Ok((vocab, skipped))
}
