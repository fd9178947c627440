//! Random-forest classifier over fingerprint bits.
//!
//! Each tree is grown on a stratified bootstrap. At every node the candidate
//! bits are the ones that vary within the node; `⌈√width⌉` of them are drawn
//! at random and the split with the lowest weighted Gini impurity wins.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chemgraph::{parse_smiles, MolGraph};
use crate::error::{Error, Result};
use crate::fingerprint::{morgan_fingerprint, BitFingerprint, DEFAULT_RADIUS, DEFAULT_WIDTH};
use crate::hashing::derive_seed;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub fp_radius: usize,
    pub fp_width: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 12,
            seed: 0,
            fp_radius: DEFAULT_RADIUS,
            fp_width: DEFAULT_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum Node {
    Split {
        bit: usize,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Nodes in creation order; the root is node 0. `left` is taken when the bit
/// is off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, fp: &BitFingerprint) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split { bit, left, right } => {
                    k = if fp.get(bit) { right } else { left };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, k: usize) -> usize {
            match t.nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub version: u32,
    pub params: ForestParams,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn fingerprint(&self, g: &MolGraph) -> BitFingerprint {
        morgan_fingerprint(g, self.params.fp_radius, self.params.fp_width)
            .expect("parameters validated at training time")
    }

    pub fn predict_fp(&self, fp: &BitFingerprint) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.trees.iter().map(|t| t.leaf_value(fp)).sum();
        (sum / self.trees.len() as f64).clamp(0.0, 1.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(s: &str) -> Result<ForestModel> {
        let m: ForestModel = serde_json::from_str(s)?;
        if m.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "forest checkpoint version {} (expected {CHECKPOINT_VERSION})",
                m.version
            )));
        }
        for t in &m.trees {
            for n in &t.nodes {
                match *n {
                    Node::Split { bit, left, right } => {
                        if bit >= m.params.fp_width
                            || left >= t.nodes.len()
                            || right >= t.nodes.len()
                        {
                            return Err(Error::Format("corrupt split node".into()));
                        }
                    }
                    Node::Leaf { value } => {
                        if !(0.0..=1.0).contains(&value) {
                            return Err(Error::Format(format!("leaf value {value} outside [0,1]")));
                        }
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ForestModel> {
        ForestModel::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn predict_score(m: &ForestModel, g: &MolGraph) -> f64 {
    m.predict_fp(&m.fingerprint(g))
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Grower<'a> {
    fps: &'a [BitFingerprint],
    labels: &'a [bool],
    width: usize,
    mtry: usize,
    max_depth: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf(&mut self, pos: usize, n: usize) -> usize {
        self.nodes.push(Node::Leaf {
            value: pos as f64 / n as f64,
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, samples: &[usize], depth: usize) -> usize {
        let n = samples.len();
        let pos = samples.iter().filter(|&&i| self.labels[i]).count();
        if pos == 0 || pos == n || depth >= self.max_depth || n < 2 {
            return self.leaf(pos, n);
        }
        // Per-bit totals and positive counts over the node's samples.
        let mut on = vec![0u32; self.width];
        let mut on_pos = vec![0u32; self.width];
        let mut touched: Vec<usize> = Vec::new();
        for &i in samples {
            for (w, &word) in self.fps[i].words().iter().enumerate() {
                let mut x = word;
                while x != 0 {
                    let bit = w * 64 + x.trailing_zeros() as usize;
                    x &= x - 1;
                    if on[bit] == 0 {
                        touched.push(bit);
                    }
                    on[bit] += 1;
                    if self.labels[i] {
                        on_pos[bit] += 1;
                    }
                }
            }
        }
        touched.sort_unstable();
        let mut varying: Vec<usize> = touched
            .into_iter()
            .filter(|&b| (on[b] as usize) < n)
            .collect();
        if varying.is_empty() {
            return self.leaf(pos, n);
        }
        let take = self.mtry.min(varying.len());
        let (chosen, _) = varying.partial_shuffle(&mut self.rng, take);
        let parent = gini(pos, n);
        let mut best: Option<(f64, usize)> = None;
        for &b in chosen.iter() {
            let (n_r, p_r) = (on[b] as usize, on_pos[b] as usize);
            let (n_l, p_l) = (n - n_r, pos - p_r);
            let imp = (n_l as f64 * gini(p_l, n_l) + n_r as f64 * gini(p_r, n_r)) / n as f64;
            if best.is_none_or(|(bi, _)| imp < bi) {
                best = Some((imp, b));
            }
        }
        let (imp, bit) = best.expect("at least one candidate");
        if imp >= parent - 1e-12 {
            return self.leaf(pos, n);
        }
        let (right, left): (Vec<usize>, Vec<usize>) =
            samples.iter().partition(|&&i| self.fps[i].get(bit));
        let k = self.nodes.len();
        self.nodes.push(Node::Split {
            bit,
            left: 0,
            right: 0,
        });
        let l = self.grow(&left, depth + 1);
        let r = self.grow(&right, depth + 1);
        self.nodes[k] = Node::Split {
            bit,
            left: l,
            right: r,
        };
        k
    }
}

fn stratified_bootstrap(labels: &[bool], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let mut out = Vec::with_capacity(labels.len());
    for class in [&pos, &neg] {
        for _ in 0..class.len() {
            out.push(class[rng.random_range(0..class.len())]);
        }
    }
    out
}

/// Trains on precomputed fingerprints; all must share `params.fp_width`.
pub fn train_forest_fps(
    fps: &[BitFingerprint],
    labels: &[bool],
    params: &ForestParams,
) -> Result<ForestModel> {
    if fps.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} fingerprints but {} labels",
            fps.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if fps.len() < 2 || pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass);
    }
    if params.n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be positive".into()));
    }
    if let Some(fp) = fps.iter().find(|f| f.width() != params.fp_width) {
        return Err(Error::WidthMismatch(fp.width(), params.fp_width));
    }
    let width = params.fp_width;
    let mtry = ((width as f64).sqrt().ceil() as usize).max(1);
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, &[t as u64]));
            let samples = stratified_bootstrap(labels, &mut rng);
            let mut g = Grower {
                fps,
                labels,
                width,
                mtry,
                max_depth: params.max_depth,
                rng,
                nodes: Vec::new(),
            };
            g.grow(&samples, 0);
            Tree { nodes: g.nodes }
        })
        .collect();
    Ok(ForestModel {
        version: CHECKPOINT_VERSION,
        params: *params,
        trees,
    })
}

pub fn train_forest(data: &[(MolGraph, bool)], params: &ForestParams) -> Result<ForestModel> {
    let fps: Vec<BitFingerprint> = data
        .par_iter()
        .map(|(g, _)| morgan_fingerprint(g, params.fp_radius, params.fp_width))
        .collect::<Result<_>>()?;
    let labels: Vec<bool> = data.iter().map(|&(_, l)| l).collect();
    train_forest_fps(&fps, &labels, params)
}

/// Rank-based AUROC with midranks for ties.
pub fn auroc_scores(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 || scores.len() != labels.len() {
        return Err(Error::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

pub fn auroc(m: &ForestModel, data: &[(MolGraph, bool)]) -> Result<f64> {
    let scores: Vec<f64> = data.par_iter().map(|(g, _)| predict_score(m, g)).collect();
    let labels: Vec<bool> = data.iter().map(|&(_, l)| l).collect();
    auroc_scores(&scores, &labels)
}

/// A scored property with a positive threshold.
pub trait Property: Sync {
    fn name(&self) -> &str;
    fn threshold(&self) -> f64;
    fn score(&self, g: &MolGraph) -> f64;
    fn passes(&self, g: &MolGraph) -> bool {
        self.score(g) >= self.threshold()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertySpec {
    pub name: String,
    pub threshold: f64,
    pub predictor: ForestModel,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

impl PropertySpec {
    pub fn new(name: impl Into<String>, threshold: f64, predictor: ForestModel) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidArgument(format!(
                "threshold {threshold} outside [0,1]"
            )));
        }
        Ok(PropertySpec {
            name: name.into(),
            threshold,
            predictor,
        })
    }
}

impl Property for PropertySpec {
    fn name(&self) -> &str {
        &self.name
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn score(&self, g: &MolGraph) -> f64 {
        predict_score(&self.predictor, g)
    }
}

/// Rows of a labeled CSV: header `smiles,<prop1>,<prop2>,...` with 0/1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub properties: Vec<String>,
    pub smiles: Vec<String>,
    pub molecules: Vec<MolGraph>,
    /// `labels[row][property]`
    pub labels: Vec<Vec<bool>>,
}

impl LabeledSet {
    pub fn column(&self, p: usize) -> Vec<(MolGraph, bool)> {
        self.molecules
            .iter()
            .cloned()
            .zip(self.labels.iter().map(|l| l[p]))
            .collect()
    }

    pub fn property_index(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p == name)
    }
}

pub fn read_labeled_csv<R: Read>(reader: R) -> Result<LabeledSet> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .clone();
    if header.len() < 2 || &header[0] != "smiles" {
        return Err(Error::Format(
            "expected header `smiles,label[,label2,...]`".into(),
        ));
    }
    let properties: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut set = LabeledSet {
        properties,
        smiles: Vec::new(),
        molecules: Vec::new(),
        labels: Vec::new(),
    };
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("row {}: {e}", row + 2)))?;
        let g =
            parse_smiles(&rec[0]).map_err(|e| Error::Format(format!("row {}: {e}", row + 2)))?;
        let labels = rec
            .iter()
            .skip(1)
            .map(|v| match v.trim() {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(Error::Format(format!(
                    "row {}: label `{other}` is not 0/1",
                    row + 2
                ))),
            })
            .collect::<Result<Vec<bool>>>()?;
        set.smiles.push(rec[0].to_string());
        set.molecules.push(g);
        set.labels.push(labels);
    }
    Ok(set)
}

pub fn load_labeled_csv(path: &Path) -> Result<LabeledSet> {
    read_labeled_csv(std::fs::File::open(path)?)
}
