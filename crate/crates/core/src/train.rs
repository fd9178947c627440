//! Pre-training on random subgraph pairs, fine-tuning on filtered samples,
//! and the rationale mixture distribution.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::chemgraph::MolGraph;
use crate::error::{Error, Result};
use crate::fingerprint::{default_fingerprint, BitFingerprint};
use crate::forest::Property;
use crate::genmodel::{
    complete_from, replay_on_tape, teacher_decisions, CompleteOptions, GenModel,
};
use crate::hashing::derive_seed;
use crate::metrics::{diversity, is_positive, novelty};
use crate::numsub::{Adam, AdamConfig, Gradients, Tape, Tensor, Var};
use crate::rationale::{peripheral_atoms, RationaleVocab};

const STREAM_PRETRAIN: u64 = 1;
const STREAM_FINETUNE: u64 = 2;
const STREAM_ESTIMATE: u64 = 3;
const STREAM_SAMPLE: u64 = 4;
const STREAM_UPDATE: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Entropy weight of the rationale distribution.
    pub lambda: f64,
    /// Samples per rationale in each fine-tuning iteration.
    pub k: usize,
    /// Fine-tuning iterations.
    pub l: usize,
    /// KL weight during pre-training.
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    /// Largest subgraph in a pre-training pair.
    pub max_subgraph_atoms: usize,
    pub pairs_per_mol: usize,
    /// Completions per rationale when estimating its success rate.
    pub estimate_samples: usize,
    pub max_steps: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.02,
            k: 200,
            l: 50,
            beta: 0.3,
            lr: 1e-3,
            batch_size: 32,
            pretrain_epochs: 10,
            max_subgraph_atoms: 20,
            pairs_per_mol: 1,
            estimate_samples: 20,
            max_steps: 60,
            clip_norm: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if self.k == 0 || self.l == 0 {
            return bad("K and L must be at least 1");
        }
        if self.beta < 0.0 || !(self.lr > 0.0) {
            return bad("beta must be non-negative and the learning rate positive");
        }
        if self.batch_size == 0 || self.max_subgraph_atoms == 0 || self.estimate_samples == 0 {
            return bad("batch size, subgraph size and estimate samples must be positive");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }
}

/// A connected subgraph of `target` with its peripheral atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainPair {
    pub subgraph: MolGraph,
    pub peripheral: Vec<usize>,
    /// Target atom of each subgraph atom.
    pub source_atoms: Vec<usize>,
    pub target: MolGraph,
}

/// Grows a connected subgraph of uniform size in `1..=min(n, |g|)` from a
/// uniform seed atom by uniform frontier expansion.
pub fn random_subgraph<R: Rng + ?Sized>(g: &MolGraph, n: usize, rng: &mut R) -> Vec<usize> {
    let size = rng.random_range(1..=n.min(g.atom_count()));
    let seed = rng.random_range(0..g.atom_count());
    let mut chosen = BTreeSet::from([seed]);
    let mut frontier = BTreeSet::new();
    frontier.extend(g.neighbors(seed).iter().map(|&(w, _)| w));
    while chosen.len() < size && !frontier.is_empty() {
        let k = rng.random_range(0..frontier.len());
        let v = *frontier.iter().nth(k).expect("index in range");
        frontier.remove(&v);
        chosen.insert(v);
        for &(w, _) in g.neighbors(v) {
            if !chosen.contains(&w) {
                frontier.insert(w);
            }
        }
    }
    chosen.into_iter().collect()
}

pub fn make_pretrain_pairs<R: Rng + ?Sized>(
    corpus: &[MolGraph],
    n: usize,
    count_per_mol: usize,
    rng: &mut R,
) -> Result<Vec<PretrainPair>> {
    if corpus.is_empty() {
        return Err(Error::Empty("pre-training corpus".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "subgraph size bound must be positive".into(),
        ));
    }
    let mut out = Vec::with_capacity(corpus.len() * count_per_mol);
    for g in corpus.iter().filter(|g| !g.is_empty()) {
        for _ in 0..count_per_mol {
            let atoms = random_subgraph(g, n, rng);
            let (sub, map) = g.induced_subgraph(&atoms);
            let peripheral = peripheral_atoms(&sub, &map, g);
            out.push(PretrainPair {
                subgraph: sub,
                peripheral,
                source_atoms: map,
                target: g.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub pairs: usize,
}

struct Prepared<'a> {
    pair: &'a PretrainPair,
    decisions: Vec<usize>,
}

/// `z = μ + exp(Σ) ⊙ ε` on the tape.
fn reparameterized(tape: &mut Tape, mu: Var, logvar: Var, eps: Vec<f64>) -> Result<Var> {
    let e = tape.constant(Tensor::row_vector(eps));
    let sd = tape.exp(logvar);
    let noise = tape.mul(sd, e)?;
    tape.add(mu, noise)
}

/// Adds the gradient of one pair's loss into `grads`; returns the
/// reconstruction and KL terms.
fn pair_loss(
    model: &GenModel,
    p: &Prepared,
    beta: f64,
    eps: Vec<f64>,
    grads: &mut Gradients,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new(&model.store);
    let (mu, logvar) = model.encode_on_tape(&mut tape, &p.pair.target)?;
    let z = reparameterized(&mut tape, mu, logvar, eps)?;
    let lp = replay_on_tape(
        &mut tape,
        model,
        &p.pair.subgraph,
        &p.pair.peripheral,
        z,
        &p.decisions,
    )?;
    let recon = tape.scale(lp, -1.0);
    let (loss, kl) = if beta > 0.0 {
        let kl = tape.gaussian_kl(mu, logvar)?;
        let weighted = tape.scale(kl, beta);
        (tape.add(recon, weighted)?, tape.value(kl).item())
    } else {
        (recon, 0.0)
    };
    let r = tape.value(recon).item();
    if !tape.value(loss).item().is_finite() {
        return Err(Error::NonFinite(format!(
            "pre-training loss (reconstruction {r}, KL {kl}) on a {}-atom target",
            p.pair.target.atom_count()
        )));
    }
    tape.backward(loss, grads)?;
    Ok((r, kl))
}

/// Minimizes `−log P(G | S, z) + β·KL` with reparameterized `z`.
pub fn pretrain(
    model: &mut GenModel,
    pairs: &[PretrainPair],
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    let mut prepared = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        match teacher_decisions(&model.vocab, &pair.target, &pair.subgraph, &pair.peripheral) {
            Ok(decisions) => prepared.push(Prepared { pair, decisions }),
            Err(e) => warn!("skipping pre-training pair {i}: {e}"),
        }
    }
    if prepared.is_empty() {
        return Err(Error::Empty("no usable pre-training pairs".into()));
    }
    let mut adam = Adam::new(cfg.adam(), &model.store);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut stats = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_PRETRAIN, epoch as u64]));
        order.shuffle(&mut rng);
        let (mut recon, mut kl) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(&model.store);
            for &i in batch {
                let eps = (0..model.config.latent)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                let (r, k) = pair_loss(model, &prepared[i], cfg.beta, eps, &mut grads)?;
                recon += r;
                kl += k;
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.store, &grads)?;
        }
        let n = prepared.len() as f64;
        stats.push(EpochStats {
            epoch,
            loss: (recon + cfg.beta * kl) / n,
            reconstruction: recon / n,
            kl: kl / n,
            pairs: prepared.len(),
        });
    }
    Ok(stats)
}

/// One fine-tuning iteration's sampling outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub samples: usize,
    pub success: f64,
    pub diversity: Option<f64>,
    pub novelty: Option<f64>,
    /// Size of the fine-tuning set.
    pub kept: usize,
    pub truncated: usize,
}

pub fn write_stats_csv<W: Write>(stats: &[IterationStats], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    out.write_record(["iteration", "success", "diversity", "novelty", "kept"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for s in stats {
        out.write_record([
            s.iteration.to_string(),
            format!("{:.6}", s.success),
            fmt(s.diversity),
            fmt(s.novelty),
            s.kept.to_string(),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

struct Kept {
    rationale: usize,
    z: Vec<f64>,
    decisions: Vec<usize>,
}

/// Latent prior draw and completion for sample `s` of rationale `k`, keyed so
/// results do not depend on evaluation order.
fn draw(
    model: &GenModel,
    vocab: &RationaleVocab,
    k: usize,
    key: &[u64],
    cfg_seed: u64,
    max_steps: usize,
) -> (Vec<f64>, Result<crate::genmodel::Completion>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg_seed, key));
    let z = model.sample_prior(&mut rng);
    let r = &vocab.rationales()[k];
    let opts = CompleteOptions {
        greedy: false,
        max_steps,
    };
    let c = complete_from(model, r.graph(), r.peripheral(), &z, &mut rng, opts);
    (z, c)
}

/// Policy-gradient fine-tuning with indicator rewards: each iteration draws
/// `K` completions per rationale and ascends the log-likelihood of those
/// meeting every constraint.
pub fn finetune<P: Property>(
    model: &mut GenModel,
    vocab: &RationaleVocab,
    props: &[P],
    cfg: &TrainConfig,
    reference: &[BitFingerprint],
) -> Result<Vec<IterationStats>> {
    cfg.validate()?;
    if vocab.is_empty() {
        return Err(Error::Empty("rationale vocabulary".into()));
    }
    let mut adam = Adam::new(cfg.adam(), &model.store);
    let mut stats = Vec::with_capacity(cfg.l);
    let mut empty_run = 0;
    for it in 0..cfg.l {
        let mut kept = Vec::new();
        let mut positives = Vec::new();
        let mut truncated = 0;
        for k in 0..vocab.len() {
            for s in 0..cfg.k {
                let key = [STREAM_FINETUNE, it as u64, k as u64, s as u64];
                let (z, c) = draw(model, vocab, k, &key, cfg.seed, cfg.max_steps);
                match c {
                    Ok(c) => {
                        if is_positive(&c.graph, props) {
                            positives.push(default_fingerprint(&c.graph));
                            kept.push(Kept {
                                rationale: k,
                                z,
                                decisions: c.decisions,
                            });
                        }
                    }
                    Err(Error::Truncated { .. }) => truncated += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        let samples = vocab.len() * cfg.k;
        stats.push(IterationStats {
            iteration: it,
            samples,
            success: kept.len() as f64 / samples as f64,
            diversity: diversity(&positives)?,
            novelty: if positives.is_empty() || reference.is_empty() {
                None
            } else {
                Some(novelty(&positives, reference)?)
            },
            kept: kept.len(),
            truncated,
        });
        if kept.is_empty() {
            empty_run += 1;
            warn!("fine-tuning iteration {it}: no positive samples, update skipped");
            if empty_run >= cfg.l {
                return Err(Error::Empty(format!(
                    "no positive samples in {empty_run} consecutive fine-tuning iterations"
                )));
            }
            continue;
        }
        empty_run = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_UPDATE, it as u64]));
        kept.shuffle(&mut rng);
        for batch in kept.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(&model.store);
            for item in batch {
                let r = &vocab.rationales()[item.rationale];
                let mut tape = Tape::new(&model.store);
                let z = tape.constant(Tensor::row_vector(item.z.clone()));
                let lp = replay_on_tape(
                    &mut tape,
                    model,
                    r.graph(),
                    r.peripheral(),
                    z,
                    &item.decisions,
                )?;
                let loss = tape.scale(lp, -1.0);
                tape.backward(loss, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.store, &grads)?;
        }
    }
    Ok(stats)
}

/// `softmax(Î / λ)`.
pub fn closed_form_distribution(estimates: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    if estimates.is_empty() {
        return Err(Error::Empty("no rationale estimates".into()));
    }
    let scaled: Vec<f64> = estimates.iter().map(|i| i / lambda).collect();
    let lse = crate::numsub::log_sum_exp(&scaled, None);
    Ok(scaled.iter().map(|s| (s - lse).exp()).collect())
}

/// Mixture weights over a rationale vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleDistribution {
    pub keys: Vec<String>,
    pub estimates: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    rationale: String,
    estimate: f64,
    p: f64,
}

impl RationaleDistribution {
    pub fn from_estimates(keys: Vec<String>, estimates: Vec<f64>, lambda: f64) -> Result<Self> {
        if keys.len() != estimates.len() {
            return Err(Error::InvalidArgument(
                "one estimate per rationale required".into(),
            ));
        }
        let probs = closed_form_distribution(&estimates, lambda)?;
        Ok(RationaleDistribution {
            keys,
            estimates,
            probs,
        })
    }

    pub fn uniform(vocab: &RationaleVocab) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::Empty("rationale vocabulary".into()));
        }
        let n = vocab.len();
        Ok(RationaleDistribution {
            keys: vocab.keys().to_vec(),
            estimates: vec![0.0; n],
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn to_json(&self) -> String {
        let entries: Vec<Entry> = (0..self.len())
            .map(|i| Entry {
                rationale: self.keys[i].clone(),
                estimate: self.estimates[i],
                p: self.probs[i],
            })
            .collect();
        serde_json::to_string_pretty(&entries).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let entries: Vec<Entry> = serde_json::from_str(s)?;
        let total: f64 = entries.iter().map(|e| e.p).sum();
        if entries.is_empty() || (total - 1.0).abs() > 1e-9 || entries.iter().any(|e| !(e.p >= 0.0))
        {
            return Err(Error::Format(
                "rationale distribution is not normalized".into(),
            ));
        }
        Ok(RationaleDistribution {
            keys: entries.iter().map(|e| e.rationale.clone()).collect(),
            estimates: entries.iter().map(|e| e.estimate).collect(),
            probs: entries.iter().map(|e| e.p).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Estimates each rationale's success rate from `cfg.estimate_samples`
/// completions and applies the closed form.
pub fn rationale_distribution<P: Property>(
    model: &GenModel,
    vocab: &RationaleVocab,
    props: &[P],
    cfg: &TrainConfig,
) -> Result<RationaleDistribution> {
    cfg.validate()?;
    if vocab.is_empty() {
        return Err(Error::Empty("rationale vocabulary".into()));
    }
    let mut estimates = Vec::with_capacity(vocab.len());
    for k in 0..vocab.len() {
        let mut hits = 0;
        for s in 0..cfg.estimate_samples {
            let key = [STREAM_ESTIMATE, k as u64, s as u64];
            let (_, c) = draw(model, vocab, k, &key, cfg.seed, cfg.max_steps);
            match c {
                Ok(c) if is_positive(&c.graph, props) => hits += 1,
                Ok(_) | Err(Error::Truncated { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        estimates.push(hits as f64 / cfg.estimate_samples as f64);
    }
    RationaleDistribution::from_estimates(vocab.keys().to_vec(), estimates, cfg.lambda)
}

/// A generated molecule and the index of the rationale it grew from.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub graph: MolGraph,
    pub rationale: usize,
}

/// `n` draws of a rationale from `dist` followed by a completion. Truncated
/// completions are redrawn, up to `10n` attempts in total.
pub fn sample_molecules(
    model: &GenModel,
    vocab: &RationaleVocab,
    dist: &RationaleDistribution,
    n: usize,
    seed: u64,
    max_steps: usize,
) -> Result<Vec<Sampled>> {
    if dist.len() != vocab.len() {
        return Err(Error::InvalidArgument(
            "distribution and vocabulary sizes differ".into(),
        ));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let pick = WeightedIndex::new(&dist.probs)
        .map_err(|e| Error::InvalidArgument(format!("rationale distribution: {e}")))?;
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0u64;
    while out.len() < n && attempts < 10 * n as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_SAMPLE, attempts]));
        attempts += 1;
        let k = pick.sample(&mut rng);
        let r = &vocab.rationales()[k];
        let z = model.sample_prior(&mut rng);
        let opts = CompleteOptions {
            greedy: false,
            max_steps,
        };
        match complete_from(model, r.graph(), r.peripheral(), &z, &mut rng, opts) {
            Ok(c) => out.push(Sampled {
                graph: c.graph,
                rationale: k,
            }),
            Err(Error::Truncated { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if out.len() < n {
        warn!(
            "only {} of {n} samples completed within {attempts} attempts",
            out.len()
        );
    }
    Ok(out)
}
