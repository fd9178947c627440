//! Pipeline stages. Each reads its upstream artifacts from the run
//! directory, writes its own, and records a manifest.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ratgen::chemgraph::{parse_smiles, write_smiles, MolGraph};
use ratgen::extract::{best_rationale, build_vocab, extract_rationales};
use ratgen::fingerprint::{default_fingerprint, BitFingerprint};
use ratgen::forest::{
    auroc, load_labeled_csv, train_forest, ForestModel, LabeledSet, PropertySpec,
};
use ratgen::genmodel::{AtomVocab, GenModel};
use ratgen::hashing::derive_seed;
use ratgen::merge::{build_multi_vocab, MergeParams};
use ratgen::metrics::{evaluate as evaluate_samples, EvalReport};
use ratgen::rationale::RationaleVocab;
use ratgen::synth::{generate, SynthSpec};
use ratgen::train::{
    finetune as finetune_model, make_pretrain_pairs, pretrain as pretrain_model,
    rationale_distribution, sample_molecules, write_stats_csv, EpochStats, IterationStats,
    RationaleDistribution,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::faithfulness::{rationale_match, summarize, FaithfulnessReport, MatchRecord};
use crate::manifest::{hash_json, RunDir};

pub const GEN_SYNTHETIC: &str = "gen-synthetic";
pub const TRAIN_PREDICTOR: &str = "train-predictor";
pub const EXTRACT: &str = "extract";
pub const MERGE: &str = "merge";
pub const PRETRAIN: &str = "pretrain";
pub const FINETUNE: &str = "finetune";
pub const SAMPLE: &str = "sample";
pub const EVALUATE: &str = "evaluate";
pub const FAITHFULNESS: &str = "faithfulness";

const PRETRAINED: &str = "pretrained";
const FINETUNED: &str = "finetuned";
const MULTI_VOCAB: &str = "vocab_multi.json";
const DISTRIBUTION: &str = "distribution.json";
const SAMPLES: &str = "samples.csv";
const SPLIT: &str = "split.json";

/// Hash of the configuration values a stage depends on.
pub fn stage_hash(cfg: &RunConfig, stage: &str) -> String {
    let t = &cfg.train;
    match stage {
        GEN_SYNTHETIC => hash_json(&cfg.synthetic),
        TRAIN_PREDICTOR => hash_json(&json!([cfg.properties, cfg.predictor])),
        EXTRACT => hash_json(&cfg.extract),
        MERGE => hash_json(&cfg.merge),
        PRETRAIN => hash_json(&json!([
            cfg.model,
            t.beta,
            t.lr,
            t.batch_size,
            t.pretrain_epochs,
            t.max_subgraph_atoms,
            t.pairs_per_mol,
            t.clip_norm,
            t.seed
        ])),
        FINETUNE => hash_json(&cfg.train),
        SAMPLE => hash_json(&cfg.sample),
        FAITHFULNESS => hash_json(&json!([cfg.faithfulness, cfg.extract.params])),
        _ => hash_json(&stage),
    }
}

fn require(cfg: &RunConfig, run: &RunDir, stage: &'static str) -> CliResult<()> {
    run.require(stage, &stage_hash(cfg, stage)).map(|_| ())
}

fn labels_input(cfg: &RunConfig, run: &RunDir) -> CliResult<PathBuf> {
    if cfg.labels.as_os_str().is_empty() {
        require(cfg, run, GEN_SYNTHETIC)?;
    } else if !cfg.labels.exists() {
        return Err(CliError::Config(format!(
            "labels file {} does not exist",
            cfg.labels.display()
        )));
    }
    Ok(cfg.labels_path())
}

/// Labeled data restricted to the configured properties.
fn load_labels(cfg: &RunConfig, path: &Path) -> CliResult<LabeledSet> {
    let mut set = load_labeled_csv(path)?;
    if cfg.properties.is_empty() {
        return Ok(set);
    }
    let mut cols = Vec::new();
    for p in &cfg.properties {
        cols.push(set.property_index(p).ok_or_else(|| {
            CliError::Config(format!(
                "property {p} is not a column of {}",
                path.display()
            ))
        })?);
    }
    set.labels = set
        .labels
        .iter()
        .map(|row| cols.iter().map(|&c| row[c]).collect())
        .collect();
    set.properties = cfg.properties.clone();
    Ok(set)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Core(e.into()))
}

fn predictor_file(name: &str) -> String {
    format!("predictor_{name}.json")
}

fn vocab_file(name: &str) -> String {
    format!("vocab_{name}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn make_split(n: usize, holdout: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (holdout * n as f64).round() as usize;
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Split { train, test }
}

/// Class balance per property.
pub fn gen_synthetic(cfg: &RunConfig, run: &RunDir) -> CliResult<Vec<(String, f64)>> {
    let s = &cfg.synthetic;
    if s.motifs.is_empty() {
        return Err(CliError::Config("synthetic.motifs is empty".into()));
    }
    let spec = SynthSpec {
        size: s.size,
        motifs: s.motifs.clone(),
        grow: s.grow.clone(),
        seed: s.seed,
    };
    let corpus = generate(&spec).map_err(|e| CliError::Config(e.to_string()))?;
    let smi = run.path("corpus.smi");
    let csv = run.path("labels.csv");
    corpus.write_smiles(std::fs::File::create(&smi)?)?;
    corpus.write_labeled_csv(std::fs::File::create(&csv)?)?;
    let balance: Vec<(String, f64)> = corpus
        .properties
        .iter()
        .cloned()
        .zip(corpus.balance())
        .collect();
    let summary = run.path("synthetic.json");
    write_json(&summary, &json!({ "size": s.size, "balance": balance }))?;
    run.record(
        GEN_SYNTHETIC,
        &stage_hash(cfg, GEN_SYNTHETIC),
        &[],
        &[smi, csv, summary],
    )?;
    Ok(balance)
}

/// Held-out AUROC per property (absent when the test split is one class).
pub fn train_predictor(cfg: &RunConfig, run: &RunDir) -> CliResult<Vec<(String, Option<f64>)>> {
    let labels = labels_input(cfg, run)?;
    let set = load_labels(cfg, &labels)?;
    let split = make_split(
        set.molecules.len(),
        cfg.predictor.holdout,
        cfg.predictor.split_seed,
    );
    let mut outputs = Vec::new();
    let mut report = Vec::new();
    for (p, name) in set.properties.iter().enumerate() {
        let col = set.column(p);
        let train: Vec<(MolGraph, bool)> = split.train.iter().map(|&i| col[i].clone()).collect();
        let test: Vec<(MolGraph, bool)> = split.test.iter().map(|&i| col[i].clone()).collect();
        let model = train_forest(&train, &cfg.predictor.forest)?;
        let score = auroc(&model, &test).ok();
        match score {
            Some(a) => info!("predictor {name}: held-out AUROC {a:.4}"),
            None => warn!("predictor {name}: held-out split has one class"),
        }
        let path = run.path(&predictor_file(name));
        model.save(&path)?;
        outputs.push(path);
        report.push((name.clone(), score));
    }
    let split_path = run.path(SPLIT);
    write_json(&split_path, &split)?;
    let report_path = run.path("predictor_report.json");
    write_json(&report_path, &report)?;
    outputs.extend([split_path, report_path]);
    run.record(
        TRAIN_PREDICTOR,
        &stage_hash(cfg, TRAIN_PREDICTOR),
        &[labels],
        &outputs,
    )?;
    Ok(report)
}

fn load_properties(
    cfg: &RunConfig,
    run: &RunDir,
    set: &LabeledSet,
) -> CliResult<Vec<PropertySpec>> {
    set.properties
        .iter()
        .map(|name| {
            let model = ForestModel::load(&run.path(&predictor_file(name)))?;
            Ok(PropertySpec::new(
                name.clone(),
                cfg.predictor.threshold,
                model,
            )?)
        })
        .collect()
}

/// Upstream state shared by the stages after `train-predictor`.
struct Trained {
    labels: PathBuf,
    set: LabeledSet,
    split: Split,
    props: Vec<PropertySpec>,
}

fn trained(cfg: &RunConfig, run: &RunDir) -> CliResult<Trained> {
    let labels = labels_input(cfg, run)?;
    require(cfg, run, TRAIN_PREDICTOR)?;
    let set = load_labels(cfg, &labels)?;
    let split: Split = read_json(&run.path(SPLIT))?;
    if split
        .train
        .iter()
        .chain(&split.test)
        .any(|&i| i >= set.molecules.len())
    {
        return Err(CliError::Stale(format!(
            "{SPLIT} does not match the labeled data"
        )));
    }
    let props = load_properties(cfg, run, &set)?;
    Ok(Trained {
        labels,
        set,
        split,
        props,
    })
}

/// Fingerprints of training molecules labeled positive for every property.
fn train_positive_fps(t: &Trained) -> Vec<BitFingerprint> {
    t.split
        .train
        .iter()
        .filter(|&&i| t.set.labels[i].iter().all(|&l| l))
        .map(|&i| default_fingerprint(&t.set.molecules[i]))
        .collect()
}

/// Vocabulary size per property.
pub fn extract(cfg: &RunConfig, run: &RunDir) -> CliResult<Vec<(String, usize)>> {
    let t = trained(cfg, run)?;
    let mut outputs = Vec::new();
    let mut sizes = Vec::new();
    for (p, prop) in t.props.iter().enumerate() {
        let mut positives: Vec<MolGraph> = t
            .split
            .train
            .iter()
            .filter(|&&i| t.set.labels[i][p])
            .map(|&i| t.set.molecules[i].clone())
            .collect();
        if cfg.extract.max_molecules > 0 {
            positives.truncate(cfg.extract.max_molecules);
        }
        let (vocab, skipped) = build_vocab(&positives, prop, &cfg.extract.params)?;
        info!(
            "{}: {} rationales from {} positives ({skipped} not predicted positive)",
            prop.name,
            vocab.len(),
            positives.len()
        );
        let path = run.path(&vocab_file(&prop.name));
        vocab.save(&path)?;
        outputs.push(path);
        sizes.push((prop.name.clone(), vocab.len()));
    }
    run.record(EXTRACT, &stage_hash(cfg, EXTRACT), &[t.labels], &outputs)?;
    Ok(sizes)
}

/// Size of the multi-property vocabulary.
pub fn merge(cfg: &RunConfig, run: &RunDir) -> CliResult<usize> {
    let t = trained(cfg, run)?;
    require(cfg, run, EXTRACT)?;
    let inputs: Vec<PathBuf> = t
        .props
        .iter()
        .map(|p| run.path(&vocab_file(&p.name)))
        .collect();
    let vocabs = inputs
        .iter()
        .map(|p| RationaleVocab::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let merged = if vocabs.len() == 1 {
        vocabs[0].clone()
    } else {
        let params = MergeParams {
            shortlist: vec![cfg.merge.shortlist; vocabs.len()],
        };
        build_multi_vocab(&vocabs, &t.props, &params, None)?
    };
    if merged.is_empty() {
        warn!("no rationale satisfies every property");
    }
    let out = run.path(MULTI_VOCAB);
    merged.save(&out)?;
    run.record(MERGE, &stage_hash(cfg, MERGE), &inputs, &[out])?;
    Ok(merged.len())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Core(ratgen::Error::Format(e.to_string()))
}

fn write_epoch_csv(path: &Path, stats: &[EpochStats]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["epoch", "loss", "reconstruction", "kl", "pairs"])
        .map_err(csv_err)?;
    for s in stats {
        w.write_record([
            s.epoch.to_string(),
            format!("{:.6}", s.loss),
            format!("{:.6}", s.reconstruction),
            format!("{:.6}", s.kl),
            s.pairs.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn pretrain(cfg: &RunConfig, run: &RunDir) -> CliResult<Vec<EpochStats>> {
    let labels = labels_input(cfg, run)?;
    let set = load_labels(cfg, &labels)?;
    let vocab = AtomVocab::from_corpus(&set.molecules);
    let mut model = GenModel::new(cfg.model.config(), vocab, cfg.model.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, &[0]));
    let pairs = make_pretrain_pairs(
        &set.molecules,
        cfg.train.max_subgraph_atoms,
        cfg.train.pairs_per_mol,
        &mut rng,
    )?;
    let stats = pretrain_model(&mut model, &pairs, &cfg.train)?;
    model.save(&run.dir, PRETRAINED)?;
    let csv = run.path("pretrain_stats.csv");
    write_epoch_csv(&csv, &stats)?;
    let outputs = [
        run.path(&format!("{PRETRAINED}.json")),
        run.path(&format!("{PRETRAINED}.bin")),
        csv,
    ];
    run.record(PRETRAIN, &stage_hash(cfg, PRETRAIN), &[labels], &outputs)?;
    Ok(stats)
}

pub fn finetune(cfg: &RunConfig, run: &RunDir) -> CliResult<Vec<IterationStats>> {
    let t = trained(cfg, run)?;
    require(cfg, run, MERGE)?;
    require(cfg, run, PRETRAIN)?;
    let vocab = RationaleVocab::load(&run.path(MULTI_VOCAB))?;
    let mut model = GenModel::load(&run.dir, PRETRAINED)?;
    let reference = train_positive_fps(&t);
    let stats = finetune_model(&mut model, &vocab, &t.props, &cfg.train, &reference)?;
    model.save(&run.dir, FINETUNED)?;
    let dist = rationale_distribution(&model, &vocab, &t.props, &cfg.train)?;
    dist.save(&run.path(DISTRIBUTION))?;
    let csv = run.path("finetune_stats.csv");
    write_stats_csv(&stats, std::fs::File::create(&csv)?)?;
    let inputs = [
        run.path(MULTI_VOCAB),
        run.path(&format!("{PRETRAINED}.bin")),
    ];
    let outputs = [
        run.path(&format!("{FINETUNED}.json")),
        run.path(&format!("{FINETUNED}.bin")),
        run.path(DISTRIBUTION),
        csv,
    ];
    run.record(FINETUNE, &stage_hash(cfg, FINETUNE), &inputs, &outputs)?;
    Ok(stats)
}

/// Number of molecules written.
pub fn sample(cfg: &RunConfig, run: &RunDir) -> CliResult<usize> {
    require(cfg, run, FINETUNE)?;
    let vocab = RationaleVocab::load(&run.path(MULTI_VOCAB))?;
    let model = GenModel::load(&run.dir, FINETUNED)?;
    let dist = if cfg.sample.uniform {
        RationaleDistribution::uniform(&vocab)?
    } else {
        RationaleDistribution::load(&run.path(DISTRIBUTION))?
    };
    let out = sample_molecules(
        &model,
        &vocab,
        &dist,
        cfg.sample.n,
        cfg.sample.seed,
        cfg.train.max_steps,
    )?;
    let path = run.path(SAMPLES);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["smiles", "rationale"]).map_err(csv_err)?;
    for s in &out {
        w.write_record([write_smiles(&s.graph), vocab.keys()[s.rationale].clone()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    let inputs = [
        run.path(&format!("{FINETUNED}.bin")),
        run.path(DISTRIBUTION),
    ];
    run.record(SAMPLE, &stage_hash(cfg, SAMPLE), &inputs, &[path])?;
    Ok(out.len())
}

fn read_samples(path: &Path) -> CliResult<Vec<MolGraph>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        out.push(parse_smiles(&rec[0])?);
    }
    Ok(out)
}

pub fn evaluate(cfg: &RunConfig, run: &RunDir) -> CliResult<EvalReport> {
    let t = trained(cfg, run)?;
    require(cfg, run, SAMPLE)?;
    let samples = read_samples(&run.path(SAMPLES))?;
    let report = evaluate_samples(&samples, &t.props, &train_positive_fps(&t))?;
    let path = run.path("report.csv");
    report.write_csv(std::fs::File::create(&path)?)?;
    run.record(
        EVALUATE,
        &stage_hash(cfg, EVALUATE),
        &[run.path(SAMPLES)],
        &[path],
    )?;
    Ok(report)
}

pub fn faithfulness(cfg: &RunConfig, run: &RunDir) -> CliResult<FaithfulnessReport> {
    let t = trained(cfg, run)?;
    let name = if cfg.faithfulness.property.is_empty() {
        t.set.properties[0].clone()
    } else {
        cfg.faithfulness.property.clone()
    };
    let p = t
        .set
        .property_index(&name)
        .ok_or_else(|| CliError::Config(format!("unknown property {name}")))?;
    let motif_smiles = if cfg.faithfulness.motif.is_empty() {
        let m = cfg
            .synthetic
            .motifs
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| CliError::Config(format!("no ground-truth motif for {name}")))?;
        if m.negate {
            return Err(CliError::Config(format!("{name} is an absence property")));
        }
        m.smiles.clone()
    } else {
        cfg.faithfulness.motif.clone()
    };
    let motif = parse_smiles(&motif_smiles).map_err(|e| CliError::Config(format!("motif: {e}")))?;
    let prop = &t.props[p];
    let mut records = Vec::new();
    for &i in t.split.test.iter().filter(|&&i| t.set.labels[i][p]) {
        let g = &t.set.molecules[i];
        let rs = extract_rationales(g, prop, &cfg.extract.params)?;
        let best = best_rationale(&rs, &name);
        let (exact, coverage) = rationale_match(g, best, &motif)?;
        records.push(MatchRecord {
            smiles: t.set.smiles[i].clone(),
            rationale: best.map(|r| r.smiles()),
            exact,
            coverage,
        });
    }
    let report = summarize(&name, &motif_smiles, &records);
    let csv_path = run.path("faithfulness.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    for r in &records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    let json_path = run.path("faithfulness.json");
    write_json(&json_path, &report)?;
    run.record(
        FAITHFULNESS,
        &stage_hash(cfg, FAITHFULNESS),
        &[t.labels],
        &[csv_path, json_path],
    )?;
    Ok(report)
}

/// Runs every generation stage in order and returns the evaluation.
pub fn run_all(cfg: &RunConfig, run: &RunDir) -> CliResult<EvalReport> {
    if cfg.labels.as_os_str().is_empty() {
        gen_synthetic(cfg, run)?;
    }
    train_predictor(cfg, run)?;
    extract(cfg, run)?;
    merge(cfg, run)?;
    pretrain(cfg, run)?;
    finetune(cfg, run)?;
    sample(cfg, run)?;
    evaluate(cfg, run)
}
