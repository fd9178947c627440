//! Rationale-conditioned graph generator: an MPN encoder producing a
//! Gaussian latent, and a breadth-first decoder that completes a rationale
//! atom by atom from a frontier queue.

mod decode;
mod mpn;

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::chemgraph::{Atom, MolGraph};
use crate::error::{Error, Result};
use crate::numsub::{ParamId, ParamStore, Tape, Tensor, Var};

pub use decode::{
    complete, complete_from, decode_on_tape, enumerate_completions, log_likelihood,
    log_likelihood_on_tape, log_likelihood_ordered, replay_on_tape, step_distributions,
    target_embedding, teacher_decisions, Choice, CompleteOptions, Completion, DecoderState, Driver,
    ReplayDriver, SampleDriver, StepContext, StepDistributions, TargetDriver, NO_BOND,
};
pub(crate) use mpn::mpn_embed;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub latent: usize,
    /// Message-passing rounds.
    pub depth: usize,
    /// Most atoms a completion may add.
    pub max_steps: usize,
}

impl ModelConfig {
    pub fn desk() -> ModelConfig {
        ModelConfig {
            hidden: 64,
            latent: 16,
            depth: 3,
            max_steps: 60,
        }
    }

    pub fn paper() -> ModelConfig {
        ModelConfig {
            hidden: 400,
            latent: 20,
            ..ModelConfig::desk()
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

/// Atom types the decoder can emit. Embedding row `len()` is reserved for
/// atoms outside the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomVocab {
    atoms: Vec<Atom>,
}

impl AtomVocab {
    pub fn new(atoms: impl IntoIterator<Item = Atom>) -> AtomVocab {
        let set: BTreeSet<Atom> = atoms.into_iter().filter(|a| a.max_valence() >= 1).collect();
        AtomVocab {
            atoms: set.into_iter().collect(),
        }
    }

    pub fn from_corpus<'a, I: IntoIterator<Item = &'a MolGraph>>(corpus: I) -> AtomVocab {
        AtomVocab::new(corpus.into_iter().flat_map(|g| g.atoms().iter().copied()))
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn index(&self, a: &Atom) -> Option<usize> {
        self.atoms.binary_search(a).ok()
    }

    /// Embedding row: the vocabulary index or the reserved unknown row.
    pub fn embed_row(&self, a: &Atom) -> usize {
        self.index(a).unwrap_or(self.atoms.len())
    }
}

macro_rules! id_struct {
    ($name:ident { $($field:ident),* $(,)? }) => {
        #[derive(Debug, Clone, Copy)]
        pub(crate) struct $name { $(pub(crate) $field: ParamId),* }
    };
}

id_struct!(MpnIds {
    w_atom,
    w_bond,
    w_msg,
    b_msg,
    u_atom,
    u_msg,
    b_out
});
id_struct!(MlpIds { w1, b1, w2, b2 });
id_struct!(GIds { w, b, w_m, b_m });

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ids {
    pub(crate) atom_emb: ParamId,
    pub(crate) bond_emb: ParamId,
    pub(crate) enc: MpnIds,
    pub(crate) dec: MpnIds,
    pub(crate) mu: (ParamId, ParamId),
    pub(crate) sigma: (ParamId, ParamId),
    pub(crate) expand: MlpIds,
    pub(crate) atom: MlpIds,
    pub(crate) bond: MlpIds,
    pub(crate) g: GIds,
}

const BOND_CLASSES: usize = 5;

fn layout(cfg: &ModelConfig, n_types: usize) -> Vec<(String, usize, usize)> {
    let (h, z) = (cfg.hidden, cfg.latent);
    let ctx = 2 * h + z;
    let mut v: Vec<(String, usize, usize)> = vec![
        ("atom_emb".into(), n_types + 1, h),
        ("bond_emb".into(), 4, h),
    ];
    for p in ["enc", "dec"] {
        for (n, r, c) in [
            ("w_atom", h, h),
            ("w_bond", h, h),
            ("w_msg", h, h),
            ("b_msg", 1, h),
            ("u_atom", h, h),
            ("u_msg", h, h),
            ("b_out", 1, h),
        ] {
            v.push((format!("{p}.{n}"), r, c));
        }
    }
    v.extend([
        ("mu.w".into(), h, z),
        ("mu.b".into(), 1, z),
        ("sigma.w".into(), h, z),
        ("sigma.b".into(), 1, z),
    ]);
    for (p, input, out) in [
        ("expand", ctx, 1),
        ("atom", ctx, n_types),
        ("bond", 2 * h + z, BOND_CLASSES),
    ] {
        v.extend([
            (format!("{p}.w1"), input, h),
            (format!("{p}.b1"), 1, h),
            (format!("{p}.w2"), h, out),
            (format!("{p}.b2"), 1, out),
        ]);
    }
    v.extend([
        ("g.w".into(), 2 * h, h),
        ("g.b".into(), 1, h),
        ("g.w_m".into(), 2 * h, h),
        ("g.b_m".into(), 1, h),
    ]);
    v
}

fn resolve(store: &ParamStore) -> Result<Ids> {
    let id = |n: &str| {
        store
            .id(n)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {n}")))
    };
    let mpn = |p: &str| -> Result<MpnIds> {
        Ok(MpnIds {
            w_atom: id(&format!("{p}.w_atom"))?,
            w_bond: id(&format!("{p}.w_bond"))?,
            w_msg: id(&format!("{p}.w_msg"))?,
            b_msg: id(&format!("{p}.b_msg"))?,
            u_atom: id(&format!("{p}.u_atom"))?,
            u_msg: id(&format!("{p}.u_msg"))?,
            b_out: id(&format!("{p}.b_out"))?,
        })
    };
    let mlp = |p: &str| -> Result<MlpIds> {
        Ok(MlpIds {
            w1: id(&format!("{p}.w1"))?,
            b1: id(&format!("{p}.b1"))?,
            w2: id(&format!("{p}.w2"))?,
            b2: id(&format!("{p}.b2"))?,
        })
    };
    Ok(Ids {
        atom_emb: id("atom_emb")?,
        bond_emb: id("bond_emb")?,
        enc: mpn("enc")?,
        dec: mpn("dec")?,
        mu: (id("mu.w")?, id("mu.b")?),
        sigma: (id("sigma.w")?, id("sigma.b")?),
        expand: mlp("expand")?,
        atom: mlp("atom")?,
        bond: mlp("bond")?,
        g: GIds {
            w: id("g.w")?,
            b: id("g.b")?,
            w_m: id("g.w_m")?,
            b_m: id("g.b_m")?,
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    vocab: AtomVocab,
    params: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct GenModel {
    pub config: ModelConfig,
    pub vocab: AtomVocab,
    pub store: ParamStore,
    pub(crate) ids: Ids,
}

/// Posterior parameters. `logvar` is used as a log standard deviation:
/// `z = μ + exp(logvar) · ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentParams {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GenModel {
    pub fn new(config: ModelConfig, vocab: AtomVocab, seed: u64) -> Result<GenModel> {
        if vocab.is_empty() {
            return Err(Error::Empty("atom vocabulary".into()));
        }
        if config.hidden == 0 || config.latent == 0 || config.depth == 0 {
            return Err(Error::InvalidArgument(
                "model widths and depth must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, r, c) in layout(&config, vocab.len()) {
            // Zero posterior log scale at initialization.
            if name.contains(".b") || name == "sigma.w" {
                store.add(name, Tensor::zeros(r, c));
            } else {
                store.add_init(name, r, c, &mut rng);
            }
        }
        let ids = resolve(&store)?;
        Ok(GenModel {
            config,
            vocab,
            store,
            ids,
        })
    }

    /// A copy with every parameter set to zero.
    pub fn zeroed(&self) -> GenModel {
        let mut m = self.clone();
        for id in m.store.ids().collect::<Vec<_>>() {
            m.store.get_mut(id).data_mut().fill(0.0);
        }
        m
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let header = Header {
            version: MODEL_VERSION,
            config: self.config,
            vocab: self.vocab.clone(),
            params: self.store.manifest(),
        };
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&header)?,
        )?;
        std::fs::write(dir.join(format!("{stem}.bin")), self.store.to_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<GenModel> {
        let header: Header =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        if header.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "model version {} (expected {MODEL_VERSION})",
                header.version
            )));
        }
        let store = ParamStore::read_binary(std::fs::File::open(dir.join(format!("{stem}.bin")))?)?;
        for (name, r, c) in layout(&header.config, header.vocab.len()) {
            let id = store
                .id(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
            if store.get(id).shape() != (r, c) {
                return Err(Error::Format(format!(
                    "parameter {name} has the wrong shape"
                )));
            }
        }
        let ids = resolve(&store)?;
        Ok(GenModel {
            config: header.config,
            vocab: header.vocab,
            store,
            ids,
        })
    }

    pub(crate) fn atom_rows(&self, g: &MolGraph) -> Vec<usize> {
        g.atoms().iter().map(|a| self.vocab.embed_row(a)).collect()
    }

    /// Per-atom MPN vectors of the encoder or the decoder network.
    pub fn atom_embeddings(&self, g: &MolGraph, encoder: bool) -> Result<Tensor> {
        let mut tape = Tape::new(&self.store);
        let ids = if encoder { self.ids.enc } else { self.ids.dec };
        let h = mpn_embed(&mut tape, self, &ids, g)?;
        Ok(tape.value(h).clone())
    }

    /// `(μ, Σ)` as tape variables; `exp(Σ)` is the standard deviation.
    pub fn encode_on_tape(&self, tape: &mut Tape, g: &MolGraph) -> Result<(Var, Var)> {
        let h = mpn_embed(tape, self, &self.ids.enc, g)?;
        let hg = tape.row_sum(h);
        let mu = linear(tape, hg, self.ids.mu)?;
        let ls = linear(tape, hg, self.ids.sigma)?;
        Ok((mu, ls))
    }

    pub fn encode(&self, g: &MolGraph) -> Result<LatentParams> {
        let mut tape = Tape::new(&self.store);
        let (mu, ls) = self.encode_on_tape(&mut tape, g)?;
        Ok(LatentParams {
            mu: tape.value(mu).data().to_vec(),
            logvar: tape.value(ls).data().to_vec(),
        })
    }

    /// Standard-normal draw of width `|z|`.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.config.latent)
            .map(|_| rng.sample(StandardNormal))
            .collect()
    }
}

/// `z = μ + exp(Σ) · ε`.
pub fn reparameterize(p: &LatentParams, eps: &[f64]) -> Vec<f64> {
    p.mu.iter()
        .zip(&p.logvar)
        .zip(eps)
        .map(|((&m, &s), &e)| m + s.exp() * e)
        .collect()
}

pub fn sample_latent<R: Rng + ?Sized>(p: &LatentParams, rng: &mut R) -> Vec<f64> {
    let eps: Vec<f64> = (0..p.mu.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    reparameterize(p, &eps)
}

pub(crate) fn linear(tape: &mut Tape, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
    let (w, b) = (tape.param(w), tape.param(b));
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Two-layer ReLU network.
pub(crate) fn mlp(tape: &mut Tape, x: Var, ids: &MlpIds) -> Result<Var> {
    let h = linear(tape, x, (ids.w1, ids.b1))?;
    let h = tape.relu(h);
    linear(tape, h, (ids.w2, ids.b2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemgraph::{parse_smiles, Element};

    fn toy() -> GenModel {
        let corpus: Vec<MolGraph> = ["CCO", "c1ccccc1N", "CC(=O)O"]
            .iter()
            .map(|s| parse_smiles(s).unwrap())
            .collect();
        let cfg = ModelConfig {
            hidden: 8,
            latent: 4,
            ..ModelConfig::desk()
        };
        GenModel::new(cfg, AtomVocab::from_corpus(&corpus), 1).unwrap()
    }

    #[test]
    fn vocab_contents() {
        let m = toy();
        assert_eq!(m.vocab.len(), 4);
        assert!(m.vocab.index(&Atom::aromatic(Element::C)).is_some());
        assert_eq!(m.vocab.embed_row(&Atom::new(Element::S)), 4);
    }

    #[test]
    fn encode_shapes_and_purity() {
        let m = toy();
        let g = parse_smiles("CC(=O)Nc1ccccc1").unwrap();
        let a = m.encode(&g).unwrap();
        assert_eq!(a.mu.len(), 4);
        assert_eq!(a.logvar.len(), 4);
        assert_eq!(m.encode(&g).unwrap(), a);
        let p = parse_smiles("c1ccc(NC(C)=O)cc1").unwrap();
        let b = m.encode(&p).unwrap();
        for (x, y) in
            a.mu.iter()
                .chain(&a.logvar)
                .zip(b.mu.iter().chain(&b.logvar))
        {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn latent_sampling() {
        let p = LatentParams {
            mu: vec![0.0; 3],
            logvar: vec![0.0; 3],
        };
        let eps = [0.3, -1.0, 2.0];
        assert_eq!(reparameterize(&p, &eps), eps.to_vec());
        let q = LatentParams {
            mu: vec![1.0, 2.0, 3.0],
            logvar: vec![-800.0; 3],
        };
        assert_eq!(reparameterize(&q, &eps), vec![1.0, 2.0, 3.0]);
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(sample_latent(&p, &mut r1), sample_latent(&p, &mut r2));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = toy();
        let dir = std::env::temp_dir().join(format!("ratgen-model-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        m.save(&dir, "m").unwrap();
        let back = GenModel::load(&dir, "m").unwrap();
        assert_eq!(back.store, m.store);
        assert_eq!(back.vocab, m.vocab);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
