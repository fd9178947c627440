use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{linear, mlp, mpn_embed, AtomVocab, GenModel};
use crate::chemgraph::{
    canonical_ranks, subgraph_matches, valence_sum, BondOrder, MatchMode, MolGraph,
};
use crate::error::{Error, Result};
use crate::numsub::{log_sum_exp, sigmoid, Tape, Tensor, Var};
use crate::rationale::Rationale;

/// Bond class meaning "no bond to this queue member".
pub const NO_BOND: usize = 4;
const EMBED_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    /// 0 dequeues the front atom, 1 attaches a new atom to it.
    Expand,
    /// Index into the atom vocabulary.
    AtomType,
    /// Bond class between the new atom and `partner`, [`NO_BOND`] for none.
    Bond,
}

/// What a [`Driver`] sees at a decision. `raw` and `probs` are empty when the
/// decoder runs without a model.
pub struct StepContext<'a> {
    pub graph: &'a MolGraph,
    pub front: usize,
    pub new_atom: Option<usize>,
    pub partner: Option<usize>,
    pub open: &'a [bool],
    /// Distribution before masking.
    pub raw: &'a [f64],
    /// Distribution after masking and renormalization.
    pub probs: &'a [f64],
}

/// Makes every non-forced decoding decision.
pub trait Driver {
    fn choose(&mut self, kind: Choice, ctx: &StepContext) -> Result<usize>;
}

/// Draws from the model's distributions, or takes the mode when greedy.
pub struct SampleDriver<'r, R: Rng + ?Sized> {
    pub rng: &'r mut R,
    pub greedy: bool,
}

impl<R: Rng + ?Sized> Driver for SampleDriver<'_, R> {
    fn choose(&mut self, kind: Choice, ctx: &StepContext) -> Result<usize> {
        if ctx.probs.is_empty() {
            return Err(Error::InvalidArgument("sampling requires a model".into()));
        }
        let open = || (0..ctx.probs.len()).filter(|&j| ctx.open[j]);
        if self.greedy {
            if kind == Choice::Expand {
                return Ok(usize::from(ctx.probs[1] > 0.5));
            }
            let mut best = open().next().expect("an open option");
            for j in open() {
                if ctx.probs[j] > ctx.probs[best] {
                    best = j;
                }
            }
            return Ok(best);
        }
        let r: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for j in open() {
            acc += ctx.probs[j];
            last = j;
            if r < acc {
                return Ok(j);
            }
        }
        Ok(last)
    }
}

/// Replays a recorded decision sequence.
pub struct ReplayDriver<'d> {
    decisions: &'d [usize],
    pos: usize,
}

impl<'d> ReplayDriver<'d> {
    pub fn new(decisions: &'d [usize]) -> ReplayDriver<'d> {
        ReplayDriver { decisions, pos: 0 }
    }

    pub fn finished(&self) -> bool {
        self.pos == self.decisions.len()
    }
}

impl Driver for ReplayDriver<'_> {
    fn choose(&mut self, _kind: Choice, _ctx: &StepContext) -> Result<usize> {
        let d = *self
            .decisions
            .get(self.pos)
            .ok_or_else(|| Error::InvalidArgument("decision sequence ends early".into()))?;
        self.pos += 1;
        Ok(d)
    }
}

/// Teacher forcing towards `target`: new atoms are taken breadth-first from
/// the front atom's unplaced target neighbours by ascending canonical rank.
pub struct TargetDriver<'a> {
    target: &'a MolGraph,
    vocab: &'a AtomVocab,
    rank: Vec<usize>,
    map: Vec<usize>,
    placed: Vec<bool>,
    pending: Option<usize>,
}

impl<'a> TargetDriver<'a> {
    /// `embedding[i]` is the target atom of start atom `i`.
    pub fn new(
        target: &'a MolGraph,
        vocab: &'a AtomVocab,
        embedding: &[usize],
    ) -> TargetDriver<'a> {
        let mut placed = vec![false; target.atom_count()];
        for &t in embedding {
            placed[t] = true;
        }
        TargetDriver {
            target,
            vocab,
            rank: canonical_ranks(target),
            map: embedding.to_vec(),
            placed,
            pending: None,
        }
    }

    /// Decoder atom to target atom.
    pub fn mapping(&self) -> &[usize] {
        &self.map
    }
}

impl Driver for TargetDriver<'_> {
    fn choose(&mut self, kind: Choice, ctx: &StepContext) -> Result<usize> {
        match kind {
            Choice::Expand => {
                let tv = self.map[ctx.front];
                let next = self
                    .target
                    .neighbors(tv)
                    .iter()
                    .map(|&(w, _)| w)
                    .filter(|&w| !self.placed[w])
                    .min_by_key(|&w| self.rank[w]);
                self.pending = next;
                Ok(usize::from(next.is_some()))
            }
            Choice::AtomType => {
                let t = self.pending.take().ok_or(Error::Containment)?;
                let k = self.vocab.index(self.target.atom(t)).ok_or_else(|| {
                    Error::InvalidGraph(format!(
                        "atom type {:?} is outside the model vocabulary",
                        self.target.atom(t)
                    ))
                })?;
                self.placed[t] = true;
                self.map.push(t);
                Ok(k)
            }
            Choice::Bond => {
                let (u, q) = (
                    ctx.new_atom.expect("bond decision"),
                    ctx.partner.expect("bond decision"),
                );
                let c = self
                    .target
                    .order_between(self.map[u], self.map[q])
                    .map_or(NO_BOND, BondOrder::index);
                if ctx.open[c] {
                    Ok(c)
                } else {
                    Err(Error::Containment)
                }
            }
        }
    }
}

/// Partial graph and frontier queue of a decoding run.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub graph: MolGraph,
    pub queue: VecDeque<usize>,
    /// Atoms added so far.
    pub added: usize,
}

impl DecoderState {
    /// Initial state: the start graph with its peripheral atoms queued in
    /// ascending order.
    pub fn new(start: &MolGraph, peripheral: &[usize]) -> Result<DecoderState> {
        let mut q: Vec<usize> = peripheral.to_vec();
        q.sort_unstable();
        q.dedup();
        if q.last().is_some_and(|&p| p >= start.atom_count()) {
            return Err(Error::InvalidArgument(
                "peripheral atom out of range".into(),
            ));
        }
        Ok(DecoderState {
            graph: start.clone(),
            queue: q.into(),
            added: 0,
        })
    }
}

fn bond_fits(g: &MolGraph, x: usize, o: BondOrder) -> bool {
    let cur = g.neighbors(x).iter().map(|&(_, b)| g.bond(b).order);
    valence_sum(cur.chain(std::iter::once(o))) <= g.atom(x).max_valence()
}

fn softmax_of(xs: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let lse = log_sum_exp(xs, mask);
    xs.iter()
        .enumerate()
        .map(|(j, &x)| {
            if mask.is_none_or(|m| m[j]) {
                (x - lse).exp()
            } else {
                0.0
            }
        })
        .collect()
}

struct Scorer<'t, 's> {
    tape: &'t mut Tape<'s>,
    model: &'t GenModel,
    z: Var,
    terms: Vec<Var>,
    cache: Option<(Var, Var)>,
}

impl Scorer<'_, '_> {
    fn embeddings(&mut self, g: &MolGraph) -> Result<(Var, Var)> {
        if let Some(c) = self.cache {
            return Ok(c);
        }
        let h = mpn_embed(self.tape, self.model, &self.model.ids.dec, g)?;
        let hg = self.tape.row_sum(h);
        self.cache = Some((h, hg));
        Ok((h, hg))
    }

    fn log_prob(&mut self) -> Result<Var> {
        if self.terms.is_empty() {
            return Ok(self.tape.constant(Tensor::scalar(0.0)));
        }
        let all = self.tape.concat_cols(&self.terms)?;
        Ok(self.tape.sum_all(all))
    }
}

struct Decoder<'a, 't, 's, D: Driver> {
    vocab: &'a AtomVocab,
    scorer: Option<Scorer<'t, 's>>,
    driver: &'a mut D,
    state: DecoderState,
    max_steps: usize,
    decisions: Vec<usize>,
}

fn ask<D: Driver>(
    driver: &mut D,
    decisions: &mut Vec<usize>,
    kind: Choice,
    ctx: &StepContext,
) -> Result<usize> {
    let c = driver.choose(kind, ctx)?;
    if c >= ctx.open.len() || !ctx.open[c] {
        return Err(Error::InvalidArgument(format!(
            "{kind:?} choice {c} is not open"
        )));
    }
    decisions.push(c);
    Ok(c)
}

impl<D: Driver> Decoder<'_, '_, '_, D> {
    /// Processes the front of the queue once: a dequeue or one added atom
    /// with its bonds.
    fn step(&mut self) -> Result<()> {
        let v = *self
            .state
            .queue
            .front()
            .ok_or_else(|| Error::InvalidArgument("step on an empty queue".into()))?;
        if self.state.graph.free_valence(v) == 0 {
            self.state.queue.pop_front();
            return Ok(());
        }

        let mut hidden = None;
        let mut ctx_var = None;
        let mut expand_var = None;
        let mut probs = Vec::new();
        if let Some(sc) = self.scorer.as_mut() {
            let (h, hg) = sc.embeddings(&self.state.graph)?;
            let hv = sc.tape.gather_rows(h, &[v])?;
            let c = sc.tape.concat_cols(&[hv, hg, sc.z])?;
            let x = mlp(sc.tape, c, &sc.model.ids.expand)?;
            let p = sigmoid(sc.tape.value(x).item());
            probs = vec![1.0 - p, p];
            hidden = Some(h);
            ctx_var = Some(c);
            expand_var = Some(x);
        }
        let open = [true, true];
        let choice = ask(
            self.driver,
            &mut self.decisions,
            Choice::Expand,
            &StepContext {
                graph: &self.state.graph,
                front: v,
                new_atom: None,
                partner: None,
                open: &open,
                raw: &probs,
                probs: &probs,
            },
        )?;
        if let (Some(sc), Some(x)) = (self.scorer.as_mut(), expand_var) {
            let t = if choice == 1 {
                sc.tape.log_sigmoid(x)
            } else {
                let nx = sc.tape.scale(x, -1.0);
                sc.tape.log_sigmoid(nx)
            };
            sc.terms.push(t);
        }
        if choice == 0 {
            self.state.queue.pop_front();
            return Ok(());
        }
        if self.state.added >= self.max_steps {
            return Err(Error::Truncated {
                steps: self.state.added,
                partial: Box::new(self.state.graph.clone()),
            });
        }

        let n_types = self.vocab.len();
        let open_types = vec![true; n_types];
        let mut type_logits = None;
        let mut probs = Vec::new();
        if let (Some(sc), Some(c)) = (self.scorer.as_mut(), ctx_var) {
            let l = mlp(sc.tape, c, &sc.model.ids.atom)?;
            probs = softmax_of(sc.tape.value(l).data(), None);
            type_logits = Some(l);
        }
        let t = ask(
            self.driver,
            &mut self.decisions,
            Choice::AtomType,
            &StepContext {
                graph: &self.state.graph,
                front: v,
                new_atom: None,
                partner: None,
                open: &open_types,
                raw: &probs,
                probs: &probs,
            },
        )?;
        let mut new_rep = None;
        if let (Some(sc), Some(l)) = (self.scorer.as_mut(), type_logits) {
            let lsm = sc.tape.log_softmax(l, None)?;
            let term = sc.tape.pick(lsm, 0, t);
            sc.terms.push(term);
            let emb = sc.tape.param(sc.model.ids.atom_emb);
            let e_u = sc.tape.gather_rows(emb, &[t])?;
            let acc = sc.tape.constant(Tensor::zeros(1, sc.model.config.hidden));
            let g = g_update(sc, e_u, acc)?;
            new_rep = Some((e_u, acc, g));
        }
        self.state.graph = self.state.graph.with_atom(self.vocab.atoms()[t]);
        let u = self.state.graph.atom_count() - 1;

        for k in 0..self.state.queue.len() {
            let q = self.state.queue[k];
            let g = &self.state.graph;
            let mut open = [false; 5];
            for o in BondOrder::ALL {
                open[o.index()] = bond_fits(g, q, o) && bond_fits(g, u, o);
            }
            open[NO_BOND] = k > 0;
            let n_open = open.iter().filter(|&&b| b).count();
            if n_open == 0 {
                return Err(Error::InvalidGraph(
                    "front atom cannot bond to a new atom".into(),
                ));
            }
            let choice = if n_open == 1 {
                open.iter().position(|&b| b).expect("one open option")
            } else {
                let mut logits = None;
                let mut raw = Vec::new();
                let mut probs = Vec::new();
                if let (Some(sc), Some((_, _, gv)), Some(h)) =
                    (self.scorer.as_mut(), new_rep, hidden)
                {
                    let hq = sc.tape.gather_rows(h, &[q])?;
                    let inp = sc.tape.concat_cols(&[gv, hq, sc.z])?;
                    let l = mlp(sc.tape, inp, &sc.model.ids.bond)?;
                    raw = softmax_of(sc.tape.value(l).data(), None);
                    probs = softmax_of(sc.tape.value(l).data(), Some(&open));
                    logits = Some(l);
                }
                let c = ask(
                    self.driver,
                    &mut self.decisions,
                    Choice::Bond,
                    &StepContext {
                        graph: &self.state.graph,
                        front: v,
                        new_atom: Some(u),
                        partner: Some(q),
                        open: &open,
                        raw: &raw,
                        probs: &probs,
                    },
                )?;
                if let (Some(sc), Some(l)) = (self.scorer.as_mut(), logits) {
                    let lsm = sc.tape.log_softmax(l, Some(&open))?;
                    let term = sc.tape.pick(lsm, 0, c);
                    sc.terms.push(term);
                }
                c
            };
            if choice == NO_BOND {
                continue;
            }
            self.state.graph = self.state.graph.with_bond(q, u, BondOrder::ALL[choice])?;
            if let (Some(sc), Some((e_u, acc, _)), Some(h)) =
                (self.scorer.as_mut(), new_rep, hidden)
            {
                let hq = sc.tape.gather_rows(h, &[q])?;
                let bemb = sc.tape.param(sc.model.ids.bond_emb);
                let be = sc.tape.gather_rows(bemb, &[choice])?;
                let inp = sc.tape.concat_cols(&[hq, be])?;
                let m = linear(sc.tape, inp, (sc.model.ids.g.w_m, sc.model.ids.g.b_m))?;
                let m = sc.tape.relu(m);
                let acc = sc.tape.add(acc, m)?;
                let gv = g_update(sc, e_u, acc)?;
                new_rep = Some((e_u, acc, gv));
            }
        }

        self.state.queue.push_back(u);
        self.state.added += 1;
        if let Some(sc) = self.scorer.as_mut() {
            sc.cache = None;
        }
        Ok(())
    }

    fn run(mut self) -> Result<(MolGraph, Vec<usize>, Option<Var>)> {
        while !self.state.queue.is_empty() {
            self.step()?;
        }
        let lp = match self.scorer.as_mut() {
            Some(sc) => Some(sc.log_prob()?),
            None => None,
        };
        Ok((self.state.graph, self.decisions, lp))
    }
}

/// New-atom representation from its type embedding and the summed messages
/// of the bonds placed so far.
fn g_update(sc: &mut Scorer, e_u: Var, acc: Var) -> Result<Var> {
    let inp = sc.tape.concat_cols(&[e_u, acc])?;
    let y = linear(sc.tape, inp, (sc.model.ids.g.w, sc.model.ids.g.b))?;
    Ok(sc.tape.relu(y))
}

/// Decodes from `start` with `driver` making every choice and records the log
/// probability of the decisions on `tape`. Returns the graph, the decision
/// sequence and the log probability.
#[allow(clippy::too_many_arguments)]
pub fn decode_on_tape<D: Driver>(
    tape: &mut Tape,
    model: &GenModel,
    start: &MolGraph,
    peripheral: &[usize],
    z: Var,
    driver: &mut D,
    max_steps: usize,
) -> Result<(MolGraph, Vec<usize>, Var)> {
    let dec = Decoder {
        vocab: &model.vocab,
        scorer: Some(Scorer {
            tape,
            model,
            z,
            terms: Vec::new(),
            cache: None,
        }),
        driver,
        state: DecoderState::new(start, peripheral)?,
        max_steps,
        decisions: Vec::new(),
    };
    let (g, d, lp) = dec.run()?;
    Ok((g, d, lp.expect("scored run")))
}

/// Candidate placements of `start` inside `target`: induced embeddings in
/// which every start atom with extra target neighbours is peripheral.
pub fn target_embedding(
    target: &MolGraph,
    start: &MolGraph,
    peripheral: &[usize],
) -> Result<Vec<Vec<usize>>> {
    let mut is_peri = vec![false; start.atom_count()];
    for &p in peripheral {
        if p < is_peri.len() {
            is_peri[p] = true;
        }
    }
    let all = subgraph_matches(target, start, MatchMode::Induced, EMBED_LIMIT)?;
    Ok(all
        .into_iter()
        .filter(|m| {
            (0..start.atom_count()).all(|i| is_peri[i] || target.degree(m[i]) == start.degree(i))
        })
        .collect())
}

/// The decision sequence that rebuilds `target` from `start` in canonical
/// breadth-first order.
pub fn teacher_decisions(
    vocab: &AtomVocab,
    target: &MolGraph,
    start: &MolGraph,
    peripheral: &[usize],
) -> Result<Vec<usize>> {
    let mut last = Error::Containment;
    for emb in target_embedding(target, start, peripheral)? {
        let mut driver = TargetDriver::new(target, vocab, &emb);
        let dec = Decoder {
            vocab,
            scorer: None,
            driver: &mut driver,
            state: DecoderState::new(start, peripheral)?,
            max_steps: usize::MAX,
            decisions: Vec::new(),
        };
        match dec.run() {
            Ok((g, d, _))
                if g.atom_count() == target.atom_count()
                    && g.bond_count() == target.bond_count() =>
            {
                return Ok(d)
            }
            Ok(_) | Err(Error::Containment) => {}
            Err(e @ Error::InvalidGraph(_)) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Log probability on `tape` of decoding `target` from `start` in canonical
/// breadth-first order.
pub fn log_likelihood_on_tape(
    tape: &mut Tape,
    model: &GenModel,
    target: &MolGraph,
    start: &MolGraph,
    peripheral: &[usize],
    z: Var,
) -> Result<Var> {
    let d = teacher_decisions(&model.vocab, target, start, peripheral)?;
    replay_on_tape(tape, model, start, peripheral, z, &d)
}

/// Log probability on `tape` of a recorded decision sequence.
pub fn replay_on_tape(
    tape: &mut Tape,
    model: &GenModel,
    start: &MolGraph,
    peripheral: &[usize],
    z: Var,
    decisions: &[usize],
) -> Result<Var> {
    let mut driver = ReplayDriver::new(decisions);
    let (_, _, lp) = decode_on_tape(tape, model, start, peripheral, z, &mut driver, usize::MAX)?;
    if !driver.finished() {
        return Err(Error::InvalidArgument(
            "decision sequence has unused entries".into(),
        ));
    }
    Ok(lp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub graph: MolGraph,
    pub decisions: Vec<usize>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompleteOptions {
    pub greedy: bool,
    pub max_steps: usize,
}

impl Default for CompleteOptions {
    fn default() -> Self {
        CompleteOptions {
            greedy: false,
            max_steps: 60,
        }
    }
}

fn z_var(tape: &mut Tape, model: &GenModel, z: &[f64]) -> Result<Var> {
    if z.len() != model.config.latent {
        return Err(Error::Shape {
            op: "latent",
            left: (1, model.config.latent),
            right: (1, z.len()),
        });
    }
    Ok(tape.constant(Tensor::row_vector(z.to_vec())))
}

/// Samples a completion of `start` given latent `z`.
pub fn complete_from<R: Rng + ?Sized>(
    model: &GenModel,
    start: &MolGraph,
    peripheral: &[usize],
    z: &[f64],
    rng: &mut R,
    opts: CompleteOptions,
) -> Result<Completion> {
    let mut tape = Tape::new(&model.store);
    let zv = z_var(&mut tape, model, z)?;
    let mut driver = SampleDriver {
        rng,
        greedy: opts.greedy,
    };
    let (graph, decisions, lp) = decode_on_tape(
        &mut tape,
        model,
        start,
        peripheral,
        zv,
        &mut driver,
        opts.max_steps,
    )?;
    Ok(Completion {
        graph,
        decisions,
        log_prob: tape.value(lp).item(),
    })
}

/// Samples a completion of a rationale given latent `z`.
pub fn complete<R: Rng + ?Sized>(
    model: &GenModel,
    s: &Rationale,
    z: &[f64],
    rng: &mut R,
    opts: CompleteOptions,
) -> Result<Completion> {
    complete_from(model, s.graph(), s.peripheral(), z, rng, opts)
}

/// `log P(g | s, z)` under canonical breadth-first teacher forcing.
pub fn log_likelihood(model: &GenModel, g: &MolGraph, s: &Rationale, z: &[f64]) -> Result<f64> {
    let mut tape = Tape::new(&model.store);
    let zv = z_var(&mut tape, model, z)?;
    let lp = log_likelihood_on_tape(&mut tape, model, g, s.graph(), s.peripheral(), zv)?;
    Ok(tape.value(lp).item())
}

/// Log probability of a recorded decision sequence from `start`.
pub fn log_likelihood_ordered(
    model: &GenModel,
    start: &MolGraph,
    peripheral: &[usize],
    z: &[f64],
    decisions: &[usize],
) -> Result<f64> {
    let mut tape = Tape::new(&model.store);
    let zv = z_var(&mut tape, model, z)?;
    let lp = replay_on_tape(&mut tape, model, start, peripheral, zv, decisions)?;
    Ok(tape.value(lp).item())
}

/// Distributions of one decoding step from `state`, with expansion forced
/// and the mode taken at every other decision.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistributions {
    pub expand: f64,
    pub atom_types: Vec<f64>,
    /// Per consulted queue member: (atom, unmasked, masked).
    pub bonds: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

struct Recorder {
    out: StepDistributions,
}

impl Driver for Recorder {
    fn choose(&mut self, kind: Choice, ctx: &StepContext) -> Result<usize> {
        match kind {
            Choice::Expand => {
                self.out.expand = ctx.probs[1];
                Ok(1)
            }
            Choice::AtomType => {
                self.out.atom_types = ctx.raw.to_vec();
                Ok(argmax(ctx.probs))
            }
            Choice::Bond => {
                self.out.bonds.push((
                    ctx.partner.expect("bond decision"),
                    ctx.raw.to_vec(),
                    ctx.probs.to_vec(),
                ));
                Ok(argmax(ctx.probs))
            }
        }
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = j;
        }
    }
    best
}

pub fn step_distributions(
    model: &GenModel,
    state: &DecoderState,
    z: &[f64],
) -> Result<StepDistributions> {
    let mut tape = Tape::new(&model.store);
    let zv = z_var(&mut tape, model, z)?;
    let mut rec = Recorder {
        out: StepDistributions {
            expand: f64::NAN,
            atom_types: Vec::new(),
            bonds: Vec::new(),
        },
    };
    let mut dec = Decoder {
        vocab: &model.vocab,
        scorer: Some(Scorer {
            tape: &mut tape,
            model,
            z: zv,
            terms: Vec::new(),
            cache: None,
        }),
        driver: &mut rec,
        state: state.clone(),
        max_steps: usize::MAX,
        decisions: Vec::new(),
    };
    dec.step()?;
    Ok(rec.out)
}

/// Every completion reachable within `max_steps` added atoms, with its
/// decision sequence and log probability. Truncated branches are omitted.
pub fn enumerate_completions(
    model: &GenModel,
    start: &MolGraph,
    peripheral: &[usize],
    z: &[f64],
    max_steps: usize,
    limit: usize,
) -> Result<Vec<Completion>> {
    struct Enum {
        prefix: Vec<usize>,
        taken: Vec<usize>,
        options: Vec<Vec<usize>>,
    }
    impl Driver for Enum {
        fn choose(&mut self, _kind: Choice, ctx: &StepContext) -> Result<usize> {
            let opts: Vec<usize> = (0..ctx.open.len()).filter(|&j| ctx.open[j]).collect();
            let k = self.taken.len();
            let c = self.prefix.get(k).copied().unwrap_or(opts[0]);
            self.taken.push(c);
            self.options.push(opts);
            Ok(c)
        }
    }

    let mut out = Vec::new();
    let mut prefix = Vec::new();
    loop {
        let mut tape = Tape::new(&model.store);
        let zv = z_var(&mut tape, model, z)?;
        let mut e = Enum {
            prefix: prefix.clone(),
            taken: Vec::new(),
            options: Vec::new(),
        };
        match decode_on_tape(&mut tape, model, start, peripheral, zv, &mut e, max_steps) {
            Ok((graph, decisions, lp)) => {
                out.push(Completion {
                    graph,
                    decisions,
                    log_prob: tape.value(lp).item(),
                });
                if out.len() > limit {
                    return Err(Error::Resource(format!("more than {limit} completions")));
                }
            }
            Err(Error::Truncated { .. }) => {}
            Err(err) => return Err(err),
        }
        let next = (0..e.taken.len()).rev().find_map(|i| {
            let opts = &e.options[i];
            let at = opts
                .iter()
                .position(|&o| o == e.taken[i])
                .expect("taken is open");
            opts.get(at + 1).map(|&n| (i, n))
        });
        match next {
            Some((i, n)) => {
                prefix = e.taken[..i].to_vec();
                prefix.push(n);
            }
            None => return Ok(out),
        }
    }
}
