//! The memory pool of entity states and the generalization network that
//! folds each sentence vector back into the states of its entities.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::corpus::{EmbeddingTable, Statement, Story};
use crate::numgrad::{seeded_rng, sgd_step, ParamSet, Rng, Shape, Tape, Tensor, Var, INIT_SCALE};
use crate::seqcells::{encode, gru_step, init_gru, GruVars, LstmParams, SentenceVec};
use crate::vocab::Vocab;
use crate::{Error, Result};

/// Half-width of the uniform draw for entities missing from the table.
pub const UNK_SCALE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct EntitySlot {
    pub token: String,
    pub state: Tensor,
    /// Index of the statement that created the slot.
    pub created_at: usize,
}

/// One slot per distinct entity token, in creation order.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryPool {
    pub story: usize,
    dim: usize,
    slots: IndexMap<String, EntitySlot>,
}

impl MemoryPool {
    pub fn new(story: usize, dim: usize) -> Self {
        MemoryPool {
            story,
            dim,
            slots: IndexMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&EntitySlot> {
        self.slots.get(token)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.slots.contains_key(token)
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.slots.get_index_of(token)
    }

    pub fn slots(&self) -> impl Iterator<Item = &EntitySlot> {
        self.slots.values()
    }

    pub fn slot_at(&self, i: usize) -> Option<&EntitySlot> {
        self.slots.get_index(i).map(|(_, s)| s)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    fn state(&self, token: &str) -> Result<&Tensor> {
        self.slots
            .get(token)
            .map(|s| &s.state)
            .ok_or_else(|| Error::MissingSlot(token.to_string()))
    }
}

fn fnv1a(token: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Where new slots take their initial state from.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityInit {
    pub table: EmbeddingTable,
    /// Seeds the fallback draw for tokens missing from `table`.
    pub seed: u64,
}

impl EntityInit {
    pub fn new(table: EmbeddingTable, seed: u64) -> Self {
        EntityInit { table, seed }
    }

    /// Initial state of `token`: its table row, or a uniform draw in
    /// `±UNK_SCALE` seeded by the token and `seed`.
    pub fn state(&self, token: &str) -> Tensor {
        match self.table.get(token) {
            Some(row) => Tensor::from_parts_unchecked(Shape::Vector(row.len()), row.to_vec()),
            None => {
                let mut rng = seeded_rng(fnv1a(token) ^ self.seed);
                Tensor::uniform(Shape::Vector(self.table.dim()), UNK_SCALE, &mut rng)
            }
        }
    }
}

/// Creates the slot for `token` unless it exists; existing slots are
/// returned untouched.
pub fn init_slot<'p>(
    pool: &'p mut MemoryPool,
    token: &str,
    init: &EntityInit,
    created_at: usize,
) -> Result<&'p EntitySlot> {
    if init.table.dim() != pool.dim {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension {} does not match entity dimension {}",
            init.table.dim(),
            pool.dim
        )));
    }
    let slot = pool.slots.entry(token.to_string()).or_insert_with(|| EntitySlot {
        token: token.to_string(),
        state: init.state(token),
        created_at,
    });
    Ok(slot)
}

/// Parameters of the reconstruction chain: a GRU under `gru.` and the
/// learned initial state `s0`.
#[derive(Clone, Debug, PartialEq)]
pub struct F2Params {
    pub params: ParamSet,
    pub d_ent: usize,
    pub d_sent: usize,
}

impl F2Params {
    pub fn random(d_ent: usize, d_sent: usize, rng: &mut Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        init_gru(&mut params, "gru.", d_ent, d_sent, INIT_SCALE, rng)?;
        params.insert("s0", Tensor::uniform(Shape::Vector(d_sent), INIT_SCALE, rng))?;
        Ok(F2Params { params, d_ent, d_sent })
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let gru = crate::seqcells::GruParams::from_params(params.extract("gru."))?;
        let s0 = params.shape_of("s0")?;
        if s0 != Shape::Vector(gru.hidden) || params.len() != gru.params.len() + 1 {
            return Err(Error::InvalidArgument("f2 parameters do not form a chain".into()));
        }
        Ok(F2Params {
            params,
            d_ent: gru.input,
            d_sent: gru.hidden,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct F2Vars {
    gru: GruVars,
    s0: Var,
}

impl F2Vars {
    pub fn bind(tape: &mut Tape, p: &ParamSet) -> Result<Self> {
        Ok(F2Vars {
            gru: GruVars::bind(tape, p, "gru.")?,
            s0: tape.param(p, "s0")?,
        })
    }
}

/// `S^k = tanh(GRU(S^{k-1}, e_k))` from `s0` over `states`; returns the last.
pub fn reconstruct_on(tape: &mut Tape, vars: &F2Vars, states: &[Var]) -> Result<Var> {
    if states.is_empty() {
        return Err(Error::NoEntities);
    }
    let mut s = vars.s0;
    for &e in states {
        let next = gru_step(tape, &vars.gru, s, e)?;
        s = tape.tanh(next)?;
    }
    Ok(s)
}

pub fn reconstruct(p: &F2Params, states: &[&Tensor]) -> Result<SentenceVec> {
    let mut tape = Tape::new();
    let vars = F2Vars::bind(&mut tape, &p.params)?;
    let leaves: Vec<Var> = states.iter().map(|s| tape.leaf((*s).clone())).collect();
    let out = reconstruct_on(&mut tape, &vars, &leaves)?;
    Ok(SentenceVec {
        vector: tape.value(out).clone(),
        source: None,
    })
}

/// Builds `‖S' − S‖²` on a tape with one leaf per distinct entity.
fn reconstruction_graph(
    tape: &mut Tape,
    vars: &F2Vars,
    pool: &MemoryPool,
    entities: &[String],
    target: &Tensor,
) -> Result<(Var, Vec<(String, Var)>)> {
    let mut leaves: Vec<(String, Var)> = Vec::new();
    let mut chain = Vec::with_capacity(entities.len());
    for e in entities {
        let v = match leaves.iter().find(|(t, _)| t == e) {
            Some((_, v)) => *v,
            None => {
                let v = tape.leaf(pool.state(e)?.clone());
                leaves.push((e.clone(), v));
                v
            }
        };
        chain.push(v);
    }
    let s = reconstruct_on(tape, vars, &chain)?;
    let t = tape.leaf(target.clone());
    let diff = tape.sub(s, t)?;
    Ok((tape.sq_norm(diff)?, leaves))
}

/// `‖reconstruct(entities) − target‖²` for the current pool.
pub fn reconstruction_error(p: &F2Params, pool: &MemoryPool, entities: &[String], target: &SentenceVec) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = F2Vars::bind(&mut tape, &p.params)?;
    let (loss, _) = reconstruction_graph(&mut tape, &vars, pool, entities, &target.vector)?;
    Ok(tape.value(loss).item()?)
}

/// `steps` gradient-descent updates of the listed entities' states on
/// `‖S' − S‖²` with f2 frozen. Returns the loss seen before each step.
pub fn generalize(
    pool: &mut MemoryPool,
    entities: &[String],
    target: &SentenceVec,
    p: &F2Params,
    steps: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    for e in entities {
        pool.state(e)?;
    }
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut tape = Tape::new();
        let vars = F2Vars::bind(&mut tape, &p.params)?;
        let (loss, leaves) = reconstruction_graph(&mut tape, &vars, pool, entities, &target.vector)?;
        losses.push(tape.value(loss).item()?);
        let adj = tape.adjoints(loss)?;
        apply_state_grads(pool, &leaves, &adj, lr)?;
    }
    Ok(losses)
}

fn apply_state_grads(pool: &mut MemoryPool, leaves: &[(String, Var)], adj: &crate::numgrad::Adjoints, lr: f64) -> Result<()> {
    for (token, v) in leaves {
        let Some(g) = adj.of(*v) else { continue };
        let slot = pool.slots.get_mut(token).expect("checked above");
        for (s, d) in slot.state.values_mut().iter_mut().zip(g.values()) {
            *s -= lr * d;
        }
        if !slot.state.is_finite() {
            return Err(Error::Diverged("entity state update"));
        }
    }
    Ok(())
}

/// A statement after the input module: its sentence vector and entities.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedStatement {
    pub vector: SentenceVec,
    pub entities: Vec<String>,
}

pub fn encode_statements(f1: &LstmParams, vocab: &Vocab, statements: &[Statement]) -> Result<Vec<EncodedStatement>> {
    statements
        .iter()
        .enumerate()
        .map(|(i, st)| {
            let mut vector = encode(f1, &vocab.encode(&st.tokens))?;
            vector.source = Some(i);
            Ok(EncodedStatement {
                vector,
                entities: st.entities.clone(),
            })
        })
        .collect()
}

/// Result of reading one story into a fresh pool.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadOutcome {
    pub pool: MemoryPool,
    /// Statements without entities, which leave the pool alone.
    pub skipped: usize,
}

/// Feeds encoded statements through slot creation and `generalize` with
/// `cfg.mem_steps` steps at `cfg.mem_lr`. f2 stays frozen.
pub fn read_story(
    story: usize,
    statements: &[EncodedStatement],
    f2: &F2Params,
    init: &EntityInit,
    cfg: &TrainConfig,
) -> Result<ReadOutcome> {
    let mut pool = MemoryPool::new(story, init.table.dim());
    let mut skipped = 0;
    for (i, st) in statements.iter().enumerate() {
        if st.entities.is_empty() {
            skipped += 1;
            continue;
        }
        for e in &st.entities {
            init_slot(&mut pool, e, init, i)?;
        }
        generalize(&mut pool, &st.entities, &st.vector, f2, cfg.mem_steps, cfg.mem_lr)?;
    }
    Ok(ReadOutcome { pool, skipped })
}

/// Per-epoch record of f2 training.
#[derive(Clone, Debug, PartialEq)]
pub struct F2Epoch {
    /// Mean reconstruction loss over entity-bearing statements, measured
    /// by re-reading the corpus with the epoch's parameters.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct F2Report {
    pub initial_loss: f64,
    pub epochs: Vec<F2Epoch>,
}

impl F2Report {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |e| e.loss)
    }
}

/// Mean loss each statement has when it is read, before its own updates.
pub fn f2_corpus_loss(stories: &[Vec<EncodedStatement>], f2: &F2Params, init: &EntityInit, cfg: &TrainConfig) -> Result<f64> {
    let per_story: Vec<(f64, usize)> = stories
        .par_iter()
        .map(|statements| {
            let mut pool = MemoryPool::new(0, init.table.dim());
            let mut sum = 0.0;
            let mut n = 0;
            for (i, st) in statements.iter().enumerate() {
                if st.entities.is_empty() {
                    continue;
                }
                for e in &st.entities {
                    init_slot(&mut pool, e, init, i)?;
                }
                sum += reconstruction_error(f2, &pool, &st.entities, &st.vector)?;
                n += 1;
                generalize(&mut pool, &st.entities, &st.vector, f2, cfg.mem_steps, cfg.mem_lr)?;
            }
            Ok((sum, n))
        })
        .collect::<Result<_>>()?;
    let (sum, n) = per_story.iter().fold((0.0, 0), |(s, n), (a, b)| (s + a, n + b));
    if n == 0 {
        return Err(Error::EmptyCorpus("no statement mentions an entity"));
    }
    Ok(sum / n as f64)
}

/// Trains f2 from `init_f2`. Each epoch visits the stories in a seeded
/// shuffle with fresh pools; for every entity-bearing statement, f2 and the
/// statement's entity states take `cfg.mem_steps` joint gradient steps
/// (f2 at `cfg.f2_lr`, states at `cfg.mem_lr`).
pub fn train_f2_from(
    init_f2: F2Params,
    stories: &[Vec<EncodedStatement>],
    init: &EntityInit,
    cfg: &TrainConfig,
) -> Result<(F2Params, F2Report)> {
    let initial_loss = f2_corpus_loss(stories, &init_f2, init, cfg)?;
    let mut f2 = init_f2;
    let mut rng = seeded_rng(cfg.seed ^ 0xf2);
    let mut order: Vec<usize> = (0..stories.len()).collect();
    let mut report = F2Report {
        initial_loss,
        epochs: Vec::with_capacity(cfg.f2_epochs),
    };
    for _ in 0..cfg.f2_epochs {
        order.shuffle(&mut rng);
        for &si in &order {
            let mut pool = MemoryPool::new(si, init.table.dim());
            for (i, st) in stories[si].iter().enumerate() {
                if st.entities.is_empty() {
                    continue;
                }
                for e in &st.entities {
                    init_slot(&mut pool, e, init, i)?;
                }
                for _ in 0..cfg.mem_steps {
                    let mut tape = Tape::new();
                    let vars = F2Vars::bind(&mut tape, &f2.params)?;
                    let (loss, leaves) = reconstruction_graph(&mut tape, &vars, &pool, &st.entities, &st.vector.vector)?;
                    let adj = tape.adjoints(loss)?;
                    let mut g = adj.param_grads(&f2.params);
                    g.clip_norm(cfg.clip);
                    sgd_step(&mut f2.params, &g, cfg.f2_lr)?;
                    apply_state_grads(&mut pool, &leaves, &adj, cfg.mem_lr)?;
                }
            }
        }
        let loss = f2_corpus_loss(stories, &f2, init, cfg)?;
        if !loss.is_finite() {
            return Err(Error::Diverged("f2"));
        }
        report.epochs.push(F2Epoch { loss });
    }
    Ok((f2, report))
}

/// Encodes every story with the frozen `f1` and trains a freshly
/// initialised f2 (seeded by `cfg.seed`).
pub fn train_f2(
    stories: &[Story],
    vocab: &Vocab,
    f1: &LstmParams,
    init: &EntityInit,
    cfg: &TrainConfig,
) -> Result<(F2Params, F2Report)> {
    let encoded = stories
        .par_iter()
        .map(|s| encode_statements(f1, vocab, &s.statements))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = seeded_rng(cfg.seed ^ 0xf20);
    let f2 = F2Params::random(cfg.d_ent, cfg.d_sent, &mut rng)?;
    train_f2_from(f2, &encoded, init, cfg)
}
