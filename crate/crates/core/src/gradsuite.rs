//! The finite-difference gradient suite run by `entmemnet gradcheck`.

use crate::config::TrainConfig;
use crate::entmem::{init_slot, reconstruct_on, EntityInit, F2Params, F2Vars, MemoryPool};
use crate::numgrad::{grad_check, seeded_rng, ParamSet, Rng, Shape, Tape, Tensor};
use crate::qanet::{example_step, PreparedExample, QaParams, ResponseParams, RetrievalParams};
use crate::seqcells::{gru_step, init_gru, init_lstm, lstm_step, GruVars, LstmVars, SentenceVec};
use crate::corpus::EmbeddingTable;
use crate::Result;

/// Largest dimension the suite uses.
pub const MAX_DIM: usize = 8;
/// Bound for smooth losses.
pub const SMOOTH_TOL: f64 = 1e-4;
/// Bound for the hinge-bearing end-to-end loss.
pub const HINGE_TOL: f64 = 1e-3;
const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn vector(n: usize, scale: f64, rng: &mut Rng) -> Tensor {
    Tensor::uniform(Shape::Vector(n), scale, rng)
}

fn check<F>(name: &'static str, tolerance: f64, ps: &ParamSet, f: F) -> Result<CheckOutcome>
where
    F: Fn(&ParamSet) -> Result<(f64, ParamSet)>,
{
    let r = grad_check(f, ps, FD_STEP)?;
    Ok(CheckOutcome {
        name,
        max_rel_error: r.max_rel_error,
        worst: r.worst,
        coordinates: r.coordinates,
        tolerance,
    })
}

fn gru_check(d_in: usize, d_h: usize, rng: &mut Rng) -> Result<CheckOutcome> {
    let mut ps = ParamSet::new();
    init_gru(&mut ps, "", d_in, d_h, 0.6, rng)?;
    ps.insert("h", vector(d_h, 0.8, rng))?;
    ps.insert("x", vector(d_in, 1.0, rng))?;
    let probe = vector(d_h, 1.0, rng);
    check("gru_step", SMOOTH_TOL, &ps, |ps| {
        let mut tape = Tape::new();
        let g = GruVars::bind(&mut tape, ps, "")?;
        let (h, x) = (tape.param(ps, "h")?, tape.param(ps, "x")?);
        let out = gru_step(&mut tape, &g, h, x)?;
        let p = tape.leaf(probe.clone());
        let loss = tape.dot(out, p)?;
        Ok((tape.value(loss).item()?, tape.backward(loss, ps)?))
    })
}

fn lstm_check(d_in: usize, d_h: usize, rng: &mut Rng) -> Result<CheckOutcome> {
    let mut ps = ParamSet::new();
    init_lstm(&mut ps, "", d_in, d_h, 0.6, rng)?;
    ps.insert("h", vector(d_h, 0.8, rng))?;
    ps.insert("c", vector(d_h, 0.8, rng))?;
    ps.insert("x", vector(d_in, 1.0, rng))?;
    let (ph, pc) = (vector(d_h, 1.0, rng), vector(d_h, 1.0, rng));
    check("lstm_step", SMOOTH_TOL, &ps, |ps| {
        let mut tape = Tape::new();
        let l = LstmVars::bind(&mut tape, ps, "")?;
        let (h, c, x) = (tape.param(ps, "h")?, tape.param(ps, "c")?, tape.param(ps, "x")?);
        let (h, c) = lstm_step(&mut tape, &l, h, c, x)?;
        let (ph, pc) = (tape.leaf(ph.clone()), tape.leaf(pc.clone()));
        let a = tape.dot(h, ph)?;
        let b = tape.dot(c, pc)?;
        let loss = tape.add(a, b)?;
        Ok((tape.value(loss).item()?, tape.backward(loss, ps)?))
    })
}

fn reconstruct_check(d_ent: usize, d_sent: usize, rng: &mut Rng) -> Result<CheckOutcome> {
    let mut ps = F2Params::random(d_ent, d_sent, rng)?.params;
    for (k, v) in ps.iter_mut() {
        if k != "s0" {
            v.values_mut().iter_mut().for_each(|x| *x *= 6.0);
        }
    }
    ps.insert("e1", vector(d_ent, 1.0, rng))?;
    ps.insert("e2", vector(d_ent, 1.0, rng))?;
    let target = vector(d_sent, 0.5, rng);
    check("reconstruct", SMOOTH_TOL, &ps, |ps| {
        let mut tape = Tape::new();
        let vars = F2Vars::bind(&mut tape, ps)?;
        let (e1, e2) = (tape.param(ps, "e1")?, tape.param(ps, "e2")?);
        let s = reconstruct_on(&mut tape, &vars, &[e1, e2, e1])?;
        let t = tape.leaf(target.clone());
        let d = tape.sub(s, t)?;
        let loss = tape.sq_norm(d)?;
        Ok((tape.value(loss).item()?, tape.backward(loss, ps)?))
    })
}

fn loss_full_check(d_ent: usize, d_sent: usize, seed: u64, rng: &mut Rng) -> Result<CheckOutcome> {
    const VOCAB: usize = 6;
    let mut qa = QaParams::random(VOCAB, d_ent, d_sent, rng)?;
    for (_, v) in qa.retrieval.params.iter_mut().chain(qa.response.word.iter_mut()) {
        v.values_mut().iter_mut().for_each(|x| *x *= 8.0);
    }
    let init = EntityInit::new(EmbeddingTable::new(d_ent), seed);
    let mut pool = MemoryPool::new(0, d_ent);
    for (i, e) in ["mary", "kitchen", "john"].iter().enumerate() {
        init_slot(&mut pool, e, &init, i)?;
    }
    let ex = PreparedExample {
        pool,
        question: SentenceVec {
            vector: vector(d_sent, 1.0, rng),
            source: None,
        },
        answer: 3,
        related: vec!["mary".into(), "kitchen".into()],
    };
    // A vanishing stopping threshold keeps the hop count fixed under
    // the finite-difference perturbations.
    let cfg = TrainConfig {
        d_ent,
        d_sent,
        eps: 1e-12,
        lambda: 1e-3,
        ..TrainConfig::default()
    };
    let mut joint = ParamSet::new();
    joint.absorb("retrieval.", qa.retrieval.params.clone())?;
    joint.absorb("word.", qa.response.word.clone())?;
    let seq = qa.response.seq.clone();
    check("loss_full", HINGE_TOL, &joint, |ps| {
        let q = QaParams {
            retrieval: RetrievalParams::from_params(ps.extract("retrieval."))?,
            response: ResponseParams::from_params(ps.extract("word."), seq.clone())?,
        };
        let step = example_step(&q, &ex, &cfg, &[])?;
        let mut g = ParamSet::new();
        g.absorb("retrieval.", step.grads.0)?;
        g.absorb("word.", step.grads.1)?;
        Ok((step.loss, g))
    })
}

/// Runs the four checks at `d_ent` × `d_sent`, each capped at [`MAX_DIM`].
pub fn run_suite(d_ent: usize, d_sent: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let (de, ds) = (d_ent.clamp(1, MAX_DIM), d_sent.clamp(1, MAX_DIM));
    let mut rng = seeded_rng(seed);
    Ok(vec![
        gru_check(de, ds, &mut rng)?,
        lstm_check(de, ds, &mut rng)?,
        reconstruct_check(de, ds, &mut rng)?,
        loss_full_check(de, ds, seed, &mut rng)?,
    ])
}
