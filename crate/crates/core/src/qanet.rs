//! Iterative entity retrieval, the answer networks, the two margin losses
//! and the QA-stage trainer.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::entmem::MemoryPool;
use crate::numgrad::{seeded_rng, sgd_step, ParamSet, Rng, Shape, Tape, Tensor, Var, INIT_SCALE};
use crate::seqcells::{gru_step, init_gru, GruVars, SentenceVec};
use crate::vocab::EOS;
use crate::{Error, Result};

/// Floor of the denominator in the relative-change stopping rule.
const STOP_FLOOR: f64 = 1e-8;

/// Retrieval networks: `q_gru.` updates the query, `o_gru.` accumulates the
/// output feature, `s_gru.` composes an entity into the query for scoring,
/// and `score.w` (1 × d_sent), `score.b` map that to a logit.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalParams {
    pub params: ParamSet,
    pub d_ent: usize,
    pub d_sent: usize,
}

impl RetrievalParams {
    pub fn random(d_ent: usize, d_sent: usize, rng: &mut Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        for prefix in ["q_gru.", "o_gru.", "s_gru."] {
            init_gru(&mut params, prefix, d_ent, d_sent, INIT_SCALE, rng)?;
        }
        params.insert("score.w", Tensor::uniform(Shape::Matrix(1, d_sent), INIT_SCALE, rng))?;
        params.insert("score.b", Tensor::zeros(Shape::Vector(1)))?;
        Ok(RetrievalParams { params, d_ent, d_sent })
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let mut dims = None;
        for prefix in ["q_gru.", "o_gru.", "s_gru."] {
            let g = crate::seqcells::GruParams::from_params(params.extract(prefix))?;
            if dims.is_some_and(|d| d != (g.input, g.hidden)) {
                return Err(Error::InvalidArgument("retrieval cells disagree on dimensions".into()));
            }
            dims = Some((g.input, g.hidden));
        }
        let (d_ent, d_sent) = dims.expect("three cells");
        if params.shape_of("score.w")? != Shape::Matrix(1, d_sent)
            || params.shape_of("score.b")? != Shape::Vector(1)
            || params.len() != 3 * 9 + 2
        {
            return Err(Error::InvalidArgument("malformed scoring parameters".into()));
        }
        Ok(RetrievalParams { params, d_ent, d_sent })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RetrievalVars {
    q: GruVars,
    o: GruVars,
    s: GruVars,
    w: Var,
    b: Var,
}

impl RetrievalVars {
    pub fn bind(tape: &mut Tape, p: &ParamSet) -> Result<Self> {
        Ok(RetrievalVars {
            q: GruVars::bind(tape, p, "q_gru.")?,
            o: GruVars::bind(tape, p, "o_gru.")?,
            s: GruVars::bind(tape, p, "s_gru.")?,
            w: tape.param(p, "score.w")?,
            b: tape.param(p, "score.b")?,
        })
    }
}

/// Answer networks. `word` holds `w` (vocab × d_sent) and `b`; `seq` holds
/// the generation cell `gru.` and word embeddings `emb` used only by
/// [`answer_sequence`].
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseParams {
    pub word: ParamSet,
    pub seq: ParamSet,
    pub vocab_size: usize,
}

impl ResponseParams {
    pub fn random(vocab_size: usize, d_ent: usize, d_sent: usize, rng: &mut Rng) -> Result<Self> {
        let mut word = ParamSet::new();
        word.insert("w", Tensor::uniform(Shape::Matrix(vocab_size, d_sent), INIT_SCALE, rng))?;
        word.insert("b", Tensor::zeros(Shape::Vector(vocab_size)))?;
        let mut seq = ParamSet::new();
        init_gru(&mut seq, "gru.", d_ent, d_sent, INIT_SCALE, rng)?;
        seq.insert("emb", Tensor::uniform(Shape::Matrix(vocab_size, d_ent), INIT_SCALE, rng))?;
        Ok(ResponseParams { word, seq, vocab_size })
    }

    pub fn from_params(word: ParamSet, seq: ParamSet) -> Result<Self> {
        let (v, d) = match word.shape_of("w")? {
            Shape::Matrix(v, d) => (v, d),
            s => return Err(Error::InvalidArgument(format!("response w has shape {s}"))),
        };
        let g = crate::seqcells::GruParams::from_params(seq.extract("gru."))?;
        if word.shape_of("b")? != Shape::Vector(v)
            || word.len() != 2
            || g.hidden != d
            || seq.shape_of("emb")? != Shape::Matrix(v, g.input)
            || seq.len() != 10
        {
            return Err(Error::InvalidArgument("malformed response parameters".into()));
        }
        Ok(ResponseParams { word, seq, vocab_size: v })
    }
}

/// Everything trained in the QA stage plus the sequence generator.
#[derive(Clone, Debug, PartialEq)]
pub struct QaParams {
    pub retrieval: RetrievalParams,
    pub response: ResponseParams,
}

impl QaParams {
    pub fn random(vocab_size: usize, d_ent: usize, d_sent: usize, rng: &mut Rng) -> Result<Self> {
        Ok(QaParams {
            retrieval: RetrievalParams::random(d_ent, d_sent, rng)?,
            response: ResponseParams::random(vocab_size, d_ent, d_sent, rng)?,
        })
    }

    /// `‖Θ‖²` over the regularised parameters (retrieval and answer word).
    pub fn theta_sq_norm(&self) -> f64 {
        self.retrieval.params.sq_norm() + self.response.word.sq_norm()
    }
}

/// `sigmoid(W · gru(Q, e) + b)` as a length-1 variable.
fn score_on(tape: &mut Tape, rv: &RetrievalVars, e: Var, q: Var) -> Result<Var> {
    let composed = gru_step(tape, &rv.s, q, e)?;
    let logit = tape.matvec(rv.w, composed)?;
    let logit = tape.add(logit, rv.b)?;
    Ok(tape.sigmoid(logit)?)
}

/// Probability that entity state `e` is selected under query `q`.
pub fn score_entity(p: &RetrievalParams, e: &Tensor, q: &Tensor) -> Result<f64> {
    check_vec("score_entity (entity)", e, p.d_ent)?;
    check_vec("score_entity (query)", q, p.d_sent)?;
    let mut tape = Tape::new();
    let rv = RetrievalVars::bind(&mut tape, &p.params)?;
    let (e, q) = (tape.leaf(e.clone()), tape.leaf(q.clone()));
    let s = score_on(&mut tape, &rv, e, q)?;
    Ok(tape.value(s).values()[0])
}

fn check_vec(op: &'static str, t: &Tensor, n: usize) -> Result<()> {
    if t.shape() != Shape::Vector(n) {
        return Err(crate::NumError::Dim {
            op,
            left: t.shape(),
            right: Shape::Vector(n),
        }
        .into());
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hop {
    pub token: String,
    /// Position of the selected slot in the pool.
    pub slot: usize,
    pub score: f64,
    /// `‖O_j − O_{j−1}‖`.
    pub delta: f64,
    /// `delta / ‖O_{j−1}‖`, the quantity compared with the stopping threshold.
    pub rel_change: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalTrace {
    pub hops: Vec<Hop>,
    pub output: Tensor,
}

struct TapedRetrieval {
    output: Var,
    hops: Vec<Hop>,
    /// Per pool slot: the score at its selection hop, or its first-hop
    /// score if it was never selected.
    scores: Vec<Var>,
}

fn retrieve_on(
    tape: &mut Tape,
    rv: &RetrievalVars,
    pool: &MemoryPool,
    q: Var,
    max_hops: usize,
    eps: f64,
) -> Result<TapedRetrieval> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if max_hops == 0 || !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("max_hops {max_hops} and eps {eps} must be positive")));
    }
    let entities: Vec<Var> = pool.slots().map(|s| tape.leaf(s.state.clone())).collect();
    let mut scores: Vec<Option<Var>> = vec![None; entities.len()];
    let mut selected = vec![false; entities.len()];
    let (mut o, mut qj) = (q, q);
    let mut hops = Vec::new();
    let limit = max_hops.min(entities.len());
    for j in 1..=limit {
        let mut best: Option<(usize, Var, f64)> = None;
        for (k, &e) in entities.iter().enumerate() {
            if selected[k] {
                continue;
            }
            let s = score_on(tape, rv, e, qj)?;
            let v = tape.value(s).values()[0];
            if j == 1 {
                scores[k] = Some(s);
            }
            if best.is_none_or(|(_, _, b)| v > b) {
                best = Some((k, s, v));
            }
        }
        let (k, s, v) = best.expect("an unselected slot remains");
        selected[k] = true;
        scores[k] = Some(s);
        let weighted = tape.scale_by(s, entities[k])?;
        let next = gru_step(tape, &rv.o, o, weighted)?;
        let next = tape.tanh(next)?;
        let (prev_v, next_v) = (tape.value(o), tape.value(next));
        let delta = next_v
            .values()
            .iter()
            .zip(prev_v.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let rel = delta / prev_v.norm().max(STOP_FLOOR);
        hops.push(Hop {
            token: pool.slot_at(k).expect("index from pool").token.clone(),
            slot: k,
            score: v,
            delta,
            rel_change: rel,
        });
        o = next;
        if rel < eps {
            break;
        }
        if j < limit {
            let nq = gru_step(tape, &rv.q, qj, entities[k])?;
            qj = tape.tanh(nq)?;
        }
    }
    Ok(TapedRetrieval {
        output: o,
        hops,
        scores: scores.into_iter().map(|s| s.expect("every slot scored at hop 1")).collect(),
    })
}

/// Selects up to `max_hops` distinct entities, accumulating the output
/// feature `O` from `O_0 = q`; stops once the relative change of `O`
/// falls below `eps`.
pub fn output_feature(
    pool: &MemoryPool,
    q: &SentenceVec,
    p: &RetrievalParams,
    max_hops: usize,
    eps: f64,
) -> Result<RetrievalTrace> {
    check_vec("output_feature (question)", &q.vector, p.d_sent)?;
    if pool.dim() != p.d_ent {
        return Err(Error::InvalidArgument(format!("pool dimension {} vs {}", pool.dim(), p.d_ent)));
    }
    let mut tape = Tape::new();
    let rv = RetrievalVars::bind(&mut tape, &p.params)?;
    let qv = tape.leaf(q.vector.clone());
    let r = retrieve_on(&mut tape, &rv, pool, qv, max_hops, eps)?;
    Ok(RetrievalTrace {
        hops: r.hops,
        output: tape.value(r.output).clone(),
    })
}

/// `softmax(tanh(W' O + b))`.
fn word_dist_on(tape: &mut Tape, word: &ParamSet, o: Var) -> Result<Var> {
    let w = tape.param(word, "w")?;
    let b = tape.param(word, "b")?;
    let z = tape.matvec(w, o)?;
    let z = tape.add(z, b)?;
    let z = tape.tanh(z)?;
    Ok(tape.softmax(z)?)
}

pub fn answer_word(p: &ResponseParams, o: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let o = tape.leaf(o.clone());
    let d = word_dist_on(&mut tape, &p.word, o)?;
    Ok(tape.value(d).clone())
}

/// Highest-probability word among `candidates` (all words when empty);
/// ties go to the lowest id.
pub fn predict(dist: &Tensor, candidates: &[usize]) -> usize {
    if candidates.is_empty() {
        return dist.argmax();
    }
    let mut best = candidates[0];
    for &c in candidates {
        let (v, b) = (dist.values()[c], dist.values()[best]);
        if v > b || (v == b && c < best) {
            best = c;
        }
    }
    best
}

/// Greedy generation: emit the argmax word of `O_{i-1}`, then
/// `O_i = tanh(gru(O_{i-1}, emb(w)))`. Stops after emitting end-of-sentence
/// (which is kept) or `max_len` words.
pub fn answer_sequence(p: &ResponseParams, o: &Tensor, max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let mut tape = Tape::new();
    let g = GruVars::bind(&mut tape, &p.seq, "gru.")?;
    let emb = tape.param(&p.seq, "emb")?;
    let mut o = tape.leaf(o.clone());
    let mut out = Vec::new();
    loop {
        let d = word_dist_on(&mut tape, &p.word, o)?;
        let w = tape.value(d).argmax();
        out.push(w);
        if w == EOS || out.len() == max_len {
            return Ok(out);
        }
        let x = tape.row(emb, w)?;
        let next = gru_step(&mut tape, &g, o, x)?;
        o = tape.tanh(next)?;
    }
}

fn candidate_list(candidates: &[usize], vocab_size: usize) -> Vec<usize> {
    if candidates.is_empty() {
        (0..vocab_size).collect()
    } else {
        candidates.to_vec()
    }
}

/// `Σ_{l ≠ a} max(0, γ − (p_a − p_l))` over the candidate words.
pub fn word_margin(dist: &Tensor, answer: usize, candidates: &[usize], gamma: f64) -> f64 {
    let p = dist.values();
    candidate_list(candidates, p.len())
        .into_iter()
        .filter(|&l| l != answer)
        .map(|l| (gamma - (p[answer] - p[l])).max(0.0))
        .sum()
}

/// `Σ_{r, i} max(0, γ − (p_r − p_i))` over related `r` and unrelated `i`
/// entities present in `scores`.
pub fn entity_margin(scores: &[(String, f64)], related: &[String], gamma: f64) -> Result<f64> {
    let (rel, unrel): (Vec<_>, Vec<_>) = scores.iter().partition(|(t, _)| related.contains(t));
    if rel.is_empty() {
        return Err(Error::NoRelatedEntities);
    }
    Ok(rel
        .iter()
        .flat_map(|(_, pr)| unrel.iter().map(move |(_, pi)| (gamma - (pr - pi)).max(0.0)))
        .sum())
}

/// The fully supervised loss from already computed scores and answer
/// distribution: entity margins + word margins + `λ · theta_sq`.
#[allow(clippy::too_many_arguments)]
pub fn loss_full(
    scores: &[(String, f64)],
    related: &[String],
    dist: &Tensor,
    answer: usize,
    candidates: &[usize],
    gamma: f64,
    lambda: f64,
    theta_sq: f64,
) -> Result<f64> {
    Ok(entity_margin(scores, related, gamma)? + loss_weak(dist, answer, candidates, gamma, lambda, theta_sq))
}

/// Word margins + `λ · theta_sq`.
pub fn loss_weak(dist: &Tensor, answer: usize, candidates: &[usize], gamma: f64, lambda: f64, theta_sq: f64) -> f64 {
    word_margin(dist, answer, candidates, gamma) + lambda * theta_sq
}

/// A question with its story already read into a memory pool.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedExample {
    pub pool: MemoryPool,
    pub question: SentenceVec,
    pub answer: usize,
    pub related: Vec<String>,
}

impl PreparedExample {
    /// Related entities that made it into the pool.
    pub fn related_in_pool(&self) -> impl Iterator<Item = &String> {
        self.related.iter().filter(|r| self.pool.contains(r))
    }

    pub fn is_supervised(&self) -> bool {
        self.related_in_pool().next().is_some()
    }
}

/// One forward and backward pass on an example.
pub struct StepOutcome {
    pub loss: f64,
    pub prediction: usize,
    pub trace: RetrievalTrace,
    /// Gradients for retrieval and answer-word parameters, in that order.
    pub grads: (ParamSet, ParamSet),
}

/// Loss (full when related entities are in the pool, weak otherwise) and
/// its gradient. Retrieval is a hard argmax, so gradients follow the
/// selected path only.
pub fn example_step(p: &QaParams, ex: &PreparedExample, cfg: &TrainConfig, candidates: &[usize]) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let rv = RetrievalVars::bind(&mut tape, &p.retrieval.params)?;
    let q = tape.leaf(ex.question.vector.clone());
    let r = retrieve_on(&mut tape, &rv, &ex.pool, q, cfg.max_hops, cfg.eps)?;
    let dist = word_dist_on(&mut tape, &p.response.word, r.output)?;

    let mut terms = Vec::new();
    let gamma = cfg.gamma;
    let pa = tape.select(dist, ex.answer)?;
    for l in candidate_list(candidates, p.response.vocab_size) {
        if l == ex.answer {
            continue;
        }
        let pl = tape.select(dist, l)?;
        let gap = tape.sub(pl, pa)?;
        let gap = tape.add_const(gap, gamma)?;
        terms.push(tape.relu(gap)?);
    }
    if ex.is_supervised() {
        let (rel, unrel): (Vec<(usize, &crate::entmem::EntitySlot)>, Vec<_>) =
            ex.pool.slots().enumerate().partition(|(_, s)| ex.related.contains(&s.token));
        for (ri, _) in &rel {
            for (ui, _) in &unrel {
                let gap = tape.sub(r.scores[*ui], r.scores[*ri])?;
                let gap = tape.add_const(gap, gamma)?;
                terms.push(tape.relu(gap)?);
            }
        }
    }
    let theta = p.theta_sq_norm();
    let (mut loss, grads) = if terms.is_empty() {
        (0.0, (p.retrieval.params.zeros_like(), p.response.word.zeros_like()))
    } else {
        let total = tape.add_all(&terms)?;
        let adj = tape.adjoints(total)?;
        (
            tape.value(total).item()?,
            (adj.param_grads(&p.retrieval.params), adj.param_grads(&p.response.word)),
        )
    };
    loss += cfg.lambda * theta;
    let (mut gr, mut gw) = grads;
    add_scaled(&mut gr, &p.retrieval.params, 2.0 * cfg.lambda)?;
    add_scaled(&mut gw, &p.response.word, 2.0 * cfg.lambda)?;

    let dist_v = tape.value(dist).clone();
    Ok(StepOutcome {
        loss,
        prediction: predict(&dist_v, candidates),
        trace: RetrievalTrace {
            hops: r.hops,
            output: tape.value(r.output).clone(),
        },
        grads: (gr, gw),
    })
}

fn add_scaled(acc: &mut ParamSet, x: &ParamSet, c: f64) -> Result<()> {
    if c == 0.0 {
        return Ok(());
    }
    for ((_, a), (_, b)) in acc.iter_mut().zip(x.iter()) {
        for (u, v) in a.values_mut().iter_mut().zip(b.values()) {
            *u += c * v;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct QaEpoch {
    pub loss: f64,
    /// Accuracy of the predictions made before each example's update.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QaReport {
    pub epochs: Vec<QaEpoch>,
    /// Examples left out because their pool was empty.
    pub skipped: usize,
}

/// Sequential SGD over `cfg.qa_epochs` seeded shuffles of the examples,
/// with gradients clipped to `cfg.clip` and step size `cfg.qa_lr`.
pub fn train_qa(
    init: QaParams,
    examples: &[PreparedExample],
    cfg: &TrainConfig,
    candidates: &[usize],
) -> Result<(QaParams, QaReport)> {
    let usable: Vec<usize> = (0..examples.len()).filter(|&i| !examples[i].pool.is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::EmptyCorpus("no question has a nonempty memory pool"));
    }
    let mut p = init;
    let mut rng = seeded_rng(cfg.seed ^ 0x9a);
    let mut order = usable.clone();
    let mut report = QaReport {
        epochs: Vec::with_capacity(cfg.qa_epochs),
        skipped: examples.len() - usable.len(),
    };
    for _ in 0..cfg.qa_epochs {
        order.shuffle(&mut rng);
        let (mut total, mut correct) = (0.0, 0usize);
        for &i in &order {
            let ex = &examples[i];
            let step = example_step(&p, ex, cfg, candidates)?;
            total += step.loss;
            correct += usize::from(step.prediction == ex.answer);
            let (mut gr, mut gw) = step.grads;
            clip_joint(&mut gr, &mut gw, cfg.clip);
            sgd_step(&mut p.retrieval.params, &gr, cfg.qa_lr)?;
            sgd_step(&mut p.response.word, &gw, cfg.qa_lr)?;
        }
        let loss = total / order.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged("question answering"));
        }
        report.epochs.push(QaEpoch {
            loss,
            accuracy: correct as f64 / order.len() as f64,
        });
    }
    Ok((p, report))
}

fn clip_joint(a: &mut ParamSet, b: &mut ParamSet, max_norm: f64) {
    let norm = (a.sq_norm() + b.sq_norm()).sqrt();
    if norm > max_norm && norm > 0.0 {
        let c = max_norm / norm;
        for (_, t) in a.iter_mut().chain(b.iter_mut()) {
            t.values_mut().iter_mut().for_each(|v| *v *= c);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n: usize,
    pub correct: usize,
    /// Predicted word id per example; `None` when the pool was empty.
    pub predictions: Vec<Option<usize>>,
    pub mean_hops: f64,
    /// Fraction of gold related entities (present in the pool) that the
    /// retrieval trace selected; `None` without supervised examples.
    pub related_hit_rate: Option<f64>,
    /// Examples with an empty pool, counted as wrong.
    pub empty_pool: usize,
}

/// Exact-match accuracy and retrieval statistics, computed in parallel.
pub fn evaluate(p: &QaParams, examples: &[PreparedExample], cfg: &TrainConfig, candidates: &[usize]) -> Result<EvalReport> {
    let rows: Vec<Option<(usize, usize, usize, usize)>> = examples
        .par_iter()
        .map(|ex| {
            if ex.pool.is_empty() {
                return Ok(None);
            }
            let trace = output_feature(&ex.pool, &ex.question, &p.retrieval, cfg.max_hops, cfg.eps)?;
            let dist = answer_word(&p.response, &trace.output)?;
            let gold: Vec<&String> = ex.related_in_pool().collect();
            let hits = gold.iter().filter(|g| trace.hops.iter().any(|h| &&h.token == *g)).count();
            Ok(Some((predict(&dist, candidates), trace.hops.len(), hits, gold.len())))
        })
        .collect::<Result<_>>()?;
    let n = examples.len();
    let mut report = EvalReport {
        accuracy: 0.0,
        n,
        correct: 0,
        predictions: Vec::with_capacity(n),
        mean_hops: 0.0,
        related_hit_rate: None,
        empty_pool: 0,
    };
    let (mut hops, mut hits, mut gold) = (0usize, 0usize, 0usize);
    for (row, ex) in rows.iter().zip(examples) {
        match row {
            Some((pred, h, ht, g)) => {
                report.correct += usize::from(*pred == ex.answer);
                report.predictions.push(Some(*pred));
                hops += h;
                hits += ht;
                gold += g;
            }
            None => {
                report.empty_pool += 1;
                report.predictions.push(None);
            }
        }
    }
    let answered = n - report.empty_pool;
    report.accuracy = if n == 0 { 0.0 } else { report.correct as f64 / n as f64 };
    report.mean_hops = if answered == 0 { 0.0 } else { hops as f64 / answered as f64 };
    report.related_hit_rate = (gold > 0).then(|| hits as f64 / gold as f64);
    Ok(report)
}
