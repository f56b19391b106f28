//! Gated recurrent cells and the LSTM sentence autoencoder.
//!
//! Parameters live in [`ParamSet`]s under fixed key names; a cell is bound to
//! a [`Tape`] once per forward pass and then stepped any number of times.

use rand::seq::SliceRandom;

use crate::config::TrainConfig;
use crate::numgrad::{seeded_rng, ParamSet, Rng, Shape, Tape, Tensor, Var, INIT_SCALE};
use crate::vocab::EOS;
use crate::{Error, Result};

const GRU_GATES: [&str; 3] = ["z", "r", "h"];
const LSTM_GATES: [&str; 4] = ["i", "f", "o", "g"];

/// Init range of the autoencoder's LSTM weights. At the shared small range
/// the encoder state barely depends on early tokens and pretraining settles
/// on a plain language model.
pub const LSTM_INIT_SCALE: f64 = 0.4;

fn init_gates(
    ps: &mut ParamSet,
    prefix: &str,
    gates: &[&str],
    input: usize,
    hidden: usize,
    scale: f64,
    rng: &mut Rng,
) -> Result<()> {
    for g in gates {
        ps.insert(format!("{prefix}w_{g}"), Tensor::uniform(Shape::Matrix(hidden, input), scale, rng))?;
        ps.insert(format!("{prefix}u_{g}"), Tensor::uniform(Shape::Matrix(hidden, hidden), scale, rng))?;
        ps.insert(format!("{prefix}b_{g}"), Tensor::uniform(Shape::Vector(hidden), scale, rng))?;
    }
    Ok(())
}

fn check_gates(ps: &ParamSet, prefix: &str, gates: &[&str]) -> Result<(usize, usize)> {
    let (hidden, input) = match ps.shape_of(&format!("{prefix}w_{}", gates[0]))? {
        Shape::Matrix(h, i) => (h, i),
        s => return Err(Error::InvalidArgument(format!("{prefix}w_{} has shape {s}", gates[0]))),
    };
    for g in gates {
        let expect = [
            (format!("{prefix}w_{g}"), Shape::Matrix(hidden, input)),
            (format!("{prefix}u_{g}"), Shape::Matrix(hidden, hidden)),
            (format!("{prefix}b_{g}"), Shape::Vector(hidden)),
        ];
        for (name, shape) in expect {
            let got = ps.shape_of(&name)?;
            if got != shape {
                return Err(Error::InvalidArgument(format!("{name}: expected {shape}, found {got}")));
            }
        }
    }
    Ok((input, hidden))
}

/// `w x + u h + b` for one gate.
fn gate_preact(tape: &mut Tape, w: Var, u: Var, b: Var, x: Var, h: Var) -> Result<Var> {
    let wx = tape.matvec(w, x)?;
    let uh = tape.matvec(u, h)?;
    Ok(tape.add_all(&[wx, uh, b])?)
}

/// Adds the nine GRU tensors under `prefix`.
pub fn init_gru(
    ps: &mut ParamSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    scale: f64,
    rng: &mut Rng,
) -> Result<()> {
    init_gates(ps, prefix, &GRU_GATES, input, hidden, scale, rng)
}

/// Adds the twelve LSTM tensors under `prefix`.
pub fn init_lstm(
    ps: &mut ParamSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    scale: f64,
    rng: &mut Rng,
) -> Result<()> {
    init_gates(ps, prefix, &LSTM_GATES, input, hidden, scale, rng)
}

/// GRU weights bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    w: [Var; 3],
    u: [Var; 3],
    b: [Var; 3],
}

impl GruVars {
    pub fn bind(tape: &mut Tape, ps: &ParamSet, prefix: &str) -> Result<Self> {
        let mut bind = |kind: &str, g: usize| tape.param(ps, &format!("{prefix}{kind}_{}", GRU_GATES[g]));
        Ok(GruVars {
            w: [bind("w", 0)?, bind("w", 1)?, bind("w", 2)?],
            u: [bind("u", 0)?, bind("u", 1)?, bind("u", 2)?],
            b: [bind("b", 0)?, bind("b", 1)?, bind("b", 2)?],
        })
    }
}

/// One GRU update with `h` as the carried state and `x` as the input:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h̄  = tanh(W_h x + U_h (r ∘ h) + b_h)
/// h' = (1 - z) ∘ h + z ∘ h̄
/// ```
pub fn gru_step(tape: &mut Tape, g: &GruVars, h: Var, x: Var) -> Result<Var> {
    let z = gate_preact(tape, g.w[0], g.u[0], g.b[0], x, h)?;
    let z = tape.sigmoid(z)?;
    let r = gate_preact(tape, g.w[1], g.u[1], g.b[1], x, h)?;
    let r = tape.sigmoid(r)?;
    let rh = tape.hadamard(r, h)?;
    let cand = gate_preact(tape, g.w[2], g.u[2], g.b[2], x, rh)?;
    let cand = tape.tanh(cand)?;
    let keep = tape.one_minus(z)?;
    let old = tape.hadamard(keep, h)?;
    let new = tape.hadamard(z, cand)?;
    Ok(tape.add(old, new)?)
}

/// Stand-alone GRU cell with unprefixed parameter names.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub params: ParamSet,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn random(input: usize, hidden: usize, scale: f64, rng: &mut Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        init_gru(&mut params, "", input, hidden, scale, rng)?;
        Ok(GruParams { params, input, hidden })
    }

    pub fn zeros(input: usize, hidden: usize) -> Result<Self> {
        let mut rng = seeded_rng(0);
        let mut g = Self::random(input, hidden, 0.0, &mut rng)?;
        g.params.fill_zero();
        Ok(g)
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let (input, hidden) = check_gates(&params, "", &GRU_GATES)?;
        Ok(GruParams { params, input, hidden })
    }

    pub fn step(&self, h: &Tensor, x: &Tensor) -> Result<Tensor> {
        self.check_dims(h, x)?;
        let mut tape = Tape::new();
        let g = GruVars::bind(&mut tape, &self.params, "")?;
        let h = tape.leaf(h.clone());
        let x = tape.leaf(x.clone());
        let out = gru_step(&mut tape, &g, h, x)?;
        Ok(tape.value(out).clone())
    }

    fn check_dims(&self, h: &Tensor, x: &Tensor) -> Result<()> {
        if h.shape() != Shape::Vector(self.hidden) || x.shape() != Shape::Vector(self.input) {
            return Err(crate::NumError::Dim {
                op: "gru_step (state, input)",
                left: h.shape(),
                right: x.shape(),
            }
            .into());
        }
        Ok(())
    }
}

/// LSTM weights bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    w: [Var; 4],
    u: [Var; 4],
    b: [Var; 4],
}

impl LstmVars {
    pub fn bind(tape: &mut Tape, ps: &ParamSet, prefix: &str) -> Result<Self> {
        let mut w = Vec::with_capacity(4);
        let mut u = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for g in LSTM_GATES {
            w.push(tape.param(ps, &format!("{prefix}w_{g}"))?);
            u.push(tape.param(ps, &format!("{prefix}u_{g}"))?);
            b.push(tape.param(ps, &format!("{prefix}b_{g}"))?);
        }
        let arr = |v: Vec<Var>| [v[0], v[1], v[2], v[3]];
        Ok(LstmVars {
            w: arr(w),
            u: arr(u),
            b: arr(b),
        })
    }
}

/// One LSTM update, the single source of truth for the cell:
///
/// ```text
/// i  = σ(W_i x + U_i h + b_i)      input gate
/// f  = σ(W_f x + U_f h + b_f)      forget gate
/// o  = σ(W_o x + U_o h + b_o)      output gate
/// g  = tanh(W_g x + U_g h + b_g)   candidate cell
/// c' = f ∘ c + i ∘ g
/// h' = o ∘ tanh(c')
/// ```
pub fn lstm_step(tape: &mut Tape, p: &LstmVars, h: Var, c: Var, x: Var) -> Result<(Var, Var)> {
    lstm_step_ctx(tape, p, h, c, x, None)
}

/// [`lstm_step`] with an extra per-gate pre-activation term (the decoder's
/// `V_k s` sentence conditioning).
fn lstm_step_ctx(tape: &mut Tape, p: &LstmVars, h: Var, c: Var, x: Var, ctx: Option<&[Var; 4]>) -> Result<(Var, Var)> {
    let mut acts = [h; 4];
    for k in 0..4 {
        let mut pre = gate_preact(tape, p.w[k], p.u[k], p.b[k], x, h)?;
        if let Some(ctx) = ctx {
            pre = tape.add(pre, ctx[k])?;
        }
        acts[k] = if k == 3 { tape.tanh(pre)? } else { tape.sigmoid(pre)? };
    }
    let [i, f, o, g] = acts;
    let fc = tape.hadamard(f, c)?;
    let ig = tape.hadamard(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let tc = tape.tanh(c_new)?;
    let h_new = tape.hadamard(o, tc)?;
    Ok((h_new, c_new))
}

/// A sentence vector and the index of the sentence that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceVec {
    pub vector: Tensor,
    pub source: Option<usize>,
}

/// Parameters of the sentence autoencoder: word embeddings, an encoder LSTM,
/// a decoder LSTM with a learned begin-of-sentence input, and an output
/// projection over the vocabulary. The decoder starts from the sentence
/// vector and also sees it at every step through `dec.v_*`, added to each
/// gate's pre-activation.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub params: ParamSet,
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_hidden: usize,
}

/// Autoencoder weights bound to a tape.
pub struct AutoencoderVars {
    emb: Var,
    bos: Var,
    enc: LstmVars,
    dec: LstmVars,
    ctx: [Var; 4],
    out_w: Var,
    out_b: Var,
}

impl AutoencoderVars {
    pub fn bind(tape: &mut Tape, ps: &ParamSet) -> Result<Self> {
        Ok(AutoencoderVars {
            emb: tape.param(ps, "emb")?,
            bos: tape.param(ps, "bos")?,
            enc: LstmVars::bind(tape, ps, "enc.")?,
            dec: LstmVars::bind(tape, ps, "dec.")?,
            ctx: [
                tape.param(ps, "dec.v_i")?,
                tape.param(ps, "dec.v_f")?,
                tape.param(ps, "dec.v_o")?,
                tape.param(ps, "dec.v_g")?,
            ],
            out_w: tape.param(ps, "out.w")?,
            out_b: tape.param(ps, "out.b")?,
        })
    }
}

impl LstmParams {
    pub fn random(vocab_size: usize, d_emb: usize, d_hidden: usize, rng: &mut Rng) -> Result<Self> {
        if vocab_size <= EOS || d_emb == 0 || d_hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "autoencoder dims vocab={vocab_size} emb={d_emb} hidden={d_hidden}"
            )));
        }
        let mut ps = ParamSet::new();
        ps.insert("emb", Tensor::uniform(Shape::Matrix(vocab_size, d_emb), INIT_SCALE, rng))?;
        ps.insert("bos", Tensor::uniform(Shape::Vector(d_emb), INIT_SCALE, rng))?;
        init_gates(&mut ps, "enc.", &LSTM_GATES, d_emb, d_hidden, LSTM_INIT_SCALE, rng)?;
        init_gates(&mut ps, "dec.", &LSTM_GATES, d_emb, d_hidden, LSTM_INIT_SCALE, rng)?;
        ps.insert("out.w", Tensor::uniform(Shape::Matrix(vocab_size, d_hidden), INIT_SCALE, rng))?;
        ps.insert("out.b", Tensor::uniform(Shape::Vector(vocab_size), INIT_SCALE, rng))?;
        for g in LSTM_GATES {
            ps.insert(format!("dec.v_{g}"), Tensor::uniform(Shape::Matrix(d_hidden, d_hidden), LSTM_INIT_SCALE, rng))?;
        }
        Ok(LstmParams {
            params: ps,
            vocab_size,
            d_emb,
            d_hidden,
        })
    }

    pub fn zeros(vocab_size: usize, d_emb: usize, d_hidden: usize) -> Result<Self> {
        let mut p = Self::random(vocab_size, d_emb, d_hidden, &mut seeded_rng(0))?;
        p.params.fill_zero();
        Ok(p)
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let (vocab_size, d_emb) = match params.shape_of("emb")? {
            Shape::Matrix(v, d) => (v, d),
            s => return Err(Error::InvalidArgument(format!("emb has shape {s}"))),
        };
        let (enc_in, d_hidden) = check_gates(&params, "enc.", &LSTM_GATES)?;
        let (dec_in, dec_hidden) = check_gates(&params, "dec.", &LSTM_GATES)?;
        let ok = enc_in == d_emb
            && dec_in == d_emb
            && dec_hidden == d_hidden
            && params.shape_of("bos")? == Shape::Vector(d_emb)
            && params.shape_of("out.w")? == Shape::Matrix(vocab_size, d_hidden)
            && params.shape_of("out.b")? == Shape::Vector(vocab_size)
            && LSTM_GATES
                .iter()
                .all(|g| params.shape_of(&format!("dec.v_{g}")).ok() == Some(Shape::Matrix(d_hidden, d_hidden)))
            && params.len() == 4 + 2 * 12 + 4;
        if !ok {
            return Err(Error::InvalidArgument("inconsistent autoencoder parameter shapes".into()));
        }
        Ok(LstmParams {
            params,
            vocab_size,
            d_emb,
            d_hidden,
        })
    }

    /// Overwrites embedding rows for which `lookup` returns a vector.
    /// Returns how many rows were replaced.
    pub fn load_embeddings<'a>(&mut self, lookup: impl Fn(usize) -> Option<&'a [f64]>) -> Result<usize> {
        let d = self.d_emb;
        let emb = self.params.get_mut("emb")?;
        let mut replaced = 0;
        for id in 0..self.vocab_size {
            if let Some(row) = lookup(id) {
                if row.len() != d {
                    return Err(Error::InvalidArgument(format!(
                        "embedding row for id {id} has {} values, expected {d}",
                        row.len()
                    )));
                }
                emb.values_mut()[id * d..(id + 1) * d].copy_from_slice(row);
                replaced += 1;
            }
        }
        Ok(replaced)
    }

    pub fn embedding(&self, id: usize) -> Option<&[f64]> {
        let emb = self.params.get("emb").ok()?;
        (id < self.vocab_size).then(|| emb.row(id))
    }

    /// One step of the encoder cell on concrete values.
    pub fn step(&self, h: &Tensor, c: &Tensor, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let hs = Shape::Vector(self.d_hidden);
        if h.shape() != hs || c.shape() != hs || x.shape() != Shape::Vector(self.d_emb) {
            return Err(crate::NumError::Dim {
                op: "lstm_step (state, input)",
                left: h.shape(),
                right: x.shape(),
            }
            .into());
        }
        let mut tape = Tape::new();
        let cell = LstmVars::bind(&mut tape, &self.params, "enc.")?;
        let (h, c, x) = (tape.leaf(h.clone()), tape.leaf(c.clone()), tape.leaf(x.clone()));
        let (h, c) = lstm_step(&mut tape, &cell, h, c, x)?;
        Ok((tape.value(h).clone(), tape.value(c).clone()))
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        if let Some(&id) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::OutOfVocab {
                id,
                vocab: self.vocab_size,
            });
        }
        Ok(())
    }
}

/// Per-gate decoder conditioning `V_k s`, constant over the decode.
fn decoder_context(tape: &mut Tape, vars: &AutoencoderVars, s: Var) -> Result<[Var; 4]> {
    let mut out = [s; 4];
    for (k, v) in vars.ctx.iter().enumerate() {
        out[k] = tape.matvec(*v, s)?;
    }
    Ok(out)
}

fn zero_state(tape: &mut Tape, d: usize) -> Var {
    tape.leaf(Tensor::zeros(Shape::Vector(d)))
}

/// Runs the encoder over `tokens` from a zero state; the final hidden state.
pub fn encode_on(tape: &mut Tape, vars: &AutoencoderVars, d_hidden: usize, tokens: &[usize]) -> Result<Var> {
    let mut h = zero_state(tape, d_hidden);
    let mut c = zero_state(tape, d_hidden);
    for &t in tokens {
        let x = tape.row(vars.emb, t)?;
        (h, c) = lstm_step(tape, &vars.enc, h, c, x)?;
    }
    Ok(h)
}

/// Sentence vector of `tokens`.
pub fn encode(p: &LstmParams, tokens: &[usize]) -> Result<SentenceVec> {
    p.check_tokens(tokens)?;
    let mut tape = Tape::new();
    let vars = AutoencoderVars::bind(&mut tape, &p.params)?;
    let h = encode_on(&mut tape, &vars, p.d_hidden, tokens)?;
    Ok(SentenceVec {
        vector: tape.value(h).clone(),
        source: None,
    })
}

/// Greedy decoding from a sentence vector. The decoder starts from hidden
/// state `s` and a zero cell, is fed the begin-of-sentence vector, then its
/// own previous output; argmax ties go to the lowest word id. Stops after
/// emitting end-of-sentence (not included) or `max_len` tokens.
pub fn decode(p: &LstmParams, s: &SentenceVec, max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    if s.vector.shape() != Shape::Vector(p.d_hidden) {
        return Err(crate::NumError::Dim {
            op: "decode",
            left: s.vector.shape(),
            right: Shape::Vector(p.d_hidden),
        }
        .into());
    }
    let mut tape = Tape::new();
    let vars = AutoencoderVars::bind(&mut tape, &p.params)?;
    let mut h = tape.leaf(s.vector.clone());
    let ctx = decoder_context(&mut tape, &vars, h)?;
    let mut c = zero_state(&mut tape, p.d_hidden);
    let mut x = vars.bos;
    let mut out = Vec::new();
    while out.len() < max_len {
        (h, c) = lstm_step_ctx(&mut tape, &vars.dec, h, c, x, Some(&ctx))?;
        let logits = tape.matvec(vars.out_w, h)?;
        let logits = tape.add(logits, vars.out_b)?;
        let w = tape.value(logits).argmax();
        if w == EOS {
            break;
        }
        out.push(w);
        x = tape.row(vars.emb, w)?;
    }
    Ok(out)
}

/// Teacher-forced reconstruction loss (mean per-token cross-entropy over the
/// sentence plus end-of-sentence) and the number of positions whose argmax
/// matched the target.
fn reconstruction_loss(
    tape: &mut Tape,
    vars: &AutoencoderVars,
    d_hidden: usize,
    tokens: &[usize],
) -> Result<(Var, usize)> {
    let s = encode_on(tape, vars, d_hidden, tokens)?;
    let mut h = s;
    let ctx = decoder_context(tape, vars, s)?;
    let mut c = zero_state(tape, d_hidden);
    let mut x = vars.bos;
    let mut terms = Vec::with_capacity(tokens.len() + 1);
    let mut correct = 0;
    for (pos, &target) in tokens.iter().chain(std::iter::once(&EOS)).enumerate() {
        (h, c) = lstm_step_ctx(tape, &vars.dec, h, c, x, Some(&ctx))?;
        let logits = tape.matvec(vars.out_w, h)?;
        let logits = tape.add(logits, vars.out_b)?;
        if tape.value(logits).argmax() == target {
            correct += 1;
        }
        terms.push(tape.cross_entropy(logits, target)?);
        if pos < tokens.len() {
            x = tape.row(vars.emb, target)?;
        }
    }
    let total = tape.add_all(&terms)?;
    let mean = tape.scale(total, 1.0 / terms.len() as f64)?;
    Ok((mean, correct))
}

/// Per-epoch record of autoencoder pretraining.
#[derive(Clone, Debug, PartialEq)]
pub struct AeEpoch {
    /// Mean per-token cross-entropy of the accepted parameters.
    pub loss: f64,
    /// Teacher-forced next-token accuracy of the accepted parameters.
    pub accuracy: f64,
    pub lr: f64,
    /// False when the epoch raised the loss and was rolled back.
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub initial_loss: f64,
    pub epochs: Vec<AeEpoch>,
}

impl PretrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |e| e.loss)
    }
}

/// Mean loss and teacher-forced accuracy over a corpus, without updates.
pub fn corpus_loss(p: &LstmParams, corpus: &[Vec<usize>]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut positions = 0usize;
    for s in corpus {
        let mut tape = Tape::new();
        let vars = AutoencoderVars::bind(&mut tape, &p.params)?;
        let (l, c) = reconstruction_loss(&mut tape, &vars, p.d_hidden, s)?;
        loss += tape.value(l).item()?;
        correct += c;
        positions += s.len() + 1;
    }
    Ok((loss / corpus.len() as f64, correct as f64 / positions as f64))
}

/// Greedy round-trip accuracy: the fraction of target positions (tokens plus
/// end-of-sentence) that `decode(encode(s))` reproduces.
pub fn reconstruction_accuracy(p: &LstmParams, corpus: &[Vec<usize>]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for s in corpus {
        let v = encode(p, s)?;
        let mut out = decode(p, &v, s.len() + 1)?;
        if out.len() <= s.len() {
            out.push(EOS);
        }
        let target = s.iter().copied().chain(std::iter::once(EOS));
        hits += target.zip(&out).filter(|(a, b)| a == *b).count();
        total += s.len() + 1;
    }
    Ok(hits as f64 / total.max(1) as f64)
}

/// Trains the autoencoder from a random initialisation seeded by `cfg.seed`.
pub fn pretrain_autoencoder(
    corpus: &[Vec<usize>],
    vocab_size: usize,
    cfg: &TrainConfig,
) -> Result<(LstmParams, PretrainReport)> {
    let mut rng = seeded_rng(cfg.seed ^ 0xae);
    let init = LstmParams::random(vocab_size, cfg.d_ent, cfg.d_sent, &mut rng)?;
    pretrain_from(init, corpus, cfg)
}

/// Per-sentence SGD on the reconstruction loss, `cfg.ae_epochs` epochs at
/// `cfg.ae_lr` with gradients clipped to `cfg.clip`. After each epoch the
/// corpus loss is measured; if it rose, the epoch is rolled back and the
/// learning rate halved, so the recorded losses never increase.
pub fn pretrain_from(
    init: LstmParams,
    corpus: &[Vec<usize>],
    cfg: &TrainConfig,
) -> Result<(LstmParams, PretrainReport)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("autoencoder pretraining"));
    }
    for s in corpus {
        init.check_tokens(s)?;
    }
    let mut p = init;
    let mut rng = seeded_rng(cfg.seed ^ 0xae5);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let (mut best, mut best_acc) = corpus_loss(&p, corpus)?;
    if !best.is_finite() {
        return Err(Error::Diverged("autoencoder"));
    }
    let mut report = PretrainReport {
        initial_loss: best,
        epochs: Vec::with_capacity(cfg.ae_epochs),
    };
    let mut lr = cfg.ae_lr;

    for _ in 0..cfg.ae_epochs {
        let snapshot = p.params.clone();
        order.shuffle(&mut rng);
        for &i in &order {
            let mut tape = Tape::new();
            let vars = AutoencoderVars::bind(&mut tape, &p.params)?;
            let (loss, _) = reconstruction_loss(&mut tape, &vars, p.d_hidden, &corpus[i])?;
            let mut g = tape.backward(loss, &p.params)?;
            g.clip_norm(cfg.clip);
            crate::numgrad::sgd_step(&mut p.params, &g, lr)?;
        }
        let (loss, acc) = corpus_loss(&p, corpus)?;
        if !loss.is_finite() {
            return Err(Error::Diverged("autoencoder"));
        }
        let accepted = loss <= best;
        if accepted {
            best = loss;
            best_acc = acc;
        } else {
            p.params = snapshot;
            lr *= 0.5;
        }
        report.epochs.push(AeEpoch {
            loss: best,
            accuracy: best_acc,
            lr,
            accepted,
        });
    }
    Ok((p, report))
}
