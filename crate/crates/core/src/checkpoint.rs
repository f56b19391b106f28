//! Plain-text checkpoints.
//!
//! ```text
//! ENTMEMNN 1
//! config <n>          n key=value lines
//! vocab <n>           n words, one per line, in id order
//! candidates <n>      one line of n word ids (empty when n = 0)
//! tensors <n>         then n blocks:
//! tensor <name>
//! shape <dims..>
//! <values>            one line per matrix row, 17 significant digits
//! end
//! ```
//!
//! Tensor names carry a group prefix: `f1.`, `f2.`, `retrieval.`, `word.`
//! and `seq.`.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::TrainConfig;
use crate::entmem::F2Params;
use crate::model::EntityMemNet;
use crate::numgrad::{ParamSet, Shape, Tensor};
use crate::qanet::{QaParams, ResponseParams, RetrievalParams};
use crate::seqcells::LstmParams;
use crate::vocab::Vocab;

pub const MAGIC: &str = "ENTMEMNN";
pub const VERSION: u32 = 1;

const GROUPS: [&str; 5] = ["f1.", "f2.", "retrieval.", "word.", "seq."];

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: expected `{MAGIC}` header")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads version {VERSION})")]
    Version { found: String },
    #[error("unexpected end of file in {block} block")]
    UnexpectedEnd { block: String },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("tensor `{name}`: shape {shape} needs {expected} values, found {found}")]
    ValueCount {
        name: String,
        shape: Shape,
        expected: usize,
        found: usize,
    },
    #[error("config block: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("inconsistent model: {0}")]
    Model(#[from] crate::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

fn write_tensor(out: &mut String, name: &str, t: &Tensor) {
    let _ = write!(out, "tensor {name}\nshape");
    for d in t.dims() {
        let _ = write!(out, " {d}");
    }
    out.push('\n');
    let width = match t.shape() {
        Shape::Vector(n) => n,
        Shape::Matrix(_, c) => c,
    };
    for row in t.values().chunks(width.max(1)) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
}

fn tensors(m: &EntityMemNet) -> Vec<(String, &Tensor)> {
    let sets: [&ParamSet; 5] = [&m.f1.params, &m.f2.params, &m.qa.retrieval.params, &m.qa.response.word, &m.qa.response.seq];
    GROUPS
        .iter()
        .zip(sets)
        .flat_map(|(g, ps)| ps.iter().map(move |(n, t)| (format!("{g}{n}"), t)))
        .collect()
}

/// Serialises `m`. Equal models give equal text.
pub fn to_text(m: &EntityMemNet) -> String {
    let mut out = format!("{MAGIC} {VERSION}\n");
    let pairs = m.cfg.pairs();
    let _ = writeln!(out, "config {}", pairs.len());
    for (k, v) in pairs {
        let _ = writeln!(out, "{k}={v}");
    }
    let _ = writeln!(out, "vocab {}", m.vocab.len());
    for w in m.vocab.words() {
        let _ = writeln!(out, "{w}");
    }
    let _ = writeln!(out, "candidates {}", m.candidates.len());
    let ids: Vec<String> = m.candidates.iter().map(usize::to_string).collect();
    let _ = writeln!(out, "{}", ids.join(" "));
    let ts = tensors(m);
    let _ = writeln!(out, "tensors {}", ts.len());
    for (name, t) in ts {
        write_tensor(&mut out, &name, t);
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, block: &str) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(CheckpointError::UnexpectedEnd { block: block.to_string() }),
        }
    }

    fn syntax(&self, msg: impl Into<String>) -> CheckpointError {
        CheckpointError::Syntax {
            line: self.line,
            msg: msg.into(),
        }
    }

    /// Reads `<keyword> <count>`.
    fn header(&mut self, keyword: &str) -> Result<usize> {
        let l = self.next(keyword)?;
        l.strip_prefix(keyword)
            .and_then(|r| r.strip_prefix(' '))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| self.syntax(format!("expected `{keyword} <count>`, got `{l}`")))
    }
}

fn read_tensor(lines: &mut Lines) -> Result<(String, Tensor)> {
    let l = lines.next("tensor")?;
    let name = l
        .strip_prefix("tensor ")
        .filter(|n| !n.is_empty())
        .ok_or_else(|| lines.syntax(format!("expected `tensor <name>`, got `{l}`")))?
        .to_string();
    let l = lines.next(&name)?;
    let dims: Option<Vec<usize>> = l
        .strip_prefix("shape")
        .map(|r| r.split_whitespace().map(|d| d.parse().ok()).collect::<Option<Vec<_>>>())
        .unwrap_or(None);
    let shape = match dims.as_deref() {
        Some(&[n]) => Shape::Vector(n),
        Some(&[r, c]) => Shape::Matrix(r, c),
        _ => return Err(lines.syntax(format!("tensor `{name}`: bad shape line `{l}`"))),
    };
    let rows = match shape {
        Shape::Vector(_) => 1,
        Shape::Matrix(r, _) => r,
    };
    let mut values = Vec::with_capacity(shape.len());
    for _ in 0..rows {
        let l = lines.next(&name)?;
        for v in l.split_whitespace() {
            values.push(v.parse::<f64>().map_err(|_| lines.syntax(format!("tensor `{name}`: bad value `{v}`")))?);
        }
    }
    if values.len() != shape.len() {
        return Err(CheckpointError::ValueCount {
            name,
            shape,
            expected: shape.len(),
            found: values.len(),
        });
    }
    let t = Tensor::new(shape, values).map_err(crate::Error::from)?;
    Ok((name, t))
}

/// Parses a checkpoint written by [`to_text`].
pub fn from_text(text: &str) -> Result<EntityMemNet> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let head = lines.next("header").map_err(|_| CheckpointError::BadMagic)?;
    let mut parts = head.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err(CheckpointError::BadMagic);
    }
    let version = parts.next().unwrap_or("");
    if version != VERSION.to_string() || parts.next().is_some() {
        return Err(CheckpointError::Version { found: version.to_string() });
    }

    let n = lines.header("config")?;
    let mut cfg_text = String::new();
    for _ in 0..n {
        cfg_text.push_str(lines.next("config")?);
        cfg_text.push('\n');
    }
    let cfg = TrainConfig::parse(&cfg_text)?;

    let n = lines.header("vocab")?;
    let mut words = Vec::with_capacity(n);
    for _ in 0..n {
        words.push(lines.next("vocab")?.to_string());
    }
    let vocab = Vocab::from_words(words).ok_or_else(|| lines.syntax("vocabulary lacks reserved words or repeats a word"))?;

    let n = lines.header("candidates")?;
    let l = lines.next("candidates")?;
    let candidates: Vec<usize> = l
        .split_whitespace()
        .map(|t| t.parse().ok().filter(|&id| id < vocab.len()))
        .collect::<Option<_>>()
        .ok_or_else(|| lines.syntax(format!("bad candidate list `{l}`")))?;
    if candidates.len() != n {
        return Err(lines.syntax(format!("expected {n} candidates, found {}", candidates.len())));
    }

    let n = lines.header("tensors")?;
    let mut sets: [ParamSet; 5] = Default::default();
    for _ in 0..n {
        let (name, t) = read_tensor(&mut lines)?;
        let Some(g) = GROUPS.iter().position(|g| name.starts_with(g)) else {
            return Err(lines.syntax(format!("tensor `{name}` has no known group prefix")));
        };
        sets[g].insert(&name[GROUPS[g].len()..], t).map_err(crate::Error::from)?;
    }
    if lines.next("end")? != "end" {
        return Err(lines.syntax("expected `end`"));
    }
    if let Some((i, _)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(CheckpointError::Syntax {
            line: i + 1,
            msg: "content after `end`".into(),
        });
    }

    let [f1, f2, retrieval, word, seq] = sets;
    let f1 = LstmParams::from_params(f1)?;
    let f2 = F2Params::from_params(f2)?;
    let qa = QaParams {
        retrieval: RetrievalParams::from_params(retrieval)?,
        response: ResponseParams::from_params(word, seq)?,
    };
    let dims_ok = f1.vocab_size == vocab.len()
        && qa.response.vocab_size == vocab.len()
        && f1.d_emb == cfg.d_ent
        && f1.d_hidden == cfg.d_sent
        && (f2.d_ent, f2.d_sent) == (cfg.d_ent, cfg.d_sent)
        && (qa.retrieval.d_ent, qa.retrieval.d_sent) == (cfg.d_ent, cfg.d_sent);
    if !dims_ok {
        return Err(crate::Error::InvalidArgument("tensor shapes disagree with config or vocabulary".into()).into());
    }
    Ok(EntityMemNet {
        cfg,
        vocab,
        f1,
        f2,
        qa,
        candidates,
    })
}

pub fn save(m: &EntityMemNet, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(m))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<EntityMemNet> {
    from_text(&std::fs::read_to_string(path)?)
}
