//! Flat `key=value` configuration files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key=value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    Value { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            });
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            });
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(ConfigError::Duplicate(key));
        }
    }
    Ok(out)
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
    })
}

/// Every hyperparameter of the staged pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Sentence-vector width (autoencoder hidden size, f2 chain width, O/Q width).
    pub d_sent: usize,
    /// Entity-state width, also the word-embedding width.
    pub d_ent: usize,
    pub max_hops: usize,
    /// Relative-change threshold for stopping retrieval early.
    pub eps: f64,
    /// Ranking margin.
    pub gamma: f64,
    /// Weight of the squared-parameter penalty.
    pub lambda: f64,
    /// Gradient steps per statement when updating entity states.
    pub mem_steps: usize,
    pub mem_lr: f64,
    pub qa_lr: f64,
    pub ae_lr: f64,
    pub f2_lr: f64,
    pub ae_epochs: usize,
    pub f2_epochs: usize,
    pub qa_epochs: usize,
    /// Global gradient-norm clip applied to every parameter update.
    pub clip: f64,
    /// Rank and predict only among words that answer some training question.
    pub restrict_answers: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d_sent: 50,
            d_ent: 50,
            max_hops: 3,
            eps: 1e-3,
            gamma: 0.1,
            lambda: 1e-4,
            mem_steps: 5,
            mem_lr: 0.05,
            qa_lr: 0.01,
            ae_lr: 0.05,
            f2_lr: 0.05,
            ae_epochs: 20,
            f2_epochs: 5,
            qa_epochs: 20,
            clip: 5.0,
            restrict_answers: false,
            seed: 1,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "d_sent", "d_ent", "max_hops", "eps", "gamma", "lambda", "mem_steps", "mem_lr", "qa_lr",
    "ae_lr", "f2_lr", "ae_epochs", "f2_epochs", "qa_epochs", "clip", "restrict_answers", "seed",
];

impl TrainConfig {
    /// Applies one `key=value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d_sent" => self.d_sent = parse_value(key, value)?,
            "d_ent" => self.d_ent = parse_value(key, value)?,
            "max_hops" => self.max_hops = parse_value(key, value)?,
            "eps" => self.eps = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "mem_steps" => self.mem_steps = parse_value(key, value)?,
            "mem_lr" => self.mem_lr = parse_value(key, value)?,
            "qa_lr" => self.qa_lr = parse_value(key, value)?,
            "ae_lr" => self.ae_lr = parse_value(key, value)?,
            "f2_lr" => self.f2_lr = parse_value(key, value)?,
            "ae_epochs" => self.ae_epochs = parse_value(key, value)?,
            "f2_epochs" => self.f2_epochs = parse_value(key, value)?,
            "qa_epochs" => self.qa_epochs = parse_value(key, value)?,
            "clip" => self.clip = parse_value(key, value)?,
            "restrict_answers" => self.restrict_answers = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Builds a config from parsed pairs. Keys listed in `foreign` belong to
    /// another consumer of the same file and are ignored.
    pub fn from_map(map: &BTreeMap<String, String>, foreign: &[&str]) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in map {
            if foreign.contains(&k.as_str()) && !TRAIN_KEYS.contains(&k.as_str()) {
                continue;
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&parse_kv(text)?, &[])
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_sent == 0 || self.d_ent == 0 {
            return Err(ConfigError::Invalid("dimensions must be at least 1".into()));
        }
        if self.max_hops == 0 {
            return Err(ConfigError::Invalid("max_hops must be at least 1".into()));
        }
        let positive = [
            ("eps", self.eps),
            ("gamma", self.gamma),
            ("mem_lr", self.mem_lr),
            ("qa_lr", self.qa_lr),
            ("ae_lr", self.ae_lr),
            ("f2_lr", self.f2_lr),
            ("clip", self.clip),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ConfigError::Invalid(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }

    /// One `key=value` line per field, in a fixed order. Floats use the
    /// shortest representation that parses back to the same bits.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d_sent", self.d_sent.to_string()),
            ("d_ent", self.d_ent.to_string()),
            ("max_hops", self.max_hops.to_string()),
            ("eps", self.eps.to_string()),
            ("gamma", self.gamma.to_string()),
            ("lambda", self.lambda.to_string()),
            ("mem_steps", self.mem_steps.to_string()),
            ("mem_lr", self.mem_lr.to_string()),
            ("qa_lr", self.qa_lr.to_string()),
            ("ae_lr", self.ae_lr.to_string()),
            ("f2_lr", self.f2_lr.to_string()),
            ("ae_epochs", self.ae_epochs.to_string()),
            ("f2_epochs", self.f2_epochs.to_string()),
            ("qa_epochs", self.qa_epochs.to_string()),
            ("clip", self.clip.to_string()),
            ("restrict_answers", self.restrict_answers.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}
