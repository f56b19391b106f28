//! The `entmemnet` command line.
//!
//! Exit codes: 0 on success, 1 for domain errors (bad data, divergence,
//! unreadable files, failed checks), 2 for usage errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint::{self, CheckpointError};
use crate::config::{parse_kv, ConfigError, TrainConfig, TRAIN_KEYS};
use crate::corpus::{
    load_embeddings, mc_to_stories, parse_babi, read_mctest, read_sentiment_dir, simulate, wrap_sentiment, write_babi,
    CorpusError, Lexicon, Story, WorldConfig, WORLD_KEYS,
};
use crate::gradsuite::run_suite;
use crate::model::{EntityMemNet, EpochRow};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] crate::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Failed(String),
}

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Parser, Debug)]
#[command(name = "entmemnet", version, about = "Entity-based memory network for question answering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate where-is stories and write train.txt / test.txt.
    Gendata(GendataArgs),
    /// Run the three training stages and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on bAbI-format data; prints JSON.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Convert multiple-choice or sentiment data to bAbI format.
    Convert(ConvertArgs),
}

#[derive(Args, Debug)]
pub struct GendataArgs {
    /// World configuration (`key=value`); training-only keys are ignored.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// One `--<field>` flag per [`TrainConfig`] field.
#[derive(Debug, Default)]
pub struct ConfigOverrides(pub Vec<(&'static str, String)>);

impl FromArgMatches for ConfigOverrides {
    fn from_arg_matches(m: &ArgMatches) -> std::result::Result<Self, clap::Error> {
        let mut out = Vec::new();
        for &k in TRAIN_KEYS.iter().filter(|&&k| k != "seed") {
            if let Some(v) = m.get_one::<String>(k) {
                out.push((k, v.clone()));
            }
        }
        Ok(ConfigOverrides(out))
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> std::result::Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ConfigOverrides {
    fn augment_args(cmd: clap::Command) -> clap::Command {
        TRAIN_KEYS.iter().filter(|&&k| k != "seed").fold(cmd, |cmd, &k| {
            cmd.arg(
                clap::Arg::new(k)
                    .long(k.replace('_', "-"))
                    .value_name("VALUE")
                    .help_heading("Config overrides"),
            )
        })
    }

    fn augment_args_for_update(cmd: clap::Command) -> clap::Command {
        Self::augment_args(cmd)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training configuration (`key=value`); world-only keys are ignored.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training stories in bAbI format.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Word vectors (`word v1 .. vd` per line) for the embedding init.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Extra entity words, one per line.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Write the JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write one predicted answer per question.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Dimensions and seed come from this configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fail above this relative error instead of the per-check defaults.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConvertMode {
    Mc,
    Sentiment,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    #[arg(long, value_enum)]
    pub mode: ConvertMode,
    /// MCTest `.tsv` file, or the root of a labelled review tree.
    #[arg(long)]
    pub data: PathBuf,
    /// MCTest answer key (`.ans`); required with `--mode mc`.
    #[arg(long)]
    pub answers: Option<PathBuf>,
    /// Output file in bAbI format.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep a seeded, class-balanced sample of this many reviews.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

fn lexicon(extra: Option<&Path>) -> Result<Lexicon> {
    let mut lex = Lexicon::default();
    if let Some(p) = extra {
        lex.extend_from_file(p)?;
    }
    Ok(lex)
}

fn read_kv(path: Option<&Path>) -> Result<std::collections::BTreeMap<String, String>> {
    match path {
        Some(p) => Ok(parse_kv(&read(p)?)?),
        None => Ok(Default::default()),
    }
}

pub fn train_config(path: Option<&Path>, seed: Option<u64>, overrides: &ConfigOverrides) -> Result<TrainConfig> {
    let mut map = read_kv(path)?;
    for (k, v) in &overrides.0 {
        map.insert(k.to_string(), v.clone());
    }
    if let Some(s) = seed {
        map.insert("seed".into(), s.to_string());
    }
    Ok(TrainConfig::from_map(&map, WORLD_KEYS)?)
}

/// Splits one simulation into the train and held-out stories.
pub fn world_split(cfg: &WorldConfig) -> Result<(Vec<Story>, Vec<Story>)> {
    let mut all = simulate(&WorldConfig {
        stories: cfg.stories + cfg.test_stories,
        ..cfg.clone()
    })?;
    let test = all.split_off(cfg.stories);
    Ok((all, test))
}

fn gendata(a: &GendataArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut map = read_kv(a.config.as_deref())?;
    if let Some(s) = a.seed {
        map.insert("seed".into(), s.to_string());
    }
    let cfg = WorldConfig::from_map(&map, TRAIN_KEYS)?;
    let (train, test) = world_split(&cfg)?;
    if train.is_empty() {
        let _ = writeln!(err, "warning: configuration asks for 0 training stories");
    }
    for (name, stories) in [("train.txt", &train), ("test.txt", &test)] {
        write(&a.out.join(name), &write_babi(stories))?;
        let questions: usize = stories.iter().map(|s| s.questions.len()).sum();
        let statements: usize = stories.iter().map(|s| s.statements.len()).sum();
        let _ = writeln!(
            out,
            "{name}: stories={} statements={statements} questions={questions}",
            stories.len()
        );
    }
    Ok(())
}

pub fn metrics_csv(rows: &[EpochRow]) -> String {
    let mut s = String::from("epoch,stage,loss,accuracy\n");
    for r in rows {
        let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.stage.name(), r.loss, acc));
    }
    s
}

fn train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = train_config(a.config.as_deref(), a.seed, &a.overrides)?;
    let lex = lexicon(a.lexicon.as_deref())?;
    let stories = parse_babi(&read(&a.data)?, &lex)?;
    let glove = a.embeddings.as_deref().map(|p| load_embeddings(p, cfg.d_ent)).transpose()?;
    let (model, rows) = EntityMemNet::train(&stories, &cfg, glove.as_ref())?;
    write(&a.out, &checkpoint::to_text(&model))?;
    let metrics = a.metrics.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    write(&metrics, &metrics_csv(&rows))?;
    if let Some(last) = rows.last() {
        let _ = writeln!(
            out,
            "trained {} epochs; final {} loss {:.6}; checkpoint {}",
            rows.len(),
            last.stage.name(),
            last.loss,
            a.out.display()
        );
    }
    Ok(())
}

#[derive(Serialize, Debug, PartialEq)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub n: usize,
    pub mean_hops: f64,
    pub related_entity_hit_rate: Option<f64>,
    /// Question and answer tokens missing from the checkpoint vocabulary.
    pub unknown: usize,
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let model = checkpoint::from_text(&read(&a.checkpoint)?)?;
    let stories = parse_babi(&read(&a.data)?, &lexicon(a.lexicon.as_deref())?)?;
    let (report, unknown) = model.evaluate(&stories)?;
    let summary = EvalSummary {
        accuracy: report.accuracy,
        n: report.n,
        mean_hops: report.mean_hops,
        related_entity_hit_rate: report.related_hit_rate,
        unknown,
    };
    let json = serde_json::to_string(&summary).expect("plain struct serialises");
    let _ = writeln!(out, "{json}");
    if let Some(p) = &a.out {
        write(p, &format!("{json}\n"))?;
    }
    if let Some(p) = &a.predictions {
        let mut text = String::new();
        for pred in &report.predictions {
            text.push_str(pred.and_then(|id| model.vocab.word(id)).unwrap_or(""));
            text.push('\n');
        }
        write(p, &text)?;
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = train_config(a.config.as_deref(), a.seed, &ConfigOverrides::default())?;
    let checks = run_suite(cfg.d_ent, cfg.d_sent, cfg.seed)?;
    let mut failed = 0;
    for c in &checks {
        let tol = a.threshold.unwrap_or(c.tolerance);
        let ok = c.max_rel_error < tol;
        failed += usize::from(!ok);
        let worst = c.worst.as_ref().map(|(n, i)| format!("{n}[{i}]")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{:<12} {} max_rel_error={:.3e} tol={:.0e} worst={worst} coords={}",
            c.name,
            if ok { "ok  " } else { "FAIL" },
            c.max_rel_error,
            tol,
            c.coordinates
        );
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} gradient checks failed", checks.len())));
    }
    Ok(())
}

fn convert(a: &ConvertArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let lex = lexicon(a.lexicon.as_deref())?;
    let (stories, skipped) = match a.mode {
        ConvertMode::Mc => {
            let Some(ans) = &a.answers else {
                return Err(CliError::Failed("--mode mc needs --answers".into()));
            };
            mc_to_stories(&read_mctest(&a.data, ans)?, &lex)
        }
        ConvertMode::Sentiment => {
            let mut stories = Vec::new();
            let mut skipped = 0;
            for (i, r) in read_sentiment_dir(&a.data, a.sample, a.seed)?.into_iter().enumerate() {
                let tokens = crate::corpus::tokenize_raw(&r.text);
                match wrap_sentiment(&tokens, r.label, &lex) {
                    Ok(mut s) => {
                        s.id = i;
                        stories.push(s);
                    }
                    Err(e) => {
                        let _ = writeln!(err, "skipping {}: {e}", r.path.display());
                        skipped += 1;
                    }
                }
            }
            (stories, skipped)
        }
    };
    write(&a.out, &write_babi(&stories))?;
    let _ = writeln!(out, "{} stories written, {skipped} skipped", stories.len());
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Gendata(a) => gendata(a, out, err),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Convert(a) => convert(a, out, err),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}
