//! The assembled network and its three-stage training pipeline.

use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::corpus::{EmbeddingTable, Story};
use crate::entmem::{encode_statements, generalize, init_slot, train_f2, EntityInit, F2Params, MemoryPool};
use crate::numgrad::seeded_rng;
use crate::qanet::{evaluate, train_qa, EvalReport, PreparedExample, QaParams};
use crate::seqcells::{encode, pretrain_from, LstmParams};
use crate::vocab::{Vocab, UNK};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Autoencoder,
    Generalization,
    Qa,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Autoencoder => "autoencoder",
            Stage::Generalization => "f2",
            Stage::Qa => "qa",
        }
    }
}

/// One per-epoch metrics row. `accuracy` is absent for the f2 stage.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntityMemNet {
    pub cfg: TrainConfig,
    pub vocab: Vocab,
    pub f1: LstmParams,
    pub f2: F2Params,
    pub qa: QaParams,
    /// Answer word ids the response is restricted to; empty means all.
    pub candidates: Vec<usize>,
}

/// Vocabulary over statements, questions and answers in first-seen order.
pub fn build_vocab(stories: &[Story]) -> Vocab {
    let mut v = Vocab::new();
    for s in stories {
        for st in &s.statements {
            st.tokens.iter().for_each(|t| {
                v.add(t);
            });
        }
        for q in &s.questions {
            q.tokens.iter().for_each(|t| {
                v.add(t);
            });
            v.add(&q.answer);
        }
    }
    v
}

/// Distinct statement and question token sequences, first-seen order.
pub fn autoencoder_corpus(stories: &[Story], vocab: &Vocab) -> Vec<Vec<usize>> {
    let mut seen = indexmap::IndexSet::new();
    for s in stories {
        for toks in s.statements.iter().map(|st| &st.tokens).chain(s.questions.iter().map(|q| &q.tokens)) {
            seen.insert(vocab.encode(toks));
        }
    }
    seen.into_iter().collect()
}

/// Entity initial states: the input-module word embeddings.
pub fn entity_init(f1: &LstmParams, vocab: &Vocab, seed: u64) -> EntityInit {
    let mut table = EmbeddingTable::new(f1.d_emb);
    for (id, w) in vocab.words().enumerate().skip(3) {
        let row = f1.embedding(id).expect("vocab and embedding agree").to_vec();
        table.insert(w, row).expect("row width is d_emb");
    }
    EntityInit::new(table, seed)
}

/// Examples plus the number of question/answer tokens outside the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub examples: Vec<PreparedExample>,
    pub unknown_tokens: usize,
    /// Statements without entities (read but never stored).
    pub skipped_statements: usize,
}

/// Reads each story once, taking a snapshot of the pool at every question.
pub fn prepare_stories(
    stories: &[Story],
    vocab: &Vocab,
    f1: &LstmParams,
    f2: &F2Params,
    init: &EntityInit,
    cfg: &TrainConfig,
) -> Result<Prepared> {
    let per_story: Vec<(Vec<PreparedExample>, usize, usize)> = stories
        .par_iter()
        .map(|story| {
            let encoded = encode_statements(f1, vocab, &story.statements)?;
            let mut pool = MemoryPool::new(story.id, f1.d_emb);
            let (mut read, mut skipped, mut unknown) = (0, 0, 0);
            let mut out = Vec::with_capacity(story.questions.len());
            let mut questions: Vec<_> = story.questions.iter().collect();
            questions.sort_by_key(|q| q.position);
            for q in questions {
                while read < q.position {
                    let st = &encoded[read];
                    if st.entities.is_empty() {
                        skipped += 1;
                    } else {
                        for e in &st.entities {
                            init_slot(&mut pool, e, init, read)?;
                        }
                        generalize(&mut pool, &st.entities, &st.vector, f2, cfg.mem_steps, cfg.mem_lr)?;
                    }
                    read += 1;
                }
                let ids = vocab.encode(&q.tokens);
                unknown += ids.iter().filter(|&&i| i == UNK).count();
                let answer = vocab.id_or_unk(&q.answer);
                unknown += usize::from(answer == UNK);
                if ids.is_empty() {
                    return Err(Error::EmptySentence);
                }
                out.push(PreparedExample {
                    pool: pool.clone(),
                    question: encode(f1, &ids)?,
                    answer,
                    related: q.related.clone(),
                });
            }
            Ok((out, unknown, skipped))
        })
        .collect::<Result<_>>()?;
    let mut prepared = Prepared {
        examples: Vec::new(),
        unknown_tokens: 0,
        skipped_statements: 0,
    };
    for (ex, u, s) in per_story {
        prepared.examples.extend(ex);
        prepared.unknown_tokens += u;
        prepared.skipped_statements += s;
    }
    Ok(prepared)
}

impl EntityMemNet {
    /// Runs the three stages on `stories`: autoencoder pretraining on every
    /// distinct statement and question, f2 training with f1 frozen, then QA
    /// training with f1 and f2 frozen. `glove` initialises the word
    /// embeddings when given.
    pub fn train(stories: &[Story], cfg: &TrainConfig, glove: Option<&EmbeddingTable>) -> Result<(Self, Vec<EpochRow>)> {
        cfg.validate().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        if stories.iter().all(|s| s.questions.is_empty()) {
            return Err(Error::EmptyCorpus("no questions to train on"));
        }
        let vocab = build_vocab(stories);
        let mut rows = Vec::new();

        let mut rng = seeded_rng(cfg.seed ^ 0xae);
        let mut f1 = LstmParams::random(vocab.len(), cfg.d_ent, cfg.d_sent, &mut rng)?;
        if let Some(table) = glove {
            if table.dim() != cfg.d_ent {
                return Err(Error::InvalidArgument(format!(
                    "embeddings have dimension {}, d_ent is {}",
                    table.dim(),
                    cfg.d_ent
                )));
            }
            f1.load_embeddings(|id| vocab.word(id).and_then(|w| table.get(w)))?;
        }
        let corpus = autoencoder_corpus(stories, &vocab);
        let (f1, ae) = pretrain_from(f1, &corpus, cfg)?;
        rows.extend(ae.epochs.iter().enumerate().map(|(i, e)| EpochRow {
            epoch: i + 1,
            stage: Stage::Autoencoder,
            loss: e.loss,
            accuracy: Some(e.accuracy),
        }));

        let init = entity_init(&f1, &vocab, cfg.seed);
        let (f2, f2_report) = train_f2(stories, &vocab, &f1, &init, cfg)?;
        rows.extend(f2_report.epochs.iter().enumerate().map(|(i, e)| EpochRow {
            epoch: i + 1,
            stage: Stage::Generalization,
            loss: e.loss,
            accuracy: None,
        }));

        let prepared = prepare_stories(stories, &vocab, &f1, &f2, &init, cfg)?;
        let candidates = if cfg.restrict_answers {
            let mut c: Vec<usize> = prepared.examples.iter().map(|e| e.answer).collect();
            c.sort_unstable();
            c.dedup();
            c
        } else {
            Vec::new()
        };
        let mut rng = seeded_rng(cfg.seed ^ 0x9a0);
        let qa = QaParams::random(vocab.len(), cfg.d_ent, cfg.d_sent, &mut rng)?;
        let (qa, qa_report) = train_qa(qa, &prepared.examples, cfg, &candidates)?;
        rows.extend(qa_report.epochs.iter().enumerate().map(|(i, e)| EpochRow {
            epoch: i + 1,
            stage: Stage::Qa,
            loss: e.loss,
            accuracy: Some(e.accuracy),
        }));

        let model = EntityMemNet {
            cfg: cfg.clone(),
            vocab,
            f1,
            f2,
            qa,
            candidates,
        };
        Ok((model, rows))
    }

    pub fn entity_init(&self) -> EntityInit {
        entity_init(&self.f1, &self.vocab, self.cfg.seed)
    }

    pub fn prepare(&self, stories: &[Story]) -> Result<Prepared> {
        prepare_stories(stories, &self.vocab, &self.f1, &self.f2, &self.entity_init(), &self.cfg)
    }

    /// Accuracy and retrieval statistics on `stories`, plus the number of
    /// tokens that fell back to the unknown word.
    pub fn evaluate(&self, stories: &[Story]) -> Result<(EvalReport, usize)> {
        let prepared = self.prepare(stories)?;
        let report = evaluate(&self.qa, &prepared.examples, &self.cfg, &self.candidates)?;
        Ok((report, prepared.unknown_tokens))
    }
}
