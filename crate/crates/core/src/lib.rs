//! Entity-based memory network for question answering.
//!
//! Sentences are encoded by an LSTM autoencoder ([`seqcells`]), folded into
//! per-entity state vectors held in a memory pool ([`entmem`]), and questions
//! retrieve entities hop by hop before an answer word is predicted
//! ([`qanet`]). [`corpus`] covers the text formats and the synthetic story
//! generators; [`cli`] drives the staged training pipeline.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod entmem;
pub mod gradsuite;
pub mod model;
pub mod numgrad;
pub mod qanet;
pub mod seqcells;
pub mod vocab;

pub use config::TrainConfig;
pub use numgrad::NumError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("empty sentence")]
    EmptySentence,
    #[error("token id {id} outside vocabulary of size {vocab}")]
    OutOfVocab { id: usize, vocab: usize },
    #[error("empty corpus: {0}")]
    EmptyCorpus(&'static str),
    #[error("entity list is empty")]
    NoEntities,
    #[error("entity `{0}` has no memory slot")]
    MissingSlot(String),
    #[error("no entities to retrieve")]
    EmptyPool,
    #[error("example has no related entities")]
    NoRelatedEntities,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0} diverged: loss is not finite")]
    Diverged(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
