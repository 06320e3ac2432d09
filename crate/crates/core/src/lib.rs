//! Complex query answering over incomplete knowledge graphs.
//!
//! A neural link predictor (ComplEx or DistMult) scores single atoms; t-norms
//! and t-conorms combine atom scores into scores for existential positive
//! first-order queries. Two answerers are provided: continuous optimisation of
//! variable embeddings ([`answer::co`]) and beam search over entity
//! substitutions ([`answer::beam`]).
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

pub mod answer;
pub mod eval;
pub mod fuzzy;
pub mod kg;
pub mod model;
pub mod optim;
pub mod query;
pub mod querygen;
pub mod scalar;
pub mod synthetic;

use thiserror::Error;

pub use answer::{beam_answer, co_answer, explain, AnswerRanking, BeamConfig, CoConfig};
pub use eval::{evaluate, filtered_rank, select_config, MethodTable, Method, MetricReport};
pub use fuzzy::TNormKind;
pub use kg::{EntityId, KnowledgeGraph, RelationId, Split, Triple, Vocab};
pub use model::{CalibrationParams, EmbeddingModel, ScorerKind};
pub use query::{parse_query, to_dnf, DnfQuery, EpfoQuery};
pub use querygen::{QueryRecord, QueryType};
pub use scalar::Scalar;

pub type Model = EmbeddingModel<f64>;
pub type ModelF32 = EmbeddingModel<f32>;
pub type Ranking = AnswerRanking<f64>;
pub type TrainReport = model::train::TrainReport<f64>;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Kg(#[from] kg::KgError),
    #[error(transparent)]
    Fuzzy(#[from] fuzzy::FuzzyError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Checkpoint(#[from] model::CheckpointError),
    #[error(transparent)]
    Train(#[from] model::train::TrainError),
    #[error(transparent)]
    Query(#[from] query::QueryError),
    #[error(transparent)]
    QueryGen(#[from] querygen::QueryGenError),
    #[error(transparent)]
    Answer(#[from] answer::AnswerError),
    #[error(transparent)]
    Co(#[from] answer::CoError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
}
