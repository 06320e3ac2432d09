//! Query answering: continuous optimisation (CO) and beam search over entity
//! substitutions, both producing a score for every entity.

pub mod beam;
pub mod co;
pub mod explain;

pub use beam::{beam_answer, BeamConfig};
pub use co::{co_answer, co_objective, CoConfig, CoError, CoObjective, CoReport};
pub use explain::{explain, Explanation, ExplanationRow};

use serde::Serialize;
use thiserror::Error;

use crate::kg::EntityId;
use crate::model::ModelError;
use crate::query::{OrientedAtom, VarId};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum AnswerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("beam width must be at least 1")]
    ZeroBeam,
    #[error("internal planning error: atom {0} has an unresolved subject")]
    Unresolved(usize),
}

/// One scored atom along a substitution path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceStep<T> {
    pub atom: OrientedAtom,
    pub subject: EntityId,
    pub object: EntityId,
    pub score: T,
}

/// A partial substitution of the bound variables of one conjunction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BeamState<T> {
    /// Indexed by variable id; `None` while unassigned.
    pub substitution: Vec<Option<EntityId>>,
    /// Left t-norm fold of the trace scores; `None` before the first atom.
    pub score: Option<T>,
    pub trace: Vec<TraceStep<T>>,
}

impl<T: Scalar> BeamState<T> {
    pub fn empty(num_vars: usize) -> Self {
        BeamState {
            substitution: vec![None; num_vars],
            score: None,
            trace: Vec::new(),
        }
    }

    pub fn get(&self, v: VarId) -> Option<EntityId> {
        self.substitution.get(v.index()).copied().flatten()
    }
}

/// The best-scoring substitution found for one entity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness<T> {
    /// Which disjunct produced the best score for this entity.
    pub disjunct: usize,
    /// Full substitution including the target, with every atom of the disjunct.
    pub state: BeamState<T>,
}

/// Scores for every entity, plus optional per-entity witnesses.
#[derive(Clone, Debug, PartialEq)]
pub struct AnswerRanking<T> {
    pub scores: Vec<T>,
    /// Empty when the answerer keeps no substitutions (CO, random).
    pub witnesses: Vec<Option<Witness<T>>>,
    pub var_names: Vec<String>,
}

impl<T: Scalar> AnswerRanking<T> {
    pub fn num_entities(&self) -> usize {
        self.scores.len()
    }

    /// Entity ids by descending score, ties by ascending id.
    pub fn order(&self) -> Vec<EntityId> {
        let mut ids: Vec<u32> = (0..self.scores.len() as u32).collect();
        ids.sort_by(|&a, &b| {
            self.scores[b as usize]
                .partial_cmp(&self.scores[a as usize])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        ids.into_iter().map(EntityId).collect()
    }

    pub fn top(&self, n: usize) -> Vec<(EntityId, T)> {
        self.order()
            .into_iter()
            .take(n)
            .map(|e| (e, self.scores[e.index()]))
            .collect()
    }

    pub fn witness(&self, e: EntityId) -> Option<&Witness<T>> {
        self.witnesses.get(e.index()).and_then(Option::as_ref)
    }
}
