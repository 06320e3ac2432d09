//! Neural link predictor: ComplEx and DistMult scoring over embedding tables,
//! calibration of raw scores into `[0, 1]`, and the N3 regularizer.
//!
//! ComplEx embeddings of rank `k` store `k / 2` complex numbers with all real
//! parts first, then all imaginary parts: `(re_0 .. re_{k/2-1}, im_0 .. im_{k/2-1})`.
//!
//! Both scorers are trilinear, so every raw score can be written as a dot
//! product with one argument held fixed:
//!
//! | fixed        | vector                  | raw score     |
//! |--------------|-------------------------|---------------|
//! | subject, rel | `lhs = s * w`           | `lhs · o`     |
//! | rel, object  | `rhs = conj(w) * o`     | `s · rhs`     |
//! | subject, obj | `conj(s) * o`           | `w · (..)`    |

mod checkpoint;
pub mod train;

pub use checkpoint::{load_model, save_model, CheckpointError, CHECKPOINT_VERSION};

use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, RelationId};
use crate::scalar::{sigmoid, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    ComplEx,
    DistMult,
}

impl ScorerKind {
    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::ComplEx => "complex",
            ScorerKind::DistMult => "distmult",
        }
    }
}

impl FromStr for ScorerKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "complex" => Ok(ScorerKind::ComplEx),
            "distmult" => Ok(ScorerKind::DistMult),
            other => Err(ModelError::UnsupportedScorer(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationKind {
    /// `sigmoid(raw / temperature)` elementwise.
    Logistic,
    /// `(raw - min) / (max - min)` over each scored vector.
    MinMaxPerCall,
}

impl FromStr for CalibrationKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" => Ok(CalibrationKind::Logistic),
            "minmax" | "minmaxpercall" => Ok(CalibrationKind::MinMaxPerCall),
            other => Err(ModelError::UnsupportedCalibration(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub kind: CalibrationKind,
    pub temperature: f64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            kind: CalibrationKind::Logistic,
            temperature: 1.0,
        }
    }
}

impl CalibrationParams {
    pub fn logistic(temperature: f64) -> Self {
        CalibrationParams {
            kind: CalibrationKind::Logistic,
            temperature,
        }
    }

    /// Maps a vector of raw scores into `[0, 1]`.
    pub fn apply<T: Scalar>(&self, raw: ArrayView1<T>) -> Array1<T> {
        match self.kind {
            CalibrationKind::Logistic => {
                let t = T::of(self.temperature);
                raw.mapv(|x| sigmoid(x / t))
            }
            CalibrationKind::MinMaxPerCall => {
                let (lo, hi) = raw
                    .iter()
                    .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| (lo.min(x), hi.max(x)));
                if !(hi > lo) {
                    return Array1::from_elem(raw.len(), T::of(0.5));
                }
                let span = hi - lo;
                raw.mapv(|x| (x - lo) / span)
            }
        }
    }

    /// Logistic calibration of a single raw score. Per-call min-max has no
    /// meaning for one value, so it falls back to a unit-temperature logistic.
    pub fn logistic_scalar<T: Scalar>(&self, raw: T) -> T {
        sigmoid(raw / T::of(self.logistic_temperature()))
    }

    pub fn logistic_temperature(&self) -> f64 {
        match self.kind {
            CalibrationKind::Logistic => self.temperature,
            CalibrationKind::MinMaxPerCall => 1.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("ComplEx rank must be even, got {0}")]
    OddComplexRank(usize),
    #[error("rank must be positive")]
    ZeroRank,
    #[error("embedding tables contain non-finite values")]
    NonFinite,
    #[error("relation {0} out of range")]
    RelationOutOfRange(RelationId),
    #[error("entity {0} out of range")]
    EntityOutOfRange(EntityId),
    #[error("calibration temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("unsupported scorer `{0}`")]
    UnsupportedScorer(String),
    #[error("unsupported calibration `{0}`")]
    UnsupportedCalibration(String),
}

/// Entity and relation embedding tables plus the scorer that combines them.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel<T: Scalar> {
    scorer: ScorerKind,
    rank: usize,
    entities: Array2<T>,
    relations: Array2<T>,
    calibration: CalibrationParams,
}

impl<T: Scalar> EmbeddingModel<T> {
    pub fn from_tables(
        scorer: ScorerKind,
        entities: Array2<T>,
        relations: Array2<T>,
        calibration: CalibrationParams,
    ) -> Result<Self, ModelError> {
        let rank = entities.ncols();
        if rank == 0 {
            return Err(ModelError::ZeroRank);
        }
        if relations.ncols() != rank {
            return Err(ModelError::DimensionMismatch {
                expected: rank,
                found: relations.ncols(),
            });
        }
        if scorer == ScorerKind::ComplEx && rank % 2 != 0 {
            return Err(ModelError::OddComplexRank(rank));
        }
        if !(calibration.temperature > 0.0) {
            return Err(ModelError::BadTemperature(calibration.temperature));
        }
        if entities.iter().chain(relations.iter()).any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(EmbeddingModel {
            scorer,
            rank,
            entities,
            relations,
            calibration,
        })
    }

    /// Zero-mean Gaussian initialization with standard deviation `scale`.
    pub fn random<R: Rng + ?Sized>(
        scorer: ScorerKind,
        rank: usize,
        num_entities: usize,
        num_relations: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let mut draw = |rows: usize| {
            Array2::from_shape_simple_fn((rows, rank), || {
                let z: f64 = StandardNormal.sample(rng);
                T::of(z * scale)
            })
        };
        let entities = draw(num_entities);
        let relations = draw(num_relations);
        Self::from_tables(scorer, entities, relations, CalibrationParams::default())
    }

    pub fn scorer(&self) -> ScorerKind {
        self.scorer
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn num_entities(&self) -> usize {
        self.entities.nrows()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.nrows()
    }

    pub fn calibration(&self) -> CalibrationParams {
        self.calibration
    }

    pub fn set_calibration(&mut self, calibration: CalibrationParams) -> Result<(), ModelError> {
        if !(calibration.temperature > 0.0) {
            return Err(ModelError::BadTemperature(calibration.temperature));
        }
        self.calibration = calibration;
        Ok(())
    }

    pub fn entity_table(&self) -> ArrayView2<'_, T> {
        self.entities.view()
    }

    pub fn relation_table(&self) -> ArrayView2<'_, T> {
        self.relations.view()
    }

    pub(crate) fn tables_mut(&mut self) -> (&mut Array2<T>, &mut Array2<T>) {
        (&mut self.entities, &mut self.relations)
    }

    pub fn entity(&self, e: EntityId) -> ArrayView1<'_, T> {
        self.entities.row(e.index())
    }

    pub fn relation(&self, p: RelationId) -> ArrayView1<'_, T> {
        self.relations.row(p.index())
    }

    fn check_relation(&self, p: RelationId) -> Result<(), ModelError> {
        if p.index() < self.num_relations() {
            Ok(())
        } else {
            Err(ModelError::RelationOutOfRange(p))
        }
    }

    fn check_dim(&self, v: &ArrayView1<T>) -> Result<(), ModelError> {
        if v.len() == self.rank {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch {
                expected: self.rank,
                found: v.len(),
            })
        }
    }

    /// `q` with `raw_score(p, s, o) = q · o`.
    pub fn lhs_vector(&self, p: RelationId, s: ArrayView1<T>) -> Array1<T> {
        mul(self.scorer, s, self.relation(p))
    }

    /// `g` with `raw_score(p, s, o) = s · g`.
    pub fn rhs_vector(&self, p: RelationId, o: ArrayView1<T>) -> Array1<T> {
        conj_mul(self.scorer, self.relation(p), o)
    }

    pub fn raw_score(&self, p: RelationId, s: ArrayView1<T>, o: ArrayView1<T>) -> Result<T, ModelError> {
        self.check_relation(p)?;
        self.check_dim(&s)?;
        self.check_dim(&o)?;
        Ok(self.lhs_vector(p, s).dot(&o))
    }

    /// Raw scores of `p(s, e)` for every entity `e`.
    pub fn score_all_objects(&self, p: RelationId, s: ArrayView1<T>) -> Result<Array1<T>, ModelError> {
        self.check_relation(p)?;
        self.check_dim(&s)?;
        // Same matrix-matrix product as the batched path, so a row scored alone
        // is bitwise equal to the same row scored in a batch.
        let lhs = self.lhs_vector(p, s).insert_axis(Axis(0));
        Ok(lhs.dot(&self.entities.t()).row(0).to_owned())
    }

    /// Raw scores for several subject embeddings at once: row `i` scores `p(subjects[i], e)`.
    pub fn score_objects_batch(&self, p: RelationId, subjects: ArrayView2<T>) -> Result<Array2<T>, ModelError> {
        self.check_relation(p)?;
        if subjects.ncols() != self.rank {
            return Err(ModelError::DimensionMismatch {
                expected: self.rank,
                found: subjects.ncols(),
            });
        }
        let mut lhs = Array2::zeros(subjects.raw_dim());
        for (mut row, s) in lhs.axis_iter_mut(Axis(0)).zip(subjects.axis_iter(Axis(0))) {
            row.assign(&self.lhs_vector(p, s));
        }
        Ok(lhs.dot(&self.entities.t()))
    }

    /// Calibrated scores of `p(s, e)` for every entity `e`.
    pub fn calibrated_objects(&self, p: RelationId, s: EntityId) -> Result<Array1<T>, ModelError> {
        if s.index() >= self.num_entities() {
            return Err(ModelError::EntityOutOfRange(s));
        }
        let raw = self.score_all_objects(p, self.entity(s))?;
        Ok(self.calibrate(raw.view()))
    }

    pub fn calibrate(&self, raw: ArrayView1<T>) -> Array1<T> {
        self.calibration.apply(raw)
    }
}

/// `a * b`: complex product under the split layout for ComplEx, elementwise for DistMult.
pub(crate) fn mul<T: Scalar>(scorer: ScorerKind, a: ArrayView1<T>, b: ArrayView1<T>) -> Array1<T> {
    match scorer {
        ScorerKind::DistMult => &a * &b,
        ScorerKind::ComplEx => {
            let h = a.len() / 2;
            let mut out = Array1::zeros(a.len());
            for j in 0..h {
                let (ar, ai, br, bi) = (a[j], a[j + h], b[j], b[j + h]);
                out[j] = ar * br - ai * bi;
                out[j + h] = ar * bi + ai * br;
            }
            out
        }
    }
}

/// `conj(a) * b` (elementwise product for DistMult).
pub(crate) fn conj_mul<T: Scalar>(scorer: ScorerKind, a: ArrayView1<T>, b: ArrayView1<T>) -> Array1<T> {
    match scorer {
        ScorerKind::DistMult => &a * &b,
        ScorerKind::ComplEx => {
            let h = a.len() / 2;
            let mut out = Array1::zeros(a.len());
            for j in 0..h {
                let (ar, ai, br, bi) = (a[j], a[j + h], b[j], b[j + h]);
                out[j] = ar * br + ai * bi;
                out[j + h] = ar * bi - ai * br;
            }
            out
        }
    }
}

/// `sum |x|^3` over complex moduli (ComplEx) or absolute values (DistMult).
pub(crate) fn cubed_norm<T: Scalar>(scorer: ScorerKind, v: ArrayView1<T>) -> T {
    match scorer {
        ScorerKind::DistMult => v.iter().map(|&x| x.abs().powi(3)).sum(),
        ScorerKind::ComplEx => {
            let h = v.len() / 2;
            (0..h)
                .map(|j| {
                    let m2 = v[j] * v[j] + v[j + h] * v[j + h];
                    m2 * m2.sqrt()
                })
                .sum()
        }
    }
}

/// Gradient of [`cubed_norm`], scaled by `scale` and added into `out`.
pub(crate) fn add_cubed_norm_grad<T: Scalar>(
    scorer: ScorerKind,
    v: ArrayView1<T>,
    scale: T,
    mut out: ndarray::ArrayViewMut1<T>,
) {
    let three = T::of(3.0);
    match scorer {
        ScorerKind::DistMult => {
            for (o, &x) in out.iter_mut().zip(v.iter()) {
                *o += scale * three * x.abs() * x;
            }
        }
        ScorerKind::ComplEx => {
            let h = v.len() / 2;
            for j in 0..h {
                let m = (v[j] * v[j] + v[j + h] * v[j + h]).sqrt();
                out[j] += scale * three * m * v[j];
                out[j + h] += scale * three * m * v[j + h];
            }
        }
    }
}

/// Weighted N3 penalty: batch mean of `|s|^3 + |w|^3 + |o|^3`.
pub fn n3_penalty<T: Scalar>(scorer: ScorerKind, batch: &[(ArrayView1<T>, ArrayView1<T>, ArrayView1<T>)]) -> T {
    if batch.is_empty() {
        return T::zero();
    }
    let total: T = batch
        .iter()
        .map(|(s, w, o)| cubed_norm(scorer, s.view()) + cubed_norm(scorer, w.view()) + cubed_norm(scorer, o.view()))
        .sum();
    total / T::of(batch.len() as f64)
}
