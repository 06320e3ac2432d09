//! Adagrad training of the link predictor on atomic triples.
//!
//! Each training triple `<s, p, o>` contributes the cross-entropy of `o` against
//! all entities under raw scores; reciprocal triples cover subject prediction.
//! The objective adds `reg_coeff * n3_penalty` over the batch factors.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{add_cubed_norm_grad, conj_mul, cubed_norm, CalibrationParams, EmbeddingModel, ModelError, ScorerKind};
use crate::eval::filtered_rank;
use crate::kg::{KnowledgeGraph, Split, SplitSet, Triple};
use crate::optim::Adagrad;
use crate::scalar::Scalar;

pub const RANK_GRID: [usize; 4] = [100, 200, 500, 1000];
pub const BATCH_GRID: [usize; 3] = [100, 500, 1000];
pub const REG_RANGE: (f64, f64) = (1e-4, 0.5);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scorer: ScorerKind,
    pub rank: usize,
    pub batch_size: usize,
    pub reg_coeff: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// Stop after this many epochs without a validation H@3 improvement.
    pub patience: Option<usize>,
    /// Stop as soon as validation H@3 reaches this value.
    pub target_valid_h3: Option<f64>,
    pub adagrad_eps: f64,
    pub calibration: CalibrationParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scorer: ScorerKind::ComplEx,
            rank: 100,
            batch_size: 100,
            reg_coeff: 0.01,
            learning_rate: 0.1,
            epochs: 100,
            seed: 0,
            init_scale: 1e-3,
            patience: Some(5),
            target_valid_h3: None,
            adagrad_eps: 1e-10,
            calibration: CalibrationParams::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("rank {0} is not in the grid {RANK_GRID:?}")]
    RankOffGrid(usize),
    #[error("batch size {0} is not in the grid {BATCH_GRID:?}")]
    BatchOffGrid(usize),
    #[error("regularization coefficient {0} outside [{lo}, {hi}]", lo = REG_RANGE.0, hi = REG_RANGE.1)]
    RegOffGrid(f64),
    #[error("empty train split")]
    EmptyTrain,
    #[error(
        "non-finite loss at epoch {epoch} (learning rate {learning_rate}, reg coefficient {reg_coeff}); \
         try a smaller learning rate or a larger regularizer"
    )]
    NonFinite {
        epoch: usize,
        learning_rate: f64,
        reg_coeff: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("writing training log: {0}")]
    Log(#[from] csv::Error),
}

impl TrainConfig {
    /// Basic sanity; with `strict_grid`, rank, batch size and regularizer must
    /// lie on the hyperparameter grid.
    pub fn validate(&self, strict_grid: bool) -> Result<(), TrainError> {
        if self.rank == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("rank and batch size must be positive".into()));
        }
        if strict_grid {
            if !RANK_GRID.contains(&self.rank) {
                return Err(TrainError::RankOffGrid(self.rank));
            }
            if !BATCH_GRID.contains(&self.batch_size) {
                return Err(TrainError::BatchOffGrid(self.batch_size));
            }
            if !(REG_RANGE.0..=REG_RANGE.1).contains(&self.reg_coeff) {
                return Err(TrainError::RegOffGrid(self.reg_coeff));
            }
        }
        if self.scorer == ScorerKind::ComplEx && self.rank % 2 != 0 {
            return Err(TrainError::Model(ModelError::OddComplexRank(self.rank)));
        }
        if !(self.learning_rate > 0.0) || !(self.init_scale > 0.0) || self.reg_coeff < 0.0 {
            return Err(TrainError::Config(
                "learning rate and init scale must be positive, reg coefficient non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Loss terms for one batch. `total = cross_entropy + reg_coeff * n3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Loss<T> {
    pub cross_entropy: T,
    pub n3: T,
    pub total: T,
}

#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub entities: Array2<T>,
    pub relations: Array2<T>,
}

/// Batch loss and its gradient w.r.t. both embedding tables.
pub fn loss_and_grad<T: Scalar>(model: &EmbeddingModel<T>, batch: &[Triple], reg_coeff: f64) -> (Loss<T>, Gradients<T>) {
    let scorer = model.scorer();
    let k = model.rank();
    let b = batch.len();
    let ents = model.entity_table();
    let mut grad_e = Array2::<T>::zeros(ents.raw_dim());
    let mut grad_r = Array2::<T>::zeros(model.relation_table().raw_dim());
    if b == 0 {
        let zero = T::zero();
        return (
            Loss {
                cross_entropy: zero,
                n3: zero,
                total: zero,
            },
            Gradients {
                entities: grad_e,
                relations: grad_r,
            },
        );
    }
    let inv_b = T::one() / T::of(b as f64);

    let mut lhs = Array2::<T>::zeros((b, k));
    for (mut row, t) in lhs.axis_iter_mut(Axis(0)).zip(batch) {
        row.assign(&model.lhs_vector(t.p, model.entity(t.s)));
    }
    let mut logits = lhs.dot(&ents.t());
    let mut ce = T::zero();
    for (mut row, t) in logits.axis_iter_mut(Axis(0)).zip(batch) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        ce += lse - row[t.o.index()];
        row.mapv_inplace(|z| (z - lse).exp() * inv_b);
        row[t.o.index()] -= inv_b;
    }
    ce *= inv_b;
    // logits now holds dL/dz.
    grad_e += &logits.t().dot(&lhs);
    let grad_lhs = logits.dot(&ents);

    let reg_scale = T::of(reg_coeff) * inv_b;
    let mut n3 = T::zero();
    for (t, g) in batch.iter().zip(grad_lhs.axis_iter(Axis(0))) {
        let (s, w, o) = (model.entity(t.s), model.relation(t.p), model.entity(t.o));
        let ds = conj_mul(scorer, w, g);
        let dw = conj_mul(scorer, s, g);
        grad_e.row_mut(t.s.index()).scaled_add(T::one(), &ds);
        grad_r.row_mut(t.p.index()).scaled_add(T::one(), &dw);
        n3 += cubed_norm(scorer, s) + cubed_norm(scorer, w) + cubed_norm(scorer, o);
        add_cubed_norm_grad(scorer, s, reg_scale, grad_e.row_mut(t.s.index()));
        add_cubed_norm_grad(scorer, w, reg_scale, grad_r.row_mut(t.p.index()));
        add_cubed_norm_grad(scorer, o, reg_scale, grad_e.row_mut(t.o.index()));
    }
    n3 *= inv_b;
    let total = ce + T::of(reg_coeff) * n3;
    (
        Loss {
            cross_entropy: ce,
            n3,
            total,
        },
        Gradients {
            entities: grad_e,
            relations: grad_r,
        },
    )
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub reg: f64,
    pub valid_h3: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport<T: Scalar> {
    pub model: EmbeddingModel<T>,
    pub log: Vec<EpochLog>,
    /// Validation H@3 of the returned model, when a validation split exists.
    pub valid_h3: Option<f64>,
    pub best_epoch: usize,
}

/// Filtered Hits@k of 1p link prediction over all triples of `split`
/// (reciprocals included), filtering every known answer.
pub fn link_prediction_hits<T: Scalar>(model: &EmbeddingModel<T>, kg: &KnowledgeGraph, split: Split, k: usize) -> Option<f64> {
    let triples = kg.triples(split);
    if triples.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    for t in triples {
        let scores = model
            .score_all_objects(t.p, model.entity(t.s))
            .expect("kg and model share the vocabulary");
        let filter = kg.answers(SplitSet::ALL, t.s, t.p);
        let rank = filtered_rank(scores.as_slice().expect("contiguous"), t.o, &filter).expect("entity in range");
        if rank <= k {
            hits += 1;
        }
    }
    Some(hits as f64 / triples.len() as f64)
}

/// Trains a model from scratch. Deterministic for a fixed config.
pub fn train<T: Scalar>(kg: &KnowledgeGraph, cfg: &TrainConfig) -> Result<TrainReport<T>, TrainError> {
    cfg.validate(false)?;
    let examples: Vec<Triple> = kg.triples(Split::Train).to_vec();
    if examples.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = EmbeddingModel::<T>::random(
        cfg.scorer,
        cfg.rank,
        kg.num_entities(),
        kg.num_relations(),
        cfg.init_scale,
        &mut rng,
    )?;
    model.set_calibration(cfg.calibration)?;

    let (n_e, n_r) = (model.entity_table().len(), model.relation_table().len());
    let mut opt_e = Adagrad::<T>::new(cfg.learning_rate, cfg.adagrad_eps, n_e);
    let mut opt_r = Adagrad::<T>::new(cfg.learning_rate, cfg.adagrad_eps, n_r);

    let has_valid = !kg.triples(Split::Valid).is_empty();
    let mut best: Option<(f64, usize, EmbeddingModel<T>)> = None;
    let mut since_best = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut reg_sum, mut batches) = (0.0f64, 0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            let (loss, grads) = loss_and_grad(&model, &batch, cfg.reg_coeff);
            if !loss.total.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    learning_rate: cfg.learning_rate,
                    reg_coeff: cfg.reg_coeff,
                });
            }
            loss_sum += loss.total.as_f64();
            reg_sum += loss.n3.as_f64();
            batches += 1;
            let (ents, rels) = model.tables_mut();
            opt_e.step(
                ents.as_slice_mut().expect("standard layout"),
                grads.entities.as_slice().expect("standard layout"),
            );
            opt_r.step(
                rels.as_slice_mut().expect("standard layout"),
                grads.relations.as_slice().expect("standard layout"),
            );
        }
        let valid_h3 = if has_valid {
            link_prediction_hits(&model, kg, Split::Valid, 3)
        } else {
            None
        };
        let row = EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            reg: reg_sum / batches as f64,
            valid_h3,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} reg {:.5} valid H@3 {}",
            row.loss,
            row.reg,
            valid_h3.map_or("-".to_string(), |h| format!("{h:.4}"))
        );
        log.push(row);

        if let Some(h3) = valid_h3 {
            let improved = best.as_ref().is_none_or(|(b, _, _)| h3 > *b);
            if improved {
                best = Some((h3, epoch, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            if cfg.target_valid_h3.is_some_and(|target| h3 >= target) {
                break;
            }
            if cfg.patience.is_some_and(|p| since_best >= p) {
                log::info!("early stopping at epoch {epoch}");
                break;
            }
        }
    }

    Ok(match best {
        Some((h3, epoch, best_model)) => TrainReport {
            model: best_model,
            log,
            valid_h3: Some(h3),
            best_epoch: epoch,
        },
        None => {
            let best_epoch = log.len();
            TrainReport {
                model,
                log,
                valid_h3: None,
                best_epoch,
            }
        }
    })
}

/// Writes the training log as CSV with columns `epoch, loss, reg, valid_h3`.
pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| TrainError::Log(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{EntityId, Vocab};
    use rand::Rng;

    pub(crate) fn two_relation_toy() -> KnowledgeGraph {
        // r0: i -> (i + 1) mod 8, r1: i -> (i + 3) mod 8, both functional.
        let n = 8u32;
        let names = (0..n).map(|i| format!("e{i}")).collect();
        let vocab = Vocab::new(names, vec!["r0".into(), "r1".into()]).unwrap();
        let mut train = Vec::new();
        for i in 0..n {
            train.push(Triple::new(i, 0, (i + 1) % n));
            train.push(Triple::new(i, 1, (i + 3) % n));
        }
        KnowledgeGraph::from_base_triples(vocab, train, vec![], vec![]).unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let kg = two_relation_toy();
        for scorer in [ScorerKind::ComplEx, ScorerKind::DistMult] {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let model = EmbeddingModel::<f64>::random(scorer, 8, kg.num_entities(), kg.num_relations(), 0.5, &mut rng).unwrap();
            let batch: Vec<Triple> = kg.triples(Split::Train)[..6].to_vec();
            let reg = 0.05;
            let (_, grads) = loss_and_grad(&model, &batch, reg);
            let h = 1e-4;
            for (table, row) in [(0, 0usize), (0, 3), (1, 1)] {
                for col in 0..8 {
                    let eval = |delta: f64| {
                        let mut m = model.clone();
                        let (e, r) = m.tables_mut();
                        let t = if table == 0 { e } else { r };
                        t[[row, col]] += delta;
                        loss_and_grad(&m, &batch, reg).0.total
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let g = if table == 0 {
                        grads.entities[[row, col]]
                    } else {
                        grads.relations[[row, col]]
                    };
                    assert!(rel_err(g, fd) < 1e-4 || (g - fd).abs() < 1e-9, "{scorer:?} t{table} r{row} c{col}: {g} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let kg = two_relation_toy();
        let cfg = TrainConfig {
            rank: 4,
            epochs: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let report = train::<f64>(&kg, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let init = EmbeddingModel::<f64>::random(ScorerKind::ComplEx, 4, 8, 4, 1e-3, &mut rng).unwrap();
        assert_eq!(report.model, init);
        assert!(report.log.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_decreases_loss() {
        let kg = two_relation_toy();
        let cfg = TrainConfig {
            rank: 8,
            batch_size: 8,
            epochs: 30,
            seed: 1,
            ..TrainConfig::default()
        };
        let a = train::<f64>(&kg, &cfg).unwrap();
        let b = train::<f64>(&kg, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.log.last().unwrap().loss < a.log[0].loss);
    }

    #[test]
    fn toy_kg_is_fit_exactly() {
        let kg = two_relation_toy();
        let cfg = TrainConfig {
            rank: 16,
            batch_size: 8,
            epochs: 200,
            reg_coeff: 1e-3,
            seed: 3,
            ..TrainConfig::default()
        };
        let report = train::<f64>(&kg, &cfg).unwrap();
        assert_eq!(link_prediction_hits(&report.model, &kg, Split::Train, 3), Some(1.0));
        let _ = EntityId(0);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let kg = two_relation_toy();
        let cfg = TrainConfig {
            rank: 4,
            epochs: 3,
            learning_rate: 1e300,
            init_scale: 1e150,
            ..TrainConfig::default()
        };
        match train::<f64>(&kg, &cfg) {
            Err(TrainError::NonFinite { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn strict_grid_rejects_off_grid_rank() {
        let cfg = TrainConfig {
            rank: 137,
            scorer: ScorerKind::DistMult,
            ..TrainConfig::default()
        };
        assert!(cfg.validate(false).is_ok());
        let err = cfg.validate(true).unwrap_err();
        assert!(err.to_string().contains("[100, 200, 500, 1000]"), "{err}");
    }

    #[test]
    fn log_csv_has_expected_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let log = vec![EpochLog {
            epoch: 1,
            loss: rng.random(),
            reg: 0.5,
            valid_h3: Some(0.25),
        }];
        write_log_csv(&path, &log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,loss,reg,valid_h3\n"), "{text}");
    }
}
