//! Continuous optimisation of variable embeddings.
//!
//! Each disjunct gets its own embeddings for its variables (target included),
//! optimised with Adam to maximise the t-norm fold of its logistic atom
//! scores. The bound-variable embeddings are then frozen and every entity is
//! substituted for the target. Disjunct scores are combined with the t-conorm.

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::AnswerRanking;
use crate::fuzzy::{fold_with_grad, TNormKind};
use crate::model::{CalibrationParams, EmbeddingModel, ModelError};
use crate::optim::{Adam, AdamConfig};
use crate::query::{DnfQuery, Term, VarId};
use crate::scalar::{sigmoid, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoConfig {
    pub adam: AdamConfig,
    pub max_iters: usize,
    pub tnorm: TNormKind,
    pub init_seed: u64,
    /// Stop once the objective gains less than this over `window` iterations.
    pub convergence_tol: f64,
    pub window: usize,
    /// Independent initialisations per disjunct; the best objective wins.
    pub num_restarts: usize,
}

impl Default for CoConfig {
    fn default() -> Self {
        CoConfig {
            adam: AdamConfig::default(),
            max_iters: 1000,
            tnorm: TNormKind::Product,
            init_seed: 0,
            convergence_tol: 1e-6,
            window: 25,
            num_restarts: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum CoError {
    #[error("no embedding for variable {0}")]
    MissingEmbedding(VarId),
    #[error("embedding for variable {var} has length {found}, expected {expected}")]
    BadEmbedding { var: VarId, expected: usize, found: usize },
    #[error("non-finite objective at iteration {iteration} of disjunct {disjunct}")]
    NonFinite { iteration: usize, disjunct: usize },
    #[error("invalid CO config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Objective value and its gradient with respect to every variable embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct CoObjective<T> {
    pub value: T,
    pub grads: BTreeMap<VarId, Array1<T>>,
}

/// Optimisation outcome alongside the ranking.
#[derive(Clone, Debug)]
pub struct CoReport<T> {
    pub ranking: AnswerRanking<T>,
    /// Objective per iteration of the winning restart, per disjunct.
    pub objectives: Vec<Vec<T>>,
}

fn logistic_temperature<T: Scalar>(model: &EmbeddingModel<T>) -> T {
    T::of(model.calibration().logistic_temperature())
}

/// Fuzzy score of `q` under the given variable embeddings, with gradients.
pub fn co_objective<T: Scalar>(
    model: &EmbeddingModel<T>,
    q: &DnfQuery,
    tnorm: TNormKind,
    embs: &BTreeMap<VarId, Array1<T>>,
) -> Result<CoObjective<T>, CoError> {
    let tau = logistic_temperature(model);
    let var = |v: VarId| -> Result<ArrayView1<'_, T>, CoError> {
        let e = embs.get(&v).ok_or(CoError::MissingEmbedding(v))?;
        if e.len() != model.rank() {
            return Err(CoError::BadEmbedding {
                var: v,
                expected: model.rank(),
                found: e.len(),
            });
        }
        Ok(e.view())
    };
    let mut values = Vec::with_capacity(q.disjuncts().len());
    // per disjunct: (atom score, d score / d raw, subject var, object var, lhs, rhs)
    let mut parts = Vec::with_capacity(q.disjuncts().len());
    for conj in q.disjuncts() {
        let mut xs = Vec::new();
        let mut locals = Vec::new();
        for block in &conj.plan.blocks {
            let o = var(block.var)?;
            for a in &block.atoms {
                let (s, sv) = match a.subject {
                    Term::Anchor(e) => {
                        if e.index() >= model.num_entities() {
                            return Err(ModelError::EntityOutOfRange(e).into());
                        }
                        (model.entity(e), None)
                    }
                    Term::Var(v) => (var(v)?, Some(v)),
                };
                let raw = model.raw_score(a.relation, s, o)?;
                let x = sigmoid(raw / tau);
                xs.push(x);
                let lhs = model.lhs_vector(a.relation, s);
                let rhs = sv.map(|_| model.rhs_vector(a.relation, o));
                locals.push((x * (T::one() - x) / tau, sv, block.var, lhs, rhs));
            }
        }
        let (v, dx) = fold_with_grad(tnorm, &xs, false);
        values.push(v);
        parts.push((dx, locals));
    }
    let (value, dv) = fold_with_grad(tnorm, &values, true);

    let mut grads: BTreeMap<VarId, Array1<T>> = BTreeMap::new();
    for ((dx, locals), dvd) in parts.into_iter().zip(dv) {
        for (dxi, (draw, sv, ov, lhs, rhs)) in dx.into_iter().zip(locals) {
            let c = dvd * dxi * draw;
            let g = grads.entry(ov).or_insert_with(|| Array1::zeros(model.rank()));
            g.scaled_add(c, &lhs);
            if let (Some(sv), Some(rhs)) = (sv, rhs) {
                let g = grads.entry(sv).or_insert_with(|| Array1::zeros(model.rank()));
                g.scaled_add(c, &rhs);
            }
        }
    }
    Ok(CoObjective { value, grads })
}

/// Root-mean-square of the entity table, used as the initialisation scale.
fn entity_scale<T: Scalar>(model: &EmbeddingModel<T>) -> f64 {
    let table = model.entity_table();
    let ss: f64 = table.iter().map(|x| x.as_f64() * x.as_f64()).sum();
    (ss / table.len().max(1) as f64).sqrt()
}

struct Optimised<T> {
    embs: BTreeMap<VarId, Array1<T>>,
    trace: Vec<T>,
}

fn optimise_disjunct<T: Scalar>(
    model: &EmbeddingModel<T>,
    q: &DnfQuery,
    d: usize,
    cfg: &CoConfig,
) -> Result<Optimised<T>, CoError> {
    let rank = model.rank();
    let vars: Vec<VarId> = q.disjuncts()[0].plan.vars().collect();
    let scale = entity_scale(model);
    let unpack = |flat: &[T]| -> BTreeMap<VarId, Array1<T>> {
        vars.iter()
            .enumerate()
            .map(|(i, &v)| (v, Array1::from(flat[i * rank..(i + 1) * rank].to_vec())))
            .collect()
    };
    let mut best: Option<(T, Optimised<T>)> = None;
    for restart in 0..cfg.num_restarts.max(1) {
        let stream = (d as u64) << 32 | restart as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        rng.set_stream(stream);
        let mut flat: Vec<T> = (0..vars.len() * rank)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::of(z * scale)
            })
            .collect();
        let mut adam = Adam::<T>::new(cfg.adam, flat.len());
        let mut trace: Vec<T> = Vec::new();
        let mut run_best = (T::neg_infinity(), flat.clone());
        let has_bound = vars.len() > 1;
        let iters = if has_bound { cfg.max_iters } else { 0 };
        for iteration in 0..=iters {
            let obj = co_objective(model, q, cfg.tnorm, &unpack(&flat))?;
            if !obj.value.is_finite() {
                return Err(CoError::NonFinite { iteration, disjunct: d });
            }
            trace.push(obj.value);
            if obj.value > run_best.0 {
                run_best = (obj.value, flat.clone());
            }
            let t = trace.len() - 1;
            let converged = t >= cfg.window && trace[t] - trace[t - cfg.window] < T::of(cfg.convergence_tol);
            if iteration == iters || converged {
                if converged {
                    log::debug!("disjunct {d} restart {restart}: converged after {iteration} iterations");
                }
                break;
            }
            // ascent: minimise the negated objective
            let mut grad = vec![T::zero(); flat.len()];
            for (i, v) in vars.iter().enumerate() {
                if let Some(g) = obj.grads.get(v) {
                    for (dst, &x) in grad[i * rank..(i + 1) * rank].iter_mut().zip(g.iter()) {
                        *dst = -x;
                    }
                }
            }
            adam.step(&mut flat, &grad);
        }
        let candidate = Optimised {
            embs: unpack(&run_best.1),
            trace,
        };
        if best.as_ref().is_none_or(|(v, _)| run_best.0 > *v) {
            best = Some((run_best.0, candidate));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Scores every entity by optimising the bound variables, then sweeping the target.
pub fn co_answer<T: Scalar>(model: &EmbeddingModel<T>, q: &DnfQuery, cfg: &CoConfig) -> Result<CoReport<T>, CoError> {
    if !(cfg.adam.lr > 0.0) {
        return Err(CoError::Config("learning rate must be positive".into()));
    }
    let n = model.num_entities();
    let cal = CalibrationParams::logistic(model.calibration().logistic_temperature());
    let tau = logistic_temperature(model);
    let mut scores: Option<Vec<T>> = None;
    let mut objectives = Vec::new();
    for d in 0..q.disjuncts().len() {
        let sub = q.disjunct_query(d);
        let opt = optimise_disjunct(model, &sub, d, cfg)?;
        let plan = &sub.disjuncts()[0].plan;
        let subject = |t: Term| -> Result<Array1<T>, CoError> {
            Ok(match t {
                Term::Anchor(e) => {
                    if e.index() >= n {
                        return Err(ModelError::EntityOutOfRange(e).into());
                    }
                    model.entity(e).to_owned()
                }
                Term::Var(v) => opt.embs[&v].clone(),
            })
        };
        let mut prefix: Option<T> = None;
        for block in plan.bound_blocks() {
            let o = &opt.embs[&block.var];
            for a in &block.atoms {
                let raw = model.raw_score(a.relation, subject(a.subject)?.view(), o.view())?;
                let x = sigmoid(raw / tau);
                prefix = Some(prefix.map_or(x, |p| cfg.tnorm.and(p, x)));
            }
        }
        let mut part: Vec<Option<T>> = vec![prefix; n];
        for a in &plan.target_block().atoms {
            let s = subject(a.subject)?;
            let v = cal.apply(model.score_all_objects(a.relation, s.view())?.view());
            for (acc, &x) in part.iter_mut().zip(v.iter()) {
                *acc = Some(acc.map_or(x, |p| cfg.tnorm.and(p, x)));
            }
        }
        let part: Vec<T> = part.into_iter().map(|x| x.unwrap_or_else(T::zero)).collect();
        scores = Some(match scores {
            None => part,
            Some(acc) => acc.into_iter().zip(part).map(|(a, b)| cfg.tnorm.or(a, b)).collect(),
        });
        objectives.push(opt.trace);
    }
    Ok(CoReport {
        ranking: AnswerRanking {
            scores: scores.unwrap_or_else(|| vec![T::zero(); n]),
            witnesses: Vec::new(),
            var_names: q.var_names().to_vec(),
        },
        objectives,
    })
}
