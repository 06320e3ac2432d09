//! Beam search over variable substitutions.
//!
//! Bound variables are visited in plan order. Every state is extended by the
//! `beam_width` entities with the highest combined score of the atoms pointing
//! into the variable, so widths form nested candidate sets and a larger beam
//! never lowers an entity's score. The target is scored over all entities
//! against every surviving state and each entity keeps its best state.
//! Disjuncts are combined per entity with the t-conorm.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{AnswerError, AnswerRanking, BeamState, TraceStep, Witness};
use crate::fuzzy::TNormKind;
use crate::kg::{EntityId, RelationId};
use crate::model::EmbeddingModel;
use crate::query::{Conjunction, DnfQuery, OrientedAtom, Term};
use crate::scalar::Scalar;

/// Beam widths searched on validation data.
pub const BEAM_WIDTHS: [usize; 7] = [4, 8, 16, 32, 64, 128, 256];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub tnorm: TNormKind,
    /// Optional cap on the number of live states after each expansion, keeping
    /// the highest-scoring ones. Unset by default; setting it trades the
    /// monotonicity in `beam_width` for bounded memory on deep queries.
    pub max_states: Option<usize>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_width: 8,
            tnorm: TNormKind::Product,
            max_states: None,
        }
    }
}

/// Calibrated object-score vectors keyed by `(relation, subject)`.
struct ScoreCache<'m, T: Scalar> {
    model: &'m EmbeddingModel<T>,
    vectors: HashMap<(RelationId, EntityId), Array1<T>>,
}

impl<'m, T: Scalar> ScoreCache<'m, T> {
    fn new(model: &'m EmbeddingModel<T>) -> Self {
        ScoreCache {
            model,
            vectors: HashMap::new(),
        }
    }

    /// Fills in all missing keys, one batched product per relation.
    fn fill(&mut self, keys: impl IntoIterator<Item = (RelationId, EntityId)>) -> Result<(), AnswerError> {
        let mut missing: HashMap<RelationId, Vec<EntityId>> = HashMap::new();
        for key in keys {
            if !self.vectors.contains_key(&key) {
                let subjects = missing.entry(key.0).or_default();
                if !subjects.contains(&key.1) {
                    subjects.push(key.1);
                }
            }
        }
        let mut relations: Vec<RelationId> = missing.keys().copied().collect();
        relations.sort();
        for p in relations {
            let subjects = &missing[&p];
            let mut rows = Array2::zeros((subjects.len(), self.model.rank()));
            for (i, &s) in subjects.iter().enumerate() {
                if s.index() >= self.model.num_entities() {
                    return Err(crate::model::ModelError::EntityOutOfRange(s).into());
                }
                rows.row_mut(i).assign(&self.model.entity(s));
            }
            let raw = self.model.score_objects_batch(p, rows.view())?;
            for (i, &s) in subjects.iter().enumerate() {
                self.vectors.insert((p, s), self.model.calibrate(raw.row(i)));
            }
        }
        Ok(())
    }

    fn get(&self, p: RelationId, s: EntityId) -> &Array1<T> {
        &self.vectors[&(p, s)]
    }
}

fn subject_of<T: Scalar>(atom: &OrientedAtom, state: &BeamState<T>) -> Result<EntityId, AnswerError> {
    match atom.subject {
        Term::Anchor(e) => Ok(e),
        Term::Var(v) => state.get(v).ok_or(AnswerError::Unresolved(atom.index)),
    }
}

fn fold<T: Scalar>(tnorm: TNormKind, acc: Option<T>, x: T) -> T {
    match acc {
        None => x,
        Some(a) => tnorm.and(a, x),
    }
}

/// Indices of the `k` largest values, by descending value then ascending index.
fn top_k<T: Scalar>(values: &[T], k: usize) -> Vec<usize> {
    let cmp = |&a: &usize, &b: &usize| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    };
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

/// Per-entity best score and witness for one conjunction.
fn answer_conjunction<T: Scalar>(
    model: &EmbeddingModel<T>,
    conj: &Conjunction,
    num_vars: usize,
    cfg: &BeamConfig,
    cache: &mut ScoreCache<'_, T>,
) -> Result<(Vec<T>, Vec<Option<BeamState<T>>>), AnswerError> {
    let n = model.num_entities();
    let mut states = vec![BeamState::<T>::empty(num_vars)];

    for block in conj.plan.bound_blocks() {
        let mut keys = Vec::with_capacity(states.len() * block.atoms.len());
        for st in &states {
            for a in &block.atoms {
                keys.push((a.relation, subject_of(a, st)?));
            }
        }
        cache.fill(keys)?;
        let mut next = Vec::with_capacity(states.len() * cfg.beam_width.min(n));
        let mut combined = vec![T::zero(); n];
        for st in &states {
            let subjects: Vec<EntityId> = block.atoms.iter().map(|a| subject_of(a, st)).collect::<Result<_, _>>()?;
            let vecs: Vec<&Array1<T>> = block
                .atoms
                .iter()
                .zip(&subjects)
                .map(|(a, &s)| cache.get(a.relation, s))
                .collect();
            for (e, c) in combined.iter_mut().enumerate() {
                let mut acc = vecs[0][e];
                for v in &vecs[1..] {
                    acc = cfg.tnorm.and(acc, v[e]);
                }
                *c = acc;
            }
            for e in top_k(&combined, cfg.beam_width) {
                let object = EntityId(e as u32);
                let mut child = st.clone();
                child.substitution[block.var.index()] = Some(object);
                for ((a, &s), v) in block.atoms.iter().zip(&subjects).zip(&vecs) {
                    let score = v[e];
                    child.score = Some(fold(cfg.tnorm, child.score, score));
                    child.trace.push(TraceStep {
                        atom: *a,
                        subject: s,
                        object,
                        score,
                    });
                }
                next.push(child);
            }
        }
        if let Some(cap) = cfg.max_states {
            // stable: equal scores keep expansion order
            next.sort_by(|a, b| {
                b.score
                    .partial_cmp(&a.score)
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            next.truncate(cap.max(1));
        }
        states = next;
    }

    let target = conj.plan.target_block();
    // States sharing the subjects of every target atom differ only in their
    // running score, and the t-norm is monotone, so the best one dominates.
    let mut groups: HashMap<Vec<EntityId>, usize> = HashMap::new();
    let mut reps: Vec<(Vec<EntityId>, usize)> = Vec::new();
    for (i, st) in states.iter().enumerate() {
        let key: Vec<EntityId> = target.atoms.iter().map(|a| subject_of(a, st)).collect::<Result<_, _>>()?;
        match groups.get(&key) {
            Some(&slot) => {
                let (_, best) = reps[slot];
                if st.score > states[best].score {
                    reps[slot].1 = i;
                }
            }
            None => {
                groups.insert(key.clone(), reps.len());
                reps.push((key, i));
            }
        }
    }
    cache.fill(
        reps.iter()
            .flat_map(|(key, _)| target.atoms.iter().zip(key).map(|(a, &s)| (a.relation, s))),
    )?;

    let mut best: Vec<Option<T>> = vec![None; n];
    let mut owner: Vec<usize> = vec![usize::MAX; n];
    for (key, si) in &reps {
        let st = &states[*si];
        let vecs: Vec<&Array1<T>> = target.atoms.iter().zip(key).map(|(a, &s)| cache.get(a.relation, s)).collect();
        for e in 0..n {
            let mut acc = st.score;
            for v in &vecs {
                acc = Some(fold(cfg.tnorm, acc, v[e]));
            }
            if acc > best[e] {
                best[e] = acc;
                owner[e] = *si;
            }
        }
    }

    let mut witnesses = Vec::with_capacity(n);
    for e in 0..n {
        if owner[e] == usize::MAX {
            witnesses.push(None);
            continue;
        }
        let mut st = states[owner[e]].clone();
        let object = EntityId(e as u32);
        st.substitution[target.var.index()] = Some(object);
        for a in &target.atoms {
            let s = subject_of(a, &st)?;
            let score = cache.get(a.relation, s)[e];
            st.score = Some(fold(cfg.tnorm, st.score, score));
            st.trace.push(TraceStep {
                atom: *a,
                subject: s,
                object,
                score,
            });
        }
        witnesses.push(Some(st));
    }
    let scores = best.into_iter().map(|s| s.unwrap_or_else(T::zero)).collect();
    Ok((scores, witnesses))
}

/// Scores every entity as an answer to `q`.
pub fn beam_answer<T: Scalar>(model: &EmbeddingModel<T>, q: &DnfQuery, cfg: &BeamConfig) -> Result<AnswerRanking<T>, AnswerError> {
    if cfg.beam_width == 0 {
        return Err(AnswerError::ZeroBeam);
    }
    let n = model.num_entities();
    let mut cache = ScoreCache::new(model);
    let mut scores: Option<Vec<T>> = None;
    let mut witnesses: Vec<Option<Witness<T>>> = vec![None; n];
    let mut best_part: Vec<Option<T>> = vec![None; n];
    for (d, conj) in q.disjuncts().iter().enumerate() {
        let (part, states) = answer_conjunction(model, conj, q.num_vars(), cfg, &mut cache)?;
        for (e, st) in states.into_iter().enumerate() {
            if st.is_some() && Some(part[e]) > best_part[e] {
                best_part[e] = Some(part[e]);
                witnesses[e] = st.map(|state| Witness { disjunct: d, state });
            }
        }
        scores = Some(match scores {
            None => part,
            Some(acc) => acc.into_iter().zip(part).map(|(a, b)| cfg.tnorm.or(a, b)).collect(),
        });
    }
    Ok(AnswerRanking {
        scores: scores.unwrap_or_else(|| vec![T::zero(); n]),
        witnesses,
        var_names: q.var_names().to_vec(),
    })
}
