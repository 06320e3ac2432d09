//! Filtered ranking metrics and per-structure reports.
//!
//! Every query is scored on its hard answers (full-graph answers that the
//! train graph does not yield). Each hard answer is ranked against all
//! entities except the other known answers, with ties counted against it.
//! Metrics are averaged over a query's hard answers, then over the queries of
//! a structure; the overall average is the mean over structures.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{beam_answer, co_answer, AnswerError, BeamConfig, CoConfig, CoError};
use crate::fuzzy::TNormKind;
use crate::kg::EntityId;
use crate::model::EmbeddingModel;
use crate::querygen::{QueryGenError, QueryRecord, QueryType};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("entity {0} out of range for {1} scores")]
    EntityOutOfRange(EntityId, usize),
    #[error("no validation queries")]
    EmptyValidation,
    #[error("query {index}: {source}")]
    Answer { index: usize, source: AnswerError },
    #[error("query {index}: {source}")]
    Co { index: usize, source: CoError },
    #[error(transparent)]
    Query(#[from] QueryGenError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Filtered rank with pessimistic ties: one plus the number of entities outside
/// `filter` (other than `answer`) scoring at least as high as `answer`.
pub fn filtered_rank<T: Scalar>(scores: &[T], answer: EntityId, filter: &BTreeSet<EntityId>) -> Result<usize, EvalError> {
    let target = *scores
        .get(answer.index())
        .ok_or(EvalError::EntityOutOfRange(answer, scores.len()))?;
    let mut rank = 1;
    for (i, &s) in scores.iter().enumerate() {
        let e = EntityId(i as u32);
        if e != answer && s >= target && !filter.contains(&e) {
            rank += 1;
        }
    }
    Ok(rank)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub h1: f64,
    pub h3: f64,
    pub h10: f64,
    pub mrr: f64,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize]) -> Option<Metrics> {
        if ranks.is_empty() {
            return None;
        }
        let n = ranks.len() as f64;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Some(Metrics {
            h1: hits(1),
            h3: hits(3),
            h10: hits(10),
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        })
    }

    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Metrics>) -> Option<Metrics> {
        let mut acc = Metrics::default();
        let mut n = 0usize;
        for m in items {
            acc.h1 += m.h1;
            acc.h3 += m.h3;
            acc.h10 += m.h10;
            acc.mrr += m.mrr;
            n += 1;
        }
        (n > 0).then(|| {
            let k = n as f64;
            Metrics {
                h1: acc.h1 / k,
                h3: acc.h3 / k,
                h10: acc.h10 / k,
                mrr: acc.mrr / k,
            }
        })
    }
}

/// How one structure is answered.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    Beam(BeamConfig),
    Co(CoConfig),
    /// Independent uniform scores, seeded per query.
    Random { seed: u64 },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Beam(c) => format!("beam({}, b={})", c.tnorm, c.beam_width),
            Method::Co(c) => format!("co({})", c.tnorm),
            Method::Random { .. } => "random".to_string(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Method::Beam(_) => "CQD-Beam",
            Method::Co(_) => "CQD-CO",
            Method::Random { .. } => "Random",
        }
    }
}

/// A method per structure, with a fallback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodTable {
    pub default: Method,
    pub per_type: BTreeMap<QueryType, Method>,
}

impl MethodTable {
    pub fn uniform(m: Method) -> Self {
        MethodTable {
            default: m,
            per_type: BTreeMap::new(),
        }
    }

    pub fn get(&self, t: QueryType) -> &Method {
        self.per_type.get(&t).unwrap_or(&self.default)
    }
}

/// Scores every entity for one query.
pub fn score_query<T: Scalar>(
    model: &EmbeddingModel<T>,
    record: &QueryRecord,
    index: usize,
    method: &Method,
    num_base_relations: u32,
) -> Result<Vec<T>, EvalError> {
    let q = record.to_dnf(num_base_relations)?;
    match method {
        Method::Beam(cfg) => Ok(beam_answer(model, &q, cfg)
            .map_err(|source| EvalError::Answer { index, source })?
            .scores),
        Method::Co(cfg) => Ok(co_answer(model, &q, cfg)
            .map_err(|source| EvalError::Co { index, source })?
            .ranking
            .scores),
        Method::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            rng.set_stream(index as u64);
            Ok((0..model.num_entities()).map(|_| T::of(rng.random::<f64>())).collect())
        }
    }
}

/// Per-query entry of the evaluation log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryLog {
    pub index: usize,
    #[serde(rename = "type")]
    pub query_type: QueryType,
    pub method: String,
    /// `(answer, rank)` for each hard answer.
    pub hard_ranks: Vec<(EntityId, usize)>,
    /// `(answer, rank)` for every full-graph answer.
    pub all_ranks: Vec<(EntityId, usize)>,
    pub hard: Metrics,
    pub all: Metrics,
    pub seconds: f64,
}

fn log_query<T: Scalar>(record: &QueryRecord, index: usize, method: &Method, scores: &[T], seconds: f64) -> Result<Option<QueryLog>, EvalError> {
    let filter: BTreeSet<EntityId> = record.target_answers_full.iter().copied().collect();
    let rank_all = |answers: &[EntityId]| -> Result<Vec<(EntityId, usize)>, EvalError> {
        answers
            .iter()
            .map(|&a| Ok((a, filtered_rank(scores, a, &filter)?)))
            .collect()
    };
    let hard_ranks = rank_all(&record.hard_answers())?;
    let all_ranks = rank_all(&record.target_answers_full)?;
    let ranks = |xs: &[(EntityId, usize)]| xs.iter().map(|&(_, r)| r).collect::<Vec<_>>();
    let Some(hard) = Metrics::from_ranks(&ranks(&hard_ranks)) else {
        return Ok(None);
    };
    Ok(Some(QueryLog {
        index,
        query_type: record.query_type,
        method: method.label(),
        all: Metrics::from_ranks(&ranks(&all_ranks)).unwrap_or_default(),
        hard_ranks,
        all_ranks,
        hard,
        seconds,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeReport {
    #[serde(rename = "type")]
    pub query_type: QueryType,
    pub method: String,
    pub count: usize,
    pub hard: Metrics,
    pub all: Metrics,
    pub mean_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    /// Structures with at least one query, in table order.
    pub types: Vec<TypeReport>,
    /// Mean over `types` of the hard-answer metrics.
    pub average: Metrics,
}

impl MetricReport {
    pub fn from_logs(name: &str, logs: &[QueryLog]) -> MetricReport {
        let mut types = Vec::new();
        for t in QueryType::ALL {
            let rows: Vec<&QueryLog> = logs.iter().filter(|l| l.query_type == t).collect();
            if rows.is_empty() {
                continue;
            }
            let total: f64 = rows.iter().map(|l| l.seconds).sum();
            types.push(TypeReport {
                query_type: t,
                method: rows[0].method.clone(),
                count: rows.len(),
                hard: Metrics::mean(rows.iter().map(|l| &l.hard)).unwrap_or_default(),
                all: Metrics::mean(rows.iter().map(|l| &l.all)).unwrap_or_default(),
                mean_seconds: total / rows.len() as f64,
                total_seconds: total,
            });
        }
        let average = Metrics::mean(types.iter().map(|t| &t.hard)).unwrap_or_default();
        MetricReport {
            name: name.to_string(),
            types,
            average,
        }
    }

    pub fn get(&self, t: QueryType) -> Option<&TypeReport> {
        self.types.iter().find(|r| r.query_type == t)
    }

    pub fn h3(&self, t: QueryType) -> Option<f64> {
        self.get(t).map(|r| r.hard.h3)
    }

    /// Markdown table of hard-answer H@3, one row per report, plus a per-type
    /// timing table.
    pub fn markdown(reports: &[&MetricReport]) -> String {
        let mut out = String::new();
        let header: Vec<&str> = QueryType::ALL.iter().map(|t| t.name()).collect();
        let _ = writeln!(out, "H@3 on hard answers (filtered, ties counted against the answer)\n");
        let _ = writeln!(out, "| Method | Avg | {} |", header.join(" | "));
        let _ = writeln!(out, "|---|---|{}", "---|".repeat(header.len()));
        for r in reports {
            let cells: Vec<String> = QueryType::ALL
                .iter()
                .map(|&t| r.h3(t).map_or("-".into(), |v| format!("{v:.3}")))
                .collect();
            let _ = writeln!(out, "| {} | {:.3} | {} |", r.name, r.average.h3, cells.join(" | "));
        }
        let _ = writeln!(out, "\nMean seconds per query\n");
        let _ = writeln!(out, "| Method | {} |", header.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(header.len()));
        for r in reports {
            let cells: Vec<String> = QueryType::ALL
                .iter()
                .map(|&t| r.get(t).map_or("-".into(), |x| format!("{:.4}", x.mean_seconds)))
                .collect();
            let _ = writeln!(out, "| {} | {} |", r.name, cells.join(" | "));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "type", "method", "count", "h1", "h3", "h10", "mrr", "h3_all", "mrr_all", "mean_seconds", "total_seconds",
        ])?;
        for t in &self.types {
            w.write_record([
                t.query_type.name().to_string(),
                t.method.clone(),
                t.count.to_string(),
                t.hard.h1.to_string(),
                t.hard.h3.to_string(),
                t.hard.h10.to_string(),
                t.hard.mrr.to_string(),
                t.all.h3.to_string(),
                t.all.mrr.to_string(),
                t.mean_seconds.to_string(),
                t.total_seconds.to_string(),
            ])?;
        }
        let a = &self.average;
        w.write_record([
            "avg".to_string(),
            String::new(),
            self.types.iter().map(|t| t.count).sum::<usize>().to_string(),
            a.h1.to_string(),
            a.h3.to_string(),
            a.h10.to_string(),
            a.mrr.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

pub fn write_query_log(path: &Path, logs: &[QueryLog]) -> Result<(), EvalError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in logs {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Answers every query (in parallel on the current rayon pool) and aggregates.
pub fn evaluate<T: Scalar>(
    model: &EmbeddingModel<T>,
    records: &[QueryRecord],
    methods: &MethodTable,
    num_base_relations: u32,
    name: &str,
) -> Result<(MetricReport, Vec<QueryLog>), EvalError> {
    let logs: Vec<Option<QueryLog>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let method = methods.get(r.query_type);
            let start = Instant::now();
            let scores = score_query(model, r, i, method, num_base_relations)?;
            let seconds = start.elapsed().as_secs_f64();
            log_query(r, i, method, &scores, seconds)
        })
        .collect::<Result<_, _>>()?;
    let skipped = logs.iter().filter(|l| l.is_none()).count();
    if skipped > 0 {
        log::warn!("{skipped} queries without hard answers were skipped");
    }
    let logs: Vec<QueryLog> = logs.into_iter().flatten().collect();
    for t in QueryType::ALL {
        if records.iter().any(|r| r.query_type == t) && !logs.iter().any(|l| l.query_type == t) {
            log::warn!("no scorable {t} queries; omitted from the report");
        }
    }
    Ok((MetricReport::from_logs(name, &logs), logs))
}

/// Expected hard-answer H@k of a scorer whose ranking is a uniformly random
/// permutation: with `c` unfiltered candidates (the answer included) the
/// answer lands in the top `k` with probability `min(k, c) / c`.
pub fn random_baseline(records: &[QueryRecord], num_entities: usize, k: usize) -> BTreeMap<QueryType, f64> {
    let mut per_type: BTreeMap<QueryType, Vec<f64>> = BTreeMap::new();
    for r in records {
        let hard = r.hard_answers();
        if hard.is_empty() {
            continue;
        }
        let c = (num_entities + 1).saturating_sub(r.target_answers_full.len()).max(1);
        let p = k.min(c) as f64 / c as f64;
        per_type.entry(r.query_type).or_default().push(p);
    }
    per_type
        .into_iter()
        .map(|(t, ps)| (t, ps.iter().sum::<f64>() / ps.len() as f64))
        .collect()
}

/// One cell of the validation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    #[serde(rename = "type")]
    pub query_type: QueryType,
    pub method: Method,
    pub h3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub table: MethodTable,
    pub grid: Vec<GridCell>,
}

/// Candidate methods of one family, in tie-break order (smaller beams first).
pub fn beam_grid(tnorms: &[TNormKind], widths: &[usize]) -> Vec<Method> {
    let mut out = Vec::new();
    for &b in widths {
        for &tnorm in tnorms {
            out.push(Method::Beam(BeamConfig {
                beam_width: b,
                tnorm,
                max_states: None,
            }));
        }
    }
    out
}

pub fn co_grid(tnorms: &[TNormKind], base: &CoConfig) -> Vec<Method> {
    tnorms.iter().map(|&tnorm| Method::Co(CoConfig { tnorm, ..*base })).collect()
}

/// Picks, per structure, the candidate with the best validation H@3. Ties go
/// to the earlier candidate.
pub fn select_config<T: Scalar>(
    model: &EmbeddingModel<T>,
    valid: &[QueryRecord],
    candidates: &[Method],
    num_base_relations: u32,
) -> Result<Selection, EvalError> {
    if valid.is_empty() || candidates.is_empty() {
        return Err(EvalError::EmptyValidation);
    }
    let mut grid = Vec::new();
    let mut table = MethodTable::uniform(candidates[0]);
    for t in QueryType::ALL {
        let rows: Vec<QueryRecord> = valid.iter().filter(|r| r.query_type == t).cloned().collect();
        if rows.is_empty() {
            continue;
        }
        let mut best: Option<(f64, Method)> = None;
        for m in candidates {
            let (report, _) = evaluate(model, &rows, &MethodTable::uniform(*m), num_base_relations, "")?;
            let h3 = report.h3(t).unwrap_or(0.0);
            grid.push(GridCell {
                query_type: t,
                method: *m,
                h3,
            });
            if best.is_none_or(|(b, _)| h3 > b) {
                best = Some((h3, *m));
            }
        }
        table.per_type.insert(t, best.expect("candidates are non-empty").1);
    }
    Ok(Selection { table, grid })
}
