//! The nine query structures, exact symbolic answering, and answer-first
//! sampling of test queries.
//!
//! A sampled query is kept only if the full graph yields answers that the
//! train graph alone does not, so every answer set has at least one entity
//! reachable only through a held-out edge.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, Graph, KnowledgeGraph, RelationId, Split, SplitSet};
use crate::query::{to_dnf, Atom, Conjunction, DnfQuery, EpfoQuery, Formula, QueryError, Term, VarId};

/// Consecutive failed samples tolerated before a structure is declared unsatisfiable.
pub const RETRY_BUDGET: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QueryType {
    #[serde(rename = "1p")]
    P1,
    #[serde(rename = "2p")]
    P2,
    #[serde(rename = "3p")]
    P3,
    #[serde(rename = "2i")]
    I2,
    #[serde(rename = "3i")]
    I3,
    #[serde(rename = "ip")]
    Ip,
    #[serde(rename = "pi")]
    Pi,
    #[serde(rename = "2u")]
    U2,
    #[serde(rename = "up")]
    Up,
}

#[derive(Debug, Error)]
pub enum QueryGenError {
    #[error("unknown query type `{0}` (expected one of 1p, 2p, 3p, 2i, 3i, ip, pi, 2u, up)")]
    UnknownType(String),
    #[error("could not sample a {query_type} query after {RETRY_BUDGET} consecutive attempts ({found} of {requested} found)")]
    Unsatisfiable {
        query_type: QueryType,
        found: usize,
        requested: usize,
    },
    #[error("queries can only be sampled for the valid or test split")]
    TrainSplit,
    #[error("{query_type} expects {anchors} anchors and {relations} relations")]
    Arity {
        query_type: QueryType,
        anchors: usize,
        relations: usize,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Slot of a template atom: subject is anchor `i` or variable `j`; object is a variable.
#[derive(Clone, Copy)]
enum Slot {
    Anchor(usize),
    Var(u32),
}

/// Template atom `relation_slot(subject, object)`.
type Shape = (usize, Slot, u32);

const A: u32 = 0;
const V1: u32 = 1;
const V2: u32 = 2;

impl QueryType {
    /// In the column order of the results table.
    pub const ALL: [QueryType; 9] = [
        QueryType::P1,
        QueryType::P2,
        QueryType::P3,
        QueryType::I2,
        QueryType::I3,
        QueryType::Ip,
        QueryType::Pi,
        QueryType::U2,
        QueryType::Up,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QueryType::P1 => "1p",
            QueryType::P2 => "2p",
            QueryType::P3 => "3p",
            QueryType::I2 => "2i",
            QueryType::I3 => "3i",
            QueryType::Ip => "ip",
            QueryType::Pi => "pi",
            QueryType::U2 => "2u",
            QueryType::Up => "up",
        }
    }

    pub fn num_anchors(self) -> usize {
        match self {
            QueryType::P1 | QueryType::P2 | QueryType::P3 => 1,
            QueryType::I2 | QueryType::Ip | QueryType::Pi | QueryType::U2 | QueryType::Up => 2,
            QueryType::I3 => 3,
        }
    }

    pub fn num_relations(self) -> usize {
        self.shape().len()
    }

    pub fn num_bound_vars(self) -> usize {
        match self {
            QueryType::P1 | QueryType::I2 | QueryType::I3 | QueryType::U2 => 0,
            QueryType::P2 | QueryType::Ip | QueryType::Pi | QueryType::Up => 1,
            QueryType::P3 => 2,
        }
    }

    pub fn is_union(self) -> bool {
        matches!(self, QueryType::U2 | QueryType::Up)
    }

    fn shape(self) -> &'static [Shape] {
        use Slot::{Anchor as An, Var as Va};
        match self {
            QueryType::P1 => &[(0, An(0), A)],
            QueryType::P2 => &[(0, An(0), V1), (1, Va(V1), A)],
            QueryType::P3 => &[(0, An(0), V1), (1, Va(V1), V2), (2, Va(V2), A)],
            QueryType::I2 => &[(0, An(0), A), (1, An(1), A)],
            QueryType::I3 => &[(0, An(0), A), (1, An(1), A), (2, An(2), A)],
            QueryType::Ip => &[(0, An(0), V1), (1, An(1), V1), (2, Va(V1), A)],
            QueryType::Pi => &[(0, An(0), V1), (1, Va(V1), A), (2, An(1), A)],
            QueryType::U2 => &[(0, An(0), A), (1, An(1), A)],
            QueryType::Up => &[(0, An(0), V1), (1, An(1), V1), (2, Va(V1), A)],
        }
    }

    fn var_names(self) -> Vec<String> {
        let mut names = vec!["A".to_string()];
        names.extend((1..=self.num_bound_vars()).map(|i| format!("V{i}")));
        names
    }

    /// Instantiates the structure. Atoms appear in relation-slot order.
    pub fn build(self, anchors: &[EntityId], relations: &[RelationId], num_base_relations: u32) -> Result<EpfoQuery, QueryGenError> {
        if anchors.len() != self.num_anchors() || relations.len() != self.num_relations() {
            return Err(QueryGenError::Arity {
                query_type: self,
                anchors: self.num_anchors(),
                relations: self.num_relations(),
            });
        }
        let atoms: Vec<Formula> = self
            .shape()
            .iter()
            .map(|&(r, subj, obj)| {
                let subject = match subj {
                    Slot::Anchor(i) => Term::Anchor(anchors[i]),
                    Slot::Var(v) => Term::Var(VarId(v)),
                };
                Formula::Atom(Atom::new(relations[r], subject, Term::Var(VarId(obj))))
            })
            .collect();
        let formula = match self {
            QueryType::U2 => Formula::Or(atoms),
            QueryType::Up => {
                let mut it = atoms.into_iter();
                let (a, b, c) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
                Formula::And(vec![Formula::Or(vec![a, b]), c])
            }
            _ if atoms.len() == 1 => atoms.into_iter().next().unwrap(),
            _ => Formula::And(atoms),
        };
        Ok(EpfoQuery::new(self.var_names(), formula, num_base_relations)?)
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QueryType {
    type Err = QueryGenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QueryType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| QueryGenError::UnknownType(s.to_string()))
    }
}

/// One line of a query file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    #[serde(rename = "type")]
    pub query_type: QueryType,
    pub anchors: Vec<EntityId>,
    pub relations: Vec<RelationId>,
    pub target_answers_full: Vec<EntityId>,
    pub target_answers_train: Vec<EntityId>,
}

impl QueryRecord {
    pub fn to_query(&self, num_base_relations: u32) -> Result<EpfoQuery, QueryGenError> {
        self.query_type.build(&self.anchors, &self.relations, num_base_relations)
    }

    pub fn to_dnf(&self, num_base_relations: u32) -> Result<DnfQuery, QueryGenError> {
        Ok(to_dnf(&self.to_query(num_base_relations)?)?)
    }

    /// Answers that need at least one held-out edge.
    pub fn hard_answers(&self) -> Vec<EntityId> {
        let train: BTreeSet<EntityId> = self.target_answers_train.iter().copied().collect();
        self.target_answers_full
            .iter()
            .copied()
            .filter(|e| !train.contains(e))
            .collect()
    }
}

/// Exact answer set of a planned query over `graph`, by enumerating variable
/// assignments in plan order.
pub fn symbolic_answers(graph: &Graph, q: &DnfQuery) -> BTreeSet<EntityId> {
    let mut out = BTreeSet::new();
    for conj in q.disjuncts() {
        let mut assignment = vec![EntityId(u32::MAX); q.num_vars()];
        enumerate(graph, conj, 0, &mut assignment, &mut out);
    }
    out
}

fn candidates(graph: &Graph, atoms: &[crate::query::OrientedAtom], assignment: &[EntityId]) -> Vec<EntityId> {
    let mut result: Option<Vec<EntityId>> = None;
    for a in atoms {
        let s = match a.subject {
            Term::Anchor(e) => e,
            Term::Var(v) => assignment[v.index()],
        };
        let objs: Vec<EntityId> = graph.objects(s, a.relation).collect();
        result = Some(match result {
            None => objs,
            Some(prev) => prev.into_iter().filter(|e| objs.binary_search(e).is_ok()).collect(),
        });
        if result.as_ref().is_some_and(Vec::is_empty) {
            break;
        }
    }
    result.unwrap_or_default()
}

fn enumerate(graph: &Graph, conj: &Conjunction, depth: usize, assignment: &mut [EntityId], out: &mut BTreeSet<EntityId>) {
    let block = &conj.plan.blocks[depth];
    let cands = candidates(graph, &block.atoms, assignment);
    if block.var.is_target() {
        out.extend(cands);
        return;
    }
    for e in cands {
        assignment[block.var.index()] = e;
        enumerate(graph, conj, depth + 1, assignment, out);
    }
}

/// Samples `count` distinct queries of one structure for `split`.
///
/// The full graph is train+valid for the valid split and all splits for test.
/// Answers are walked backwards from a random entity, so each query has at
/// least one full-graph answer.
pub fn sample_queries(
    kg: &KnowledgeGraph,
    query_type: QueryType,
    count: usize,
    seed: u64,
    split: Split,
) -> Result<Vec<QueryRecord>, QueryGenError> {
    let out = sample_queries_up_to(kg, query_type, count, seed, split)?;
    if out.len() < count {
        return Err(QueryGenError::Unsatisfiable {
            query_type,
            found: out.len(),
            requested: count,
        });
    }
    Ok(out)
}

/// Like [`sample_queries`], but returns the queries found so far once the
/// retry budget runs out instead of failing.
pub fn sample_queries_up_to(
    kg: &KnowledgeGraph,
    query_type: QueryType,
    count: usize,
    seed: u64,
    split: Split,
) -> Result<Vec<QueryRecord>, QueryGenError> {
    let full_set = match split {
        Split::Train => return Err(QueryGenError::TrainSplit),
        Split::Valid => SplitSet::TRAIN_VALID,
        Split::Test => SplitSet::ALL,
    };
    let full = kg.graph(full_set);
    let train = kg.graph(SplitSet::TRAIN);
    let num_base = kg.vocab().num_base_relations();
    let answers: Vec<EntityId> = (0..full.num_entities() as u32)
        .map(EntityId)
        .filter(|&e| !full.edges(e).is_empty())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (query_type as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut out = Vec::with_capacity(count);
    let mut seen: HashSet<(Vec<EntityId>, Vec<RelationId>)> = HashSet::new();
    let mut failures = 0;
    while out.len() < count {
        if failures >= RETRY_BUDGET || answers.is_empty() {
            break;
        }
        let Some((anchors, relations)) = backward_walk(&full, query_type, &answers, num_base, &mut rng) else {
            failures += 1;
            continue;
        };
        if seen.contains(&(anchors.clone(), relations.clone())) {
            failures += 1;
            continue;
        }
        let dnf = to_dnf(&query_type.build(&anchors, &relations, num_base)?)?;
        let full_answers = symbolic_answers(&full, &dnf);
        let train_answers = symbolic_answers(&train, &dnf);
        if full_answers == train_answers {
            failures += 1;
            continue;
        }
        failures = 0;
        seen.insert((anchors.clone(), relations.clone()));
        out.push(QueryRecord {
            query_type,
            anchors,
            relations,
            target_answers_full: full_answers.into_iter().collect(),
            target_answers_train: train_answers.into_iter().collect(),
        });
    }
    Ok(out)
}

/// Fills the template backwards from a random answer: every variable picks a
/// random incoming edge for each atom pointing into it.
fn backward_walk<R: Rng>(
    graph: &Graph,
    query_type: QueryType,
    answers: &[EntityId],
    num_base: u32,
    rng: &mut R,
) -> Option<(Vec<EntityId>, Vec<RelationId>)> {
    let shape = query_type.shape();
    let mut vars = [None::<EntityId>; 3];
    vars[A as usize] = Some(*answers.choose(rng)?);
    let mut anchors = vec![EntityId(0); query_type.num_anchors()];
    let mut relations = vec![RelationId(0); shape.len()];
    // targets are filled first, then V2, then V1
    for v in [A, V2, V1] {
        let Some(x) = vars[v as usize] else { continue };
        for &(r, subj, obj) in shape {
            if obj != v {
                continue;
            }
            // incoming `p(y, x)` is stored as the reciprocal edge `inv(p)(x, y)`
            let &(q, y) = graph.edges(x).choose(rng)?;
            relations[r] = q.inverse(num_base);
            match subj {
                Slot::Anchor(i) => anchors[i] = y,
                Slot::Var(u) => vars[u as usize] = Some(y),
            }
        }
    }
    // reject degenerate intersections and unions that repeat an atom
    let atoms: HashSet<(RelationId, EntityId)> = shape
        .iter()
        .filter_map(|&(r, subj, _)| match subj {
            Slot::Anchor(i) => Some((relations[r], anchors[i])),
            Slot::Var(_) => None,
        })
        .collect();
    if atoms.len() < query_type.num_anchors() {
        return None;
    }
    Some((anchors, relations))
}

pub fn write_jsonl(path: &Path, records: &[QueryRecord]) -> Result<(), QueryGenError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<QueryRecord>, QueryGenError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| QueryGenError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}
