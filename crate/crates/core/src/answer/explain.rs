//! Explanation tables: for the top-ranked entities, the substitution that
//! produced each score and the per-atom scores along it.

use std::collections::BTreeSet;

use serde::Serialize;

use super::{AnswerRanking, TraceStep};
use crate::kg::{EntityId, Vocab};
use crate::query::{Term, VarId};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExplanationRow<T> {
    pub rank: usize,
    pub entity: EntityId,
    pub score: T,
    /// Disjunct the substitution comes from, when the ranking kept witnesses.
    pub disjunct: Option<usize>,
    /// `(variable, entity)` for every assigned variable, bound variables first.
    pub assignment: Vec<(VarId, EntityId)>,
    pub atoms: Vec<TraceStep<T>>,
    pub correct: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Explanation<T> {
    pub var_names: Vec<String>,
    pub rows: Vec<ExplanationRow<T>>,
}

/// Rows for the `top_n` best entities (clamped to the number of entities).
pub fn explain<T: Scalar>(ranking: &AnswerRanking<T>, top_n: usize, gold: Option<&BTreeSet<EntityId>>) -> Explanation<T> {
    let rows = ranking
        .order()
        .into_iter()
        .take(top_n)
        .enumerate()
        .map(|(i, e)| {
            let w = ranking.witness(e);
            let mut assignment: Vec<(VarId, EntityId)> = w
                .map(|w| {
                    w.state
                        .substitution
                        .iter()
                        .enumerate()
                        .filter_map(|(v, x)| x.map(|x| (VarId(v as u32), x)))
                        .filter(|(v, _)| !v.is_target())
                        .collect()
                })
                .unwrap_or_default();
            assignment.push((VarId::TARGET, e));
            ExplanationRow {
                rank: i + 1,
                entity: e,
                score: ranking.scores[e.index()],
                disjunct: w.map(|w| w.disjunct),
                assignment,
                atoms: w.map(|w| w.state.trace.clone()).unwrap_or_default(),
                correct: gold.map(|g| g.contains(&e)),
            }
        })
        .collect();
    Explanation {
        var_names: ranking.var_names.clone(),
        rows,
    }
}

#[derive(Serialize)]
struct JsonAtom<'a> {
    relation: &'a str,
    subject: &'a str,
    object: &'a str,
    score: f64,
}

#[derive(Serialize)]
struct JsonRow<'a> {
    rank: usize,
    entity: &'a str,
    score: f64,
    assignment: Vec<(&'a str, &'a str)>,
    atoms: Vec<JsonAtom<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    correct: Option<bool>,
}

impl<T: Scalar> Explanation<T> {
    fn var_name(&self, v: VarId) -> &str {
        &self.var_names[v.index()]
    }

    /// Aligned text table: one column per variable, then rank, score, the
    /// per-atom scores and correctness when gold answers were given.
    pub fn to_text(&self, vocab: &Vocab) -> String {
        let bound: Vec<VarId> = {
            let mut vs: BTreeSet<VarId> = BTreeSet::new();
            for r in &self.rows {
                vs.extend(r.assignment.iter().map(|(v, _)| *v).filter(|v| !v.is_target()));
            }
            vs.into_iter().collect()
        };
        let with_gold = self.rows.iter().any(|r| r.correct.is_some());
        let mut header: Vec<String> = bound.iter().map(|&v| self.var_name(v).to_string()).collect();
        header.push(self.var_name(VarId::TARGET).to_string());
        header.extend(["Rank", "Score", "Atom scores"].map(String::from));
        if with_gold {
            header.push("Correct".into());
        }
        let mut table: Vec<Vec<String>> = vec![header];
        for r in &self.rows {
            let mut line: Vec<String> = bound
                .iter()
                .map(|v| {
                    r.assignment
                        .iter()
                        .find(|(x, _)| x == v)
                        .map_or("-".to_string(), |(_, e)| vocab.entity_name(*e).to_string())
                })
                .collect();
            line.push(vocab.entity_name(r.entity).to_string());
            line.push(r.rank.to_string());
            line.push(format!("{:.4}", r.score.as_f64()));
            let atoms: Vec<String> = r.atoms.iter().map(|s| format!("{:.3}", s.score.as_f64())).collect();
            line.push(if atoms.is_empty() { "-".into() } else { atoms.join(" ") });
            if with_gold {
                line.push(match r.correct {
                    Some(true) => "yes".into(),
                    Some(false) => "no".into(),
                    None => "-".into(),
                });
            }
            table.push(line);
        }
        let cols = table[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in table.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, &w)| format!("{cell:<w$}"))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
                out.push_str(&rule.join("  "));
                out.push('\n');
            }
        }
        out
    }

    pub fn to_json(&self, vocab: &Vocab) -> serde_json::Value {
        let name = |t: Term| match t {
            Term::Anchor(e) => vocab.entity_name(e),
            Term::Var(v) => self.var_name(v),
        };
        let rows: Vec<JsonRow<'_>> = self
            .rows
            .iter()
            .map(|r| JsonRow {
                rank: r.rank,
                entity: vocab.entity_name(r.entity),
                score: r.score.as_f64(),
                assignment: r
                    .assignment
                    .iter()
                    .map(|&(v, e)| (self.var_name(v), vocab.entity_name(e)))
                    .collect(),
                atoms: r
                    .atoms
                    .iter()
                    .map(|s| JsonAtom {
                        relation: vocab.relation_name(s.atom.relation),
                        subject: match s.atom.subject {
                            Term::Anchor(_) => name(s.atom.subject),
                            Term::Var(_) => vocab.entity_name(s.subject),
                        },
                        object: vocab.entity_name(s.object),
                        score: s.score.as_f64(),
                    })
                    .collect(),
                correct: r.correct,
            })
            .collect();
        serde_json::json!({ "variables": self.var_names, "rows": rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::{beam_answer, BeamConfig};
    use crate::fuzzy::{fold_tnorm, TNormKind};
    use crate::model::{EmbeddingModel, ScorerKind};
    use crate::query::{parse_query, to_dnf};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Vocab, EmbeddingModel<f64>) {
        let v = Vocab::new(
            (0..10).map(|i| format!("e{i}")).collect(),
            vec!["acted_in".into(), "genre".into()],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = EmbeddingModel::random(ScorerKind::ComplEx, 8, 10, 4, 0.8, &mut rng).unwrap();
        (v, m)
    }

    #[test]
    fn rows_rescore_to_the_reported_score() {
        let (v, m) = setup();
        let q = to_dnf(&parse_query("?G : exists M . acted_in(e0, M) & genre(M, G)", &v).unwrap()).unwrap();
        let cfg = BeamConfig {
            beam_width: 3,
            tnorm: TNormKind::Product,
            max_states: None,
        };
        let r = beam_answer(&m, &q, &cfg).unwrap();
        let gold = BTreeSet::from([EntityId(3)]);
        let ex = explain(&r, 9, Some(&gold));
        assert_eq!(ex.rows.len(), 9);
        for row in &ex.rows {
            let rescored: Vec<f64> = row
                .atoms
                .iter()
                .map(|s| m.calibrated_objects(s.atom.relation, s.subject).unwrap()[s.object.index()])
                .collect();
            assert!((fold_tnorm(cfg.tnorm, &rescored).unwrap() - row.score).abs() < 1e-12);
            assert_eq!(row.correct, Some(row.entity == EntityId(3)));
            assert_eq!(row.assignment.len(), 2);
        }
        let text = ex.to_text(&v);
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("M") && header.contains("G") && header.contains("Rank") && header.contains("Correct"));
        assert_eq!(text.lines().count(), 11);
        let json = ex.to_json(&v);
        assert_eq!(json["rows"].as_array().unwrap().len(), 9);
        assert_eq!(json["rows"][0]["rank"], 1);
    }

    #[test]
    fn clamping_and_empty_tables() {
        let (v, m) = setup();
        let q = to_dnf(&parse_query("?G : genre(e1, G)", &v).unwrap()).unwrap();
        let r = beam_answer(&m, &q, &BeamConfig::default()).unwrap();
        assert!(explain(&r, 0, None).rows.is_empty());
        assert_eq!(explain(&r, 50, None).rows.len(), 10);
        assert_eq!(explain(&r, 0, None).to_text(&v).lines().count(), 2);
    }
}
