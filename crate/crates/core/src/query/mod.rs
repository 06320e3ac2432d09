//! EPFO queries: terms, atoms, formula trees, and their disjunctive normal form.
//!
//! Atoms are stored as written. Before answering, every conjunction is planned:
//! each atom is oriented along the dependency graph (anchor to variable,
//! variable towards the target), flipping `p(V, c)` into `inv_p(c, V)` where
//! needed, and the variables are visited in topological order.

mod dnf;
mod parse;

pub use dnf::{dnf_terms, to_dnf, topo_order, Conjunction, DnfQuery, OrientedAtom, Plan, VarBlock};
pub use parse::parse_query;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, RelationId, Vocab};

/// Variable identifier. `VarId::TARGET` (0) is the answer variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarId(pub u32);

impl VarId {
    pub const TARGET: VarId = VarId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_target(self) -> bool {
        self == VarId::TARGET
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    Anchor(EntityId),
    Var(VarId),
}

impl Term {
    pub fn var(self) -> Option<VarId> {
        match self {
            Term::Var(v) => Some(v),
            Term::Anchor(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub relation: RelationId,
    pub subject: Term,
    pub object: Term,
}

impl Atom {
    pub fn new(relation: RelationId, subject: Term, object: Term) -> Self {
        Atom {
            relation,
            subject,
            object,
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> {
        [self.subject.var(), self.object.var()].into_iter().flatten()
    }

    fn check_shape(&self) -> Result<(), QueryError> {
        match (self.subject, self.object) {
            (Term::Anchor(_), Term::Anchor(_)) => Err(QueryError::TwoAnchors),
            (Term::Var(a), Term::Var(b)) if a == b => Err(QueryError::SelfLoop(a)),
            _ => Ok(()),
        }
    }
}

/// Positive formula over atoms.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Formula {
    Atom(Atom),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    pub fn atoms(&self) -> Vec<Atom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut Vec<Atom>) {
        match self {
            Formula::Atom(a) => out.push(*a),
            Formula::And(xs) | Formula::Or(xs) => xs.iter().for_each(|x| x.collect_atoms(out)),
        }
    }

    /// Boolean evaluation given a truth value per atom.
    pub fn eval(&self, truth: &dyn Fn(&Atom) -> bool) -> bool {
        match self {
            Formula::Atom(a) => truth(a),
            Formula::And(xs) => xs.iter().all(|x| x.eval(truth)),
            Formula::Or(xs) => xs.iter().any(|x| x.eval(truth)),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown entity `{name}` at position {position}")]
    UnknownEntity { name: String, position: usize },
    #[error("unknown relation `{name}` at position {position}")]
    UnknownRelation { name: String, position: usize },
    #[error("unquantified variable {name}")]
    UnquantifiedVariable { name: String, position: usize },
    #[error("variable {0} is used both as the target and as a quantified variable")]
    TargetQuantified(String),
    #[error("variable {0} is quantified twice")]
    DuplicateVariable(String),
    #[error("quantified variable {0} does not occur in the formula")]
    UnusedVariable(String),
    #[error("the target variable does not occur in the formula")]
    TargetMissing,
    #[error("atoms with two anchors are not allowed")]
    TwoAnchors,
    #[error("atom relates variable {0:?} to itself")]
    SelfLoop(VarId),
    #[error("variable {0:?} is not declared")]
    UndeclaredVariable(VarId),
    #[error("invalid query structure: {0}")]
    InvalidStructure(String),
}

impl QueryError {
    /// Byte offset into the query text, for parse-time errors.
    pub fn position(&self) -> Option<usize> {
        match self {
            QueryError::Syntax { position, .. }
            | QueryError::UnknownEntity { position, .. }
            | QueryError::UnknownRelation { position, .. }
            | QueryError::UnquantifiedVariable { position, .. } => Some(*position),
            _ => None,
        }
    }

    /// The query text with a caret under the error position.
    pub fn caret(&self, text: &str) -> Option<String> {
        let pos = self.position()?;
        let col = text[..pos.min(text.len())].chars().count();
        Some(format!("{text}\n{}^", " ".repeat(col)))
    }
}

/// An EPFO query `?A : exists V1..Vm . formula`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpfoQuery {
    var_names: Vec<String>,
    formula: Formula,
    num_base_relations: u32,
}

impl EpfoQuery {
    /// `var_names[0]` names the target; the rest are the quantified variables.
    pub fn new(var_names: Vec<String>, formula: Formula, num_base_relations: u32) -> Result<Self, QueryError> {
        let atoms = formula.atoms();
        let mut used = BTreeSet::new();
        for atom in &atoms {
            atom.check_shape()?;
            for v in atom.vars() {
                if v.index() >= var_names.len() {
                    return Err(QueryError::UndeclaredVariable(v));
                }
                used.insert(v);
            }
        }
        if !used.contains(&VarId::TARGET) {
            return Err(QueryError::TargetMissing);
        }
        for (i, name) in var_names.iter().enumerate().skip(1) {
            if !used.contains(&VarId(i as u32)) {
                return Err(QueryError::UnusedVariable(name.clone()));
            }
        }
        Ok(EpfoQuery {
            var_names,
            formula,
            num_base_relations,
        })
    }

    pub fn target(&self) -> VarId {
        VarId::TARGET
    }

    pub fn bound_vars(&self) -> impl Iterator<Item = VarId> {
        (1..self.var_names.len() as u32).map(VarId)
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn formula(&self) -> &Formula {
        &self.formula
    }

    pub fn num_base_relations(&self) -> u32 {
        self.num_base_relations
    }

    /// Renders the query in the textual syntax accepted by [`parse_query`].
    pub fn to_dsl(&self, vocab: &Vocab) -> String {
        let mut out = format!("?{} :", quote_ident(&self.var_names[0]));
        if self.var_names.len() > 1 {
            let bound: Vec<String> = self.var_names[1..].iter().map(|n| quote_ident(n)).collect();
            out.push_str(&format!(" exists {} .", bound.join(", ")));
        }
        out.push(' ');
        write_formula(&mut out, &self.formula, vocab, &self.var_names, Parent::Top);
        out
    }
}

pub(crate) fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '/' | '\'' | '+' | '@' | '#' | '$' | '%' | '*')
}

fn quote_ident(name: &str) -> String {
    if !name.is_empty() && name.chars().all(is_ident_char) && name != "exists" {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

fn term_name(term: Term, vocab: &Vocab, vars: &[String]) -> String {
    match term {
        Term::Anchor(e) => quote_ident(vocab.entity_name(e)),
        Term::Var(v) => quote_ident(&vars[v.index()]),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Parent {
    Top,
    And,
    Or,
}

fn write_formula(out: &mut String, f: &Formula, vocab: &Vocab, vars: &[String], parent: Parent) {
    let (children, sep, kind) = match f {
        Formula::Atom(a) => {
            out.push_str(&format!(
                "{}({}, {})",
                quote_ident(vocab.relation_name(a.relation)),
                term_name(a.subject, vocab, vars),
                term_name(a.object, vocab, vars)
            ));
            return;
        }
        Formula::And(xs) => (xs, " & ", Parent::And),
        Formula::Or(xs) => (xs, " | ", Parent::Or),
    };
    // `&` binds tighter than `|`; anything else nested needs parentheses to
    // reparse into the same tree.
    let parens = match (parent, kind) {
        (Parent::Top, _) => false,
        (Parent::Or, Parent::And) => false,
        _ => true,
    };
    if parens {
        out.push('(');
    }
    for (i, x) in children.iter().enumerate() {
        if i > 0 {
            out.push_str(sep);
        }
        write_formula(out, x, vocab, vars, kind);
    }
    if parens {
        out.push(')');
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "?{}", self.0)
    }
}
