//! Disjunctive normal form and per-conjunction execution plans.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use super::{Atom, EpfoQuery, Formula, QueryError, Term, VarId};
use crate::kg::RelationId;

/// Distributes `&` over `|`. Repeated atoms inside a conjunction and repeated
/// conjunctions (compared as atom sets) are dropped, keeping first occurrences.
pub fn dnf_terms(f: &Formula) -> Vec<Vec<Atom>> {
    let raw = expand(f);
    let mut seen: BTreeSet<BTreeSet<Atom>> = BTreeSet::new();
    let mut out = Vec::new();
    for conj in raw {
        let mut uniq: Vec<Atom> = Vec::with_capacity(conj.len());
        for a in conj {
            if !uniq.contains(&a) {
                uniq.push(a);
            }
        }
        if seen.insert(uniq.iter().copied().collect()) {
            out.push(uniq);
        }
    }
    out
}

fn expand(f: &Formula) -> Vec<Vec<Atom>> {
    match f {
        Formula::Atom(a) => vec![vec![*a]],
        Formula::Or(xs) => xs.iter().flat_map(expand).collect(),
        Formula::And(xs) => {
            let mut acc: Vec<Vec<Atom>> = vec![Vec::new()];
            for x in xs {
                let rhs = expand(x);
                let mut next = Vec::with_capacity(acc.len() * rhs.len());
                for l in &acc {
                    for r in &rhs {
                        let mut c = l.clone();
                        c.extend_from_slice(r);
                        next.push(c);
                    }
                }
                acc = next;
            }
            acc
        }
    }
}

/// An atom oriented so that its object is a variable and its subject is an
/// anchor or a variable that precedes the object in the plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct OrientedAtom {
    /// Position of the source atom within its conjunction.
    pub index: usize,
    pub relation: RelationId,
    pub subject: Term,
    pub object: VarId,
    /// True when the written atom was reversed through its reciprocal relation.
    pub flipped: bool,
}

/// A variable together with all atoms pointing into it, sorted by atom index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarBlock {
    pub var: VarId,
    pub atoms: Vec<OrientedAtom>,
}

/// Variables in dependency order. The target block is always last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plan {
    pub blocks: Vec<VarBlock>,
}

impl Plan {
    pub fn bound_blocks(&self) -> &[VarBlock] {
        &self.blocks[..self.blocks.len() - 1]
    }

    pub fn target_block(&self) -> &VarBlock {
        self.blocks.last().expect("plan always contains the target")
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.blocks.iter().map(|b| b.var)
    }

    pub fn num_atoms(&self) -> usize {
        self.blocks.iter().map(|b| b.atoms.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conjunction {
    pub atoms: Vec<Atom>,
    pub plan: Plan,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DnfQuery {
    var_names: Vec<String>,
    disjuncts: Vec<Conjunction>,
    num_base_relations: u32,
}

impl DnfQuery {
    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn disjuncts(&self) -> &[Conjunction] {
        &self.disjuncts
    }

    pub fn num_base_relations(&self) -> u32 {
        self.num_base_relations
    }

    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    /// The query restricted to its `i`-th disjunct.
    pub fn disjunct_query(&self, i: usize) -> DnfQuery {
        DnfQuery {
            var_names: self.var_names.clone(),
            disjuncts: vec![self.disjuncts[i].clone()],
            num_base_relations: self.num_base_relations,
        }
    }
}

/// Normalises a query and plans every conjunction.
pub fn to_dnf(q: &EpfoQuery) -> Result<DnfQuery, QueryError> {
    let disjuncts = dnf_terms(q.formula())
        .into_iter()
        .map(|atoms| plan_conjunction(atoms, q.var_names(), q.num_base_relations()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DnfQuery {
        var_names: q.var_names().to_vec(),
        disjuncts,
        num_base_relations: q.num_base_relations(),
    })
}

fn plan_conjunction(atoms: Vec<Atom>, names: &[String], num_base: u32) -> Result<Conjunction, QueryError> {
    let name = |v: VarId| names[v.index()].clone();
    let vars: BTreeSet<VarId> = atoms.iter().flat_map(|a| a.vars()).collect();
    if !vars.contains(&VarId::TARGET) {
        return Err(QueryError::InvalidStructure(format!(
            "a disjunct does not mention the target {}",
            name(VarId::TARGET)
        )));
    }

    // undirected BFS distance to the target over variable-variable atoms
    let mut adj: BTreeMap<VarId, Vec<VarId>> = BTreeMap::new();
    for a in &atoms {
        if let (Term::Var(u), Term::Var(v)) = (a.subject, a.object) {
            adj.entry(u).or_default().push(v);
            adj.entry(v).or_default().push(u);
        }
    }
    let mut dist: BTreeMap<VarId, usize> = BTreeMap::new();
    dist.insert(VarId::TARGET, 0);
    let mut queue = VecDeque::from([VarId::TARGET]);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        for &v in adj.get(&u).into_iter().flatten() {
            if !dist.contains_key(&v) {
                dist.insert(v, d + 1);
                queue.push_back(v);
            }
        }
    }
    let depth = |v: VarId| dist.get(&v).copied().unwrap_or(usize::MAX);

    let oriented: Vec<OrientedAtom> = atoms
        .iter()
        .enumerate()
        .map(|(index, a)| {
            let inv = a.relation.inverse(num_base);
            let keep = match (a.subject, a.object) {
                (_, Term::Anchor(_)) => false,
                (Term::Anchor(_), Term::Var(_)) => true,
                (Term::Var(s), Term::Var(o)) => depth(s) >= depth(o),
            };
            match (keep, a.subject, a.object) {
                (true, subject, Term::Var(object)) => OrientedAtom {
                    index,
                    relation: a.relation,
                    subject,
                    object,
                    flipped: false,
                },
                (false, Term::Var(s), object) => OrientedAtom {
                    index,
                    relation: inv,
                    subject: object,
                    object: s,
                    flipped: true,
                },
                _ => unreachable!("atoms with two anchors are rejected when the query is built"),
            }
        })
        .collect();

    for &v in &vars {
        if !oriented.iter().any(|a| a.object == v) {
            return Err(QueryError::InvalidStructure(format!(
                "variable {} is not reachable from any anchor",
                name(v)
            )));
        }
        if !v.is_target() && !oriented.iter().any(|a| a.subject == Term::Var(v)) {
            return Err(QueryError::InvalidStructure(format!(
                "variable {} does not lead to the target",
                name(v)
            )));
        }
    }
    let order = topo_order(&vars, &oriented).ok_or_else(|| {
        QueryError::InvalidStructure("the variables of a disjunct form a cycle".into())
    })?;
    let blocks = order
        .into_iter()
        .map(|var| {
            let mut incoming: Vec<OrientedAtom> = oriented.iter().filter(|a| a.object == var).copied().collect();
            incoming.sort_by_key(|a| a.index);
            VarBlock { var, atoms: incoming }
        })
        .collect();
    Ok(Conjunction {
        atoms,
        plan: Plan { blocks },
    })
}

/// Kahn's algorithm over `vars`. Among ready variables, the one whose earliest
/// incoming atom has the smallest index goes first; the target is held back
/// until it is the only one left. Returns `None` on a cycle.
pub fn topo_order(vars: &BTreeSet<VarId>, atoms: &[OrientedAtom]) -> Option<Vec<VarId>> {
    let mut indeg: BTreeMap<VarId, usize> = vars.iter().map(|&v| (v, 0)).collect();
    let mut first: BTreeMap<VarId, usize> = BTreeMap::new();
    for a in atoms {
        if a.subject.var().is_some() {
            *indeg.get_mut(&a.object)? += 1;
        }
        let f = first.entry(a.object).or_insert(a.index);
        *f = (*f).min(a.index);
    }
    let mut order = Vec::with_capacity(vars.len());
    let mut done: BTreeSet<VarId> = BTreeSet::new();
    while order.len() < vars.len() {
        let ready = indeg
            .iter()
            .filter(|(v, &d)| d == 0 && !done.contains(v))
            .map(|(&v, _)| v)
            .filter(|v| !v.is_target() || done.len() + 1 == vars.len())
            .min_by_key(|v| (first.get(v).copied().unwrap_or(usize::MAX), v.0))?;
        done.insert(ready);
        order.push(ready);
        for a in atoms {
            if a.subject == Term::Var(ready) {
                *indeg.get_mut(&a.object)? -= 1;
            }
        }
    }
    Some(order)
}
