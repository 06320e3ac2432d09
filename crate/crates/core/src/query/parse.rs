//! Recursive-descent parser for the query syntax:
//!
//! ```text
//! query  := '?' IDENT ':' ['exists' IDENT (',' IDENT)* '.'] expr
//! expr   := term ('|' term)*
//! term   := factor ('&' factor)*
//! factor := IDENT '(' arg ',' arg ')' | '(' expr ')'
//! arg    := IDENT
//! ```
//!
//! Identifiers are runs of letters, digits and `_-/'+@#$%*`, or double-quoted
//! strings. `∃`, `∧` and `∨` are accepted for `exists`, `&` and `|`. Arguments
//! resolve to declared variables first, then to entity names.

use std::collections::HashMap;

use super::{is_ident_char, Atom, EpfoQuery, Formula, QueryError, Term, VarId};
use crate::kg::Vocab;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Question,
    Colon,
    Dot,
    Comma,
    LParen,
    RParen,
    And,
    Or,
    Exists,
    Ident(String),
    Eof,
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Question => "`?`".into(),
        Tok::Colon => "`:`".into(),
        Tok::Dot => "`.`".into(),
        Tok::Comma => "`,`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::And => "`&`".into(),
        Tok::Or => "`|`".into(),
        Tok::Exists => "`exists`".into(),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Eof => "end of input".into(),
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, QueryError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let single = match c {
            '?' => Some(Tok::Question),
            ':' => Some(Tok::Colon),
            '.' => Some(Tok::Dot),
            ',' => Some(Tok::Comma),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '&' | '∧' => Some(Tok::And),
            '|' | '∨' => Some(Tok::Or),
            '∃' => Some(Tok::Exists),
            _ => None,
        };
        if let Some(tok) = single {
            chars.next();
            out.push((tok, pos));
            continue;
        }
        if c == '"' {
            chars.next();
            let mut s = String::new();
            let mut closed = false;
            while let Some((_, c)) = chars.next() {
                match c {
                    '"' => {
                        closed = true;
                        break;
                    }
                    '\\' => match chars.next() {
                        Some((_, e)) => s.push(e),
                        None => break,
                    },
                    _ => s.push(c),
                }
            }
            if !closed {
                return Err(QueryError::Syntax {
                    position: pos,
                    message: "unterminated quoted identifier".into(),
                });
            }
            out.push((Tok::Ident(s), pos));
            continue;
        }
        if is_ident_char(c) {
            let mut s = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if !is_ident_char(c) {
                    break;
                }
                s.push(c);
                chars.next();
            }
            out.push((Tok::Ident(s), pos));
            continue;
        }
        return Err(QueryError::Syntax {
            position: pos,
            message: format!("unexpected character `{c}`"),
        });
    }
    out.push((Tok::Eof, text.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    vocab: &'a Vocab,
    vars: HashMap<String, VarId>,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<usize, QueryError> {
        if *self.peek() == want {
            Ok(self.bump().1)
        } else {
            Err(QueryError::Syntax {
                position: self.pos(),
                message: format!("expected {}, found {}", describe(&want), describe(self.peek())),
            })
        }
    }

    fn ident(&mut self) -> Result<(String, usize), QueryError> {
        match self.bump() {
            (Tok::Ident(s), pos) => Ok((s, pos)),
            (other, pos) => Err(QueryError::Syntax {
                position: pos,
                message: format!("expected identifier, found {}", describe(&other)),
            }),
        }
    }

    fn expr(&mut self) -> Result<Formula, QueryError> {
        let mut terms = vec![self.term()?];
        while *self.peek() == Tok::Or {
            self.bump();
            terms.push(self.term()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Formula::Or(terms)
        })
    }

    fn term(&mut self) -> Result<Formula, QueryError> {
        let mut factors = vec![self.factor()?];
        while *self.peek() == Tok::And {
            self.bump();
            factors.push(self.factor()?);
        }
        Ok(if factors.len() == 1 {
            factors.pop().unwrap()
        } else {
            Formula::And(factors)
        })
    }

    fn factor(&mut self) -> Result<Formula, QueryError> {
        if *self.peek() == Tok::LParen {
            self.bump();
            let inner = self.expr()?;
            self.expect(Tok::RParen)?;
            return Ok(inner);
        }
        let (name, pos) = self.ident()?;
        let relation = self
            .vocab
            .relation_id(&name)
            .ok_or(QueryError::UnknownRelation { name, position: pos })?;
        self.expect(Tok::LParen)?;
        let subject = self.arg()?;
        self.expect(Tok::Comma)?;
        let object = self.arg()?;
        self.expect(Tok::RParen)?;
        let atom = Atom::new(relation, subject, object);
        match (subject, object) {
            (Term::Anchor(_), Term::Anchor(_)) => Err(QueryError::Syntax {
                position: pos,
                message: "atom relates two anchors; at least one argument must be a variable".into(),
            }),
            (Term::Var(a), Term::Var(b)) if a == b => Err(QueryError::Syntax {
                position: pos,
                message: "atom relates a variable to itself".into(),
            }),
            _ => Ok(Formula::Atom(atom)),
        }
    }

    fn arg(&mut self) -> Result<Term, QueryError> {
        let (name, position) = self.ident()?;
        if let Some(&v) = self.vars.get(&name) {
            return Ok(Term::Var(v));
        }
        if let Some(e) = self.vocab.entity_id(&name) {
            return Ok(Term::Anchor(e));
        }
        if name.chars().next().is_some_and(char::is_uppercase) {
            Err(QueryError::UnquantifiedVariable { name, position })
        } else {
            Err(QueryError::UnknownEntity { name, position })
        }
    }
}

/// Parses a query, resolving relation and entity names against `vocab`.
pub fn parse_query(text: &str, vocab: &Vocab) -> Result<EpfoQuery, QueryError> {
    let mut p = Parser {
        toks: lex(text)?,
        at: 0,
        vocab,
        vars: HashMap::new(),
    };
    p.expect(Tok::Question)?;
    let (target, _) = p.ident()?;
    p.expect(Tok::Colon)?;
    let mut names = vec![target.clone()];
    p.vars.insert(target.clone(), VarId::TARGET);
    let is_exists = match p.peek() {
        Tok::Exists => true,
        Tok::Ident(s) if s == "exists" => matches!(p.toks.get(p.at + 1), Some((Tok::Ident(_), _))),
        _ => false,
    };
    if is_exists {
        p.bump();
        loop {
            let (name, _) = p.ident()?;
            if name == target {
                return Err(QueryError::TargetQuantified(name));
            }
            if p.vars.contains_key(&name) {
                return Err(QueryError::DuplicateVariable(name));
            }
            p.vars.insert(name.clone(), VarId(names.len() as u32));
            names.push(name);
            if *p.peek() == Tok::Comma {
                p.bump();
            } else {
                break;
            }
        }
        p.expect(Tok::Dot)?;
    }
    let formula = p.expr()?;
    p.expect(Tok::Eof)?;
    EpfoQuery::new(names, formula, vocab.num_base_relations())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{EntityId, RelationId};

    fn vocab() -> Vocab {
        Vocab::new(
            ["t", "t1", "t2", "d1", "p1"].iter().map(|s| s.to_string()).collect(),
            vec!["interacts".into(), "assoc".into()],
        )
        .unwrap()
    }

    #[test]
    fn conjunctive_drug_query() {
        let v = vocab();
        let q = parse_query("?D : exists P . interacts(D,P) & assoc(P,t)", &v).unwrap();
        assert_eq!(q.var_names(), ["D", "P"]);
        assert_eq!(q.bound_vars().collect::<Vec<_>>(), vec![VarId(1)]);
        let (i, a) = (RelationId(0), RelationId(1));
        assert_eq!(
            q.formula(),
            &Formula::And(vec![
                Formula::Atom(Atom::new(i, Term::Var(VarId(0)), Term::Var(VarId(1)))),
                Formula::Atom(Atom::new(a, Term::Var(VarId(1)), Term::Anchor(EntityId(0)))),
            ])
        );
    }

    #[test]
    fn disjunctive_drug_query_has_and_over_or() {
        let v = vocab();
        let q = parse_query("?D : exists P . interacts(D,P) & (assoc(P,t1) | assoc(P,t2))", &v).unwrap();
        match q.formula() {
            Formula::And(xs) => {
                assert!(matches!(xs[0], Formula::Atom(_)));
                assert!(matches!(&xs[1], Formula::Or(ys) if ys.len() == 2));
            }
            other => panic!("expected And, got {other:?}"),
        }
    }

    #[test]
    fn unquantified_variable() {
        let err = parse_query("?D : assoc(P,t)", &vocab()).unwrap_err();
        assert_eq!(err.to_string(), "unquantified variable P");
    }

    #[test]
    fn errors() {
        let v = vocab();
        assert!(matches!(
            parse_query("?D : exists D . assoc(D,t)", &v),
            Err(QueryError::TargetQuantified(_))
        ));
        assert!(matches!(
            parse_query("?D : likes(D,t)", &v),
            Err(QueryError::UnknownRelation { position: 5, .. })
        ));
        assert!(matches!(
            parse_query("?D : assoc(D,zzz)", &v),
            Err(QueryError::UnknownEntity { .. })
        ));
        assert!(matches!(
            parse_query("?D : exists P . assoc(D,t)", &v),
            Err(QueryError::UnusedVariable(_))
        ));
        let err = parse_query("?D : assoc(D t)", &v).unwrap_err();
        assert_eq!(err.position(), Some(13));
        assert_eq!(err.caret("?D : assoc(D t)").unwrap(), "?D : assoc(D t)\n             ^");
        assert!(parse_query("?D : assoc(t, t1)", &v).is_err());
    }

    #[test]
    fn unicode_connectives_and_quoting() {
        let v = Vocab::new(vec!["/m/0 x".into(), "b".into()], vec!["r.1".into()]).unwrap();
        let q = parse_query("?A : ∃ V . \"r.1\"(\"/m/0 x\", V) ∧ \"r.1\"(V, A)", &v).unwrap();
        assert_eq!(q.formula().atoms().len(), 2);
        let printed = q.to_dsl(&v);
        assert_eq!(parse_query(&printed, &v).unwrap(), q);
    }

    #[test]
    fn print_parse_round_trip() {
        let v = vocab();
        for text in [
            "?D : exists P . interacts(D,P) & (assoc(P,t1) | assoc(P,t2))",
            "?D : (interacts(D,p1) & assoc(D,t)) & interacts(D, d1)",
            "?D : exists P, Q . (interacts(D,P) | interacts(D,Q)) & (assoc(P,t) | assoc(Q,t1) | assoc(P, t2))",
            "?D : interacts(D,p1) | (assoc(D,t) | assoc(D,t1))",
        ] {
            let q = parse_query(text, &v).unwrap();
            let printed = q.to_dsl(&v);
            assert_eq!(parse_query(&printed, &v).unwrap(), q, "{printed}");
        }
    }
}
