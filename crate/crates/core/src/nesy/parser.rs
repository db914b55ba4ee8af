//! Recursive-descent parser.
//!
//! ```text
//! kb     := axiom*
//! axiom  := "axiom" IDENT ":" expr ";"
//! expr   := disj ("IMPLIES" expr)?
//! disj   := term ("OR" term)*
//! term   := factor ("AND" factor)*
//! factor := "NOT" factor | "(" expr ")" | atom
//! atom   := ("bound" | "rate_bound" | "corr") "(" args ")"
//! ```

use super::ast::{Atom, Axiom, ChannelRef, Expr};
use super::lexer::{tokenize, Tok, Token};
use super::{KbError, Result};

pub(crate) fn parse(text: &str, schema: &[String]) -> Result<Vec<Axiom>> {
    let tokens = tokenize(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        schema,
    };
    let mut axioms: Vec<Axiom> = Vec::new();
    while p.peek().tok != Tok::Eof {
        let start = p.peek().clone();
        let axiom = p.axiom()?;
        if axioms.iter().any(|a| a.name == axiom.name) {
            return Err(KbError::Parse {
                line: start.line,
                col: start.col,
                message: format!("duplicate axiom name `{}`", axiom.name),
            });
        }
        axioms.push(axiom);
    }
    Ok(axioms)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    schema: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn error_at<T>(&self, t: &Token, message: String) -> Result<T> {
        Err(KbError::Parse {
            line: t.line,
            col: t.col,
            message,
        })
    }

    fn expect(&mut self, want: Tok) -> Result<Token> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            self.error_at(&t, format!("expected {}, found {}", want.describe(), t.tok.describe()))
        }
    }

    fn ident(&mut self) -> Result<(String, Token)> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) => Ok((s.clone(), t.clone())),
            other => self.error_at(&t, format!("expected identifier, found {}", other.describe())),
        }
    }

    fn number(&mut self) -> Result<(f64, Token)> {
        let t = self.next();
        match t.tok {
            Tok::Number(v) => Ok((v, t)),
            ref other => self.error_at(&t, format!("expected number, found {}", other.describe())),
        }
    }

    fn channel(&mut self) -> Result<ChannelRef> {
        let (name, t) = self.ident()?;
        match self.schema.iter().position(|c| *c == name) {
            Some(index) => Ok(ChannelRef { name, index }),
            None => self.error_at(&t, format!("unknown channel `{name}`")),
        }
    }

    fn axiom(&mut self) -> Result<Axiom> {
        self.expect(Tok::Axiom)?;
        let (name, _) = self.ident()?;
        self.expect(Tok::Colon)?;
        let expr = self.expr()?;
        self.expect(Tok::Semi)?;
        Ok(Axiom { name, expr })
    }

    fn expr(&mut self) -> Result<Expr> {
        let lhs = self.disj()?;
        if self.peek().tok == Tok::Implies {
            self.next();
            let rhs = self.expr()?;
            return Ok(Expr::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn disj(&mut self) -> Result<Expr> {
        let mut e = self.term()?;
        while self.peek().tok == Tok::Or {
            self.next();
            let rhs = self.term()?;
            e = Expr::Or(Box::new(e), Box::new(rhs));
        }
        Ok(e)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut e = self.factor()?;
        while self.peek().tok == Tok::And {
            self.next();
            let rhs = self.factor()?;
            e = Expr::And(Box::new(e), Box::new(rhs));
        }
        Ok(e)
    }

    fn factor(&mut self) -> Result<Expr> {
        match self.peek().tok {
            Tok::Not => {
                self.next();
                Ok(Expr::Not(Box::new(self.factor()?)))
            }
            Tok::LParen => {
                self.next();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            _ => Ok(Expr::Atom(self.atom()?)),
        }
    }

    fn atom(&mut self) -> Result<Atom> {
        let (kind, t) = self.ident()?;
        self.expect(Tok::LParen)?;
        let atom = match kind.as_str() {
            "bound" => {
                let channel = self.channel()?;
                self.expect(Tok::Comma)?;
                let (lo, _) = self.number()?;
                self.expect(Tok::Comma)?;
                let (hi, hi_tok) = self.number()?;
                if lo >= hi {
                    return self.error_at(&hi_tok, format!("bound requires lo < hi, got [{lo}, {hi}]"));
                }
                Atom::Bound { channel, lo, hi }
            }
            "rate_bound" => {
                let channel = self.channel()?;
                self.expect(Tok::Comma)?;
                let (max_abs_slope, st) = self.number()?;
                if max_abs_slope <= 0.0 {
                    return self.error_at(&st, format!("rate_bound requires a positive slope, got {max_abs_slope}"));
                }
                Atom::RateBound {
                    channel,
                    max_abs_slope,
                }
            }
            "corr" => {
                let a = self.channel()?;
                self.expect(Tok::Comma)?;
                let b = self.channel()?;
                self.expect(Tok::Comma)?;
                let (min_corr, ct) = self.number()?;
                if !(-1.0..=1.0).contains(&min_corr) {
                    return self.error_at(&ct, format!("corr threshold must be in [-1, 1], got {min_corr}"));
                }
                Atom::Corr { a, b, min_corr }
            }
            other => {
                return self.error_at(
                    &t,
                    format!("unknown predicate `{other}` (expected bound, rate_bound or corr)"),
                )
            }
        };
        self.expect(Tok::RParen)?;
        Ok(atom)
    }
}
