//! Knowledge bases of sensor axioms with differentiable fuzzy semantics.
//!
//! Axioms are written in a small text language (`.kb` files):
//!
//! ```text
//! # joint limits, raw units
//! axiom j1_range: bound(joint1, -1.5, 1.5);
//! axiom coupled: corr(joint1, current1, 0.5) AND rate_bound(current1, 0.3);
//! axiom guarded: bound(joint2, -1, 1) IMPLIES NOT bound(current2, 2, 3);
//! ```
//!
//! Each axiom is implicitly quantified over windows. Atom degrees are
//! piecewise linear in the worst sample, connectives use the product
//! t-norm, and the knowledge-base degree is the product of axiom degrees.

mod ast;
mod explain;
mod lexer;
mod parser;
mod semantics;

pub use ast::{Atom, Axiom, ChannelRef, Expr};
pub use explain::{explain, AtomFinding, ExplainEntry, ExplainReport};
pub use semantics::{
    atom_degree, semantic_loss, Evaluation, Quantifier, SatisfactionReport, Violation,
};

use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KbError {
    #[error("{line}:{col}: {message}")]
    Parse {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("semantic loss weight must be >= 0, got {0}")]
    NegativeWeight(f64),
}

pub type Result<T> = std::result::Result<T, KbError>;

/// A parsed, validated axiom set bound to a channel schema. Immutable
/// after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    axioms: Vec<Axiom>,
    source: String,
    schema: Vec<String>,
}

impl KnowledgeBase {
    /// Parses `text` against the channel names in `schema`.
    pub fn parse(text: &str, schema: &[String]) -> Result<Self> {
        let axioms = parser::parse(text, schema)?;
        Ok(Self {
            axioms,
            source: text.to_string(),
            schema: schema.to_vec(),
        })
    }

    pub fn empty(schema: &[String]) -> Self {
        Self {
            axioms: Vec::new(),
            source: String::new(),
            schema: schema.to_vec(),
        }
    }

    pub fn axioms(&self) -> &[Axiom] {
        &self.axioms
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn is_empty(&self) -> bool {
        self.axioms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.axioms.len()
    }
}

impl fmt::Display for KnowledgeBase {
    /// Canonical text; parsing it yields the same axioms.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.axioms {
            writeln!(f, "{a}")?;
        }
        Ok(())
    }
}
