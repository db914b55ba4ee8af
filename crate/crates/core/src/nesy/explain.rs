use std::fmt;

use super::ast::{Atom, Axiom, ChannelRef, Expr};
use super::semantics::{eval_atom, expr_degree};
use super::KnowledgeBase;
use crate::signals::Window;

/// One atom blamed for a violation.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomFinding {
    pub atom: String,
    pub channels: Vec<String>,
    /// Worst sample, worst slope, or correlation, in raw units.
    pub observed: f64,
    /// Interval the axiom accepts for `observed`.
    pub acceptable: (f64, f64),
    /// True when the atom must be false for the axiom to hold (under NOT
    /// or on the left of IMPLIES).
    pub negated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainEntry {
    pub axiom: String,
    pub degree: f64,
    pub channels: Vec<String>,
    pub findings: Vec<AtomFinding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainReport {
    pub origin: usize,
    pub entries: Vec<ExplainEntry>,
}

impl ExplainReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Union of channels named by any entry, in first-mention order.
    pub fn channels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.entries {
            for c in &e.channels {
                if !out.contains(&c.as_str()) {
                    out.push(c);
                }
            }
        }
        out
    }
}

impl fmt::Display for ExplainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "window {}: {} violated axiom(s)", self.origin, self.entries.len())?;
        for e in &self.entries {
            writeln!(
                f,
                "  axiom {} (degree {:.3}) sensors: {}",
                e.axiom,
                e.degree,
                e.channels.join(", ")
            )?;
            for a in &e.findings {
                let (lo, hi) = a.acceptable;
                let expect = if a.negated {
                    format!("expected outside [{lo}, {hi}]")
                } else {
                    format!("acceptable [{lo}, {hi}]")
                };
                writeln!(f, "    {}: observed {:.6}, {expect}", a.atom, a.observed)?;
            }
        }
        Ok(())
    }
}

/// Atoms that push the axiom toward violation, with their polarity.
fn culprits<'a>(e: &'a Expr, x: &[f64], length: usize, cutoff: f64, positive: bool, out: &mut Vec<(&'a Atom, bool)>) {
    match e {
        Expr::Atom(a) => {
            let d = eval_atom(a, x, length, false).degree;
            let blamed = if positive { d < cutoff } else { d > 1.0 - cutoff };
            if blamed {
                out.push((a, !positive));
            }
        }
        Expr::Not(a) => culprits(a, x, length, cutoff, !positive, out),
        Expr::And(a, b) | Expr::Or(a, b) => {
            culprits(a, x, length, cutoff, positive, out);
            culprits(b, x, length, cutoff, positive, out);
        }
        Expr::Implies(a, b) => {
            culprits(a, x, length, cutoff, !positive, out);
            culprits(b, x, length, cutoff, positive, out);
        }
    }
}

/// Channels an atom blames. A correlation against a constant channel is
/// undefined because of that channel, so a single flat side takes the blame
/// alone.
fn atom_channels<'a>(atom: &'a Atom, x: &[f64], length: usize) -> Vec<&'a ChannelRef> {
    let flat = |c: &ChannelRef| {
        let row = &x[c.index * length..(c.index + 1) * length];
        row.iter().all(|&v| v == row[0])
    };
    match atom {
        Atom::Corr { a, b, .. } if flat(a) != flat(b) => vec![if flat(a) { a } else { b }],
        _ => atom.channels(),
    }
}

fn blamed_atoms<'a>(ax: &'a Axiom, x: &[f64], length: usize, cutoff: f64) -> Vec<(&'a Atom, bool)> {
    let mut out = Vec::new();
    culprits(&ax.expr, x, length, cutoff, true, &mut out);
    if out.is_empty() {
        // no single atom stands out; blame all of them
        out = ax.expr.atoms().into_iter().map(|a| (a, false)).collect();
    }
    out
}

/// Channel indices responsible for `ax` falling below `cutoff` on `x`.
pub(crate) fn culprit_channels(ax: &Axiom, x: &[f64], length: usize, cutoff: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for (atom, _) in blamed_atoms(ax, x, length, cutoff) {
        for c in atom_channels(atom, x, length) {
            if !out.contains(&c.index) {
                out.push(c.index);
            }
        }
    }
    out
}

/// Lists every axiom whose degree on `window` (raw units) is below
/// `cutoff`, with the sensors involved and the values the axiom accepts.
pub fn explain(kb: &KnowledgeBase, window: &Window, cutoff: f64) -> ExplainReport {
    let x = window.samples();
    let length = window.length();
    let mut entries = Vec::new();
    for ax in kb.axioms() {
        let degree = expr_degree(&ax.expr, x, length);
        if degree >= cutoff {
            continue;
        }
        let findings: Vec<AtomFinding> = blamed_atoms(ax, x, length, cutoff)
            .into_iter()
            .map(|(atom, negated)| AtomFinding {
                atom: atom.to_string(),
                channels: atom_channels(atom, x, length).iter().map(|c| c.name.clone()).collect(),
                observed: eval_atom(atom, x, length, false).observed,
                acceptable: atom.acceptable(),
                negated,
            })
            .collect();
        let mut channels: Vec<String> = Vec::new();
        for c in findings.iter().flat_map(|f| &f.channels) {
            if !channels.contains(c) {
                channels.push(c.clone());
            }
        }
        entries.push(ExplainEntry {
            axiom: ax.name.clone(),
            degree,
            channels,
            findings,
        });
    }
    ExplainReport {
        origin: window.origin(),
        entries,
    }
}
