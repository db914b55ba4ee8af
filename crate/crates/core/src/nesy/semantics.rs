use super::ast::{Atom, Axiom, Expr};
use super::{KbError, KnowledgeBase, Result};
use crate::signals::Window;

/// How an axiom's per-window degrees are aggregated over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Quantifier {
    #[default]
    Mean,
    Min,
}

/// Result of evaluating an atom on one window.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AtomEval {
    pub degree: f64,
    /// Worst sample value, worst slope, or correlation.
    pub observed: f64,
    /// Sparse `(sample index, ∂degree/∂sample)`; empty unless requested.
    pub grad: Vec<(usize, f64)>,
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Piecewise-linear degree for `value ∈ [lo, hi]` with a margin of 10% of
/// the range: 1 inside, 0 beyond `margin` outside.
/// Returns the degree and its derivative w.r.t. `value`.
fn interval_degree(value: f64, lo: f64, hi: f64) -> (f64, f64) {
    let margin = 0.1 * (hi - lo);
    let (dist, ddist) = if value < lo {
        (lo - value, -1.0)
    } else if value > hi {
        (value - hi, 1.0)
    } else {
        (0.0, 0.0)
    };
    let raw = 1.0 - dist / margin;
    if dist == 0.0 {
        (1.0, 0.0)
    } else if raw <= 0.0 {
        (0.0, 0.0)
    } else {
        (raw, -ddist / margin)
    }
}

/// Index maximizing the signed excursion `max(lo − v, v − hi)`.
fn worst_index(values: impl Iterator<Item = f64>, lo: f64, hi: f64) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY, 0.0);
    for (i, v) in values.enumerate() {
        let excursion = (lo - v).max(v - hi);
        if excursion > best.1 {
            best = (i, excursion, v);
        }
    }
    (best.0, best.2)
}

pub(crate) fn eval_atom(atom: &Atom, x: &[f64], length: usize, want_grad: bool) -> AtomEval {
    match atom {
        Atom::Bound { channel, lo, hi } => {
            let base = channel.index * length;
            let row = &x[base..base + length];
            let (i, v) = worst_index(row.iter().copied(), *lo, *hi);
            let (degree, d) = interval_degree(v, *lo, *hi);
            let grad = if want_grad && d != 0.0 { vec![(base + i, d)] } else { Vec::new() };
            AtomEval {
                degree,
                observed: v,
                grad,
            }
        }
        Atom::RateBound {
            channel,
            max_abs_slope,
        } => {
            let base = channel.index * length;
            let row = &x[base..base + length];
            if length < 2 {
                return AtomEval {
                    degree: 1.0,
                    observed: 0.0,
                    grad: Vec::new(),
                };
            }
            let m = *max_abs_slope;
            let (i, s) = worst_index(row.windows(2).map(|p| p[1] - p[0]), -m, m);
            let (degree, d) = interval_degree(s, -m, m);
            let grad = if want_grad && d != 0.0 {
                vec![(base + i + 1, d), (base + i, -d)]
            } else {
                Vec::new()
            };
            AtomEval {
                degree,
                observed: s,
                grad,
            }
        }
        Atom::Corr { a, b, min_corr } => {
            let ra = &x[a.index * length..(a.index + 1) * length];
            let rb = &x[b.index * length..(b.index + 1) * length];
            let n = length as f64;
            let ma = ra.iter().sum::<f64>() / n;
            let mb = rb.iter().sum::<f64>() / n;
            let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
            for (&u, &v) in ra.iter().zip(rb) {
                let (du, dv) = (u - ma, v - mb);
                saa += du * du;
                sbb += dv * dv;
                sab += du * dv;
            }
            let denom = (saa * sbb).sqrt();
            // a flat channel carries no correlation evidence
            let rho = if denom > 1e-300 { (sab / denom).clamp(-1.0, 1.0) } else { 0.0 };
            let span = 1.0 - min_corr;
            let (degree, slope) = if span <= 0.0 {
                (if rho >= 1.0 { 1.0 } else { 0.0 }, 0.0)
            } else {
                let raw = (rho - min_corr) / span;
                if raw <= 0.0 || raw >= 1.0 {
                    (clamp01(raw), 0.0)
                } else {
                    (raw, 1.0 / span)
                }
            };
            let mut grad = Vec::new();
            if want_grad && slope != 0.0 && denom > 1e-300 {
                for i in 0..length {
                    let (da, db) = (ra[i] - ma, rb[i] - mb);
                    let g_a = db / denom - rho * da / saa;
                    let g_b = da / denom - rho * db / sbb;
                    grad.push((a.index * length + i, slope * g_a));
                    grad.push((b.index * length + i, slope * g_b));
                }
            }
            AtomEval {
                degree,
                observed: rho,
                grad,
            }
        }
    }
}

/// Degree of a single atom on a channel-major window of `length` samples.
pub fn atom_degree(atom: &Atom, window: &[f64], length: usize) -> f64 {
    eval_atom(atom, window, length, false).degree
}

pub(crate) fn expr_degree(e: &Expr, x: &[f64], length: usize) -> f64 {
    match e {
        Expr::Atom(a) => atom_degree(a, x, length),
        Expr::Not(a) => 1.0 - expr_degree(a, x, length),
        Expr::And(a, b) => expr_degree(a, x, length) * expr_degree(b, x, length),
        Expr::Or(a, b) => {
            let (p, q) = (expr_degree(a, x, length), expr_degree(b, x, length));
            p + q - p * q
        }
        Expr::Implies(a, b) => {
            let (p, q) = (expr_degree(a, x, length), expr_degree(b, x, length));
            1.0 - p + p * q
        }
    }
}

/// Accumulates `adjoint · ∂degree(e)/∂x` into `grad`.
fn expr_backprop(e: &Expr, x: &[f64], length: usize, adjoint: f64, grad: &mut [f64]) {
    if adjoint == 0.0 {
        return;
    }
    match e {
        Expr::Atom(a) => {
            for (i, g) in eval_atom(a, x, length, true).grad {
                grad[i] += adjoint * g;
            }
        }
        Expr::Not(a) => expr_backprop(a, x, length, -adjoint, grad),
        Expr::And(a, b) => {
            let (p, q) = (expr_degree(a, x, length), expr_degree(b, x, length));
            expr_backprop(a, x, length, adjoint * q, grad);
            expr_backprop(b, x, length, adjoint * p, grad);
        }
        Expr::Or(a, b) => {
            let (p, q) = (expr_degree(a, x, length), expr_degree(b, x, length));
            expr_backprop(a, x, length, adjoint * (1.0 - q), grad);
            expr_backprop(b, x, length, adjoint * (1.0 - p), grad);
        }
        Expr::Implies(a, b) => {
            let (p, q) = (expr_degree(a, x, length), expr_degree(b, x, length));
            expr_backprop(a, x, length, adjoint * (q - 1.0), grad);
            expr_backprop(b, x, length, adjoint * p, grad);
        }
    }
}

/// Degrees of a knowledge base over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `[axiom][window]` degrees.
    pub window_degrees: Vec<Vec<f64>>,
    /// Quantified degree per axiom.
    pub axiom_degrees: Vec<f64>,
    /// Product of axiom degrees; 1 for an empty knowledge base.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub axiom: String,
    pub degree: f64,
    pub channels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SatisfactionReport {
    pub axioms: Vec<(String, f64)>,
    pub total: f64,
    pub violations: Vec<Violation>,
}

fn product_except(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![1.0; n];
    let mut acc = 1.0;
    for i in 0..n {
        out[i] = acc;
        acc *= values[i];
    }
    acc = 1.0;
    for i in (0..n).rev() {
        out[i] *= acc;
        acc *= values[i];
    }
    out
}

impl KnowledgeBase {
    fn check_batch(&self, batch: &[f64], length: usize) -> Result<usize> {
        let dim = self.schema().len() * length;
        if length == 0 || dim == 0 || !batch.len().is_multiple_of(dim) {
            return Err(KbError::Schema(format!(
                "batch of {} values is not a whole number of {}-channel windows of length {length}",
                batch.len(),
                self.schema().len()
            )));
        }
        let n = batch.len() / dim;
        if n == 0 {
            return Err(KbError::EmptyBatch);
        }
        Ok(n)
    }

    /// Degree of one axiom on one channel-major window.
    pub fn axiom_degree(&self, axiom: &Axiom, window: &[f64], length: usize) -> f64 {
        expr_degree(&axiom.expr, window, length)
    }

    /// Evaluates every axiom on a flat batch of channel-major windows (raw units).
    pub fn evaluate(&self, batch: &[f64], length: usize, quantifier: Quantifier) -> Result<Evaluation> {
        let n = self.check_batch(batch, length)?;
        let dim = batch.len() / n;
        let window_degrees: Vec<Vec<f64>> = self
            .axioms()
            .iter()
            .map(|ax| {
                batch
                    .chunks_exact(dim)
                    .map(|x| expr_degree(&ax.expr, x, length))
                    .collect()
            })
            .collect();
        let axiom_degrees: Vec<f64> = window_degrees
            .iter()
            .map(|ds| match quantifier {
                Quantifier::Mean => ds.iter().sum::<f64>() / n as f64,
                Quantifier::Min => ds.iter().copied().fold(f64::INFINITY, f64::min),
            })
            .collect();
        let total = axiom_degrees.iter().product();
        Ok(Evaluation {
            window_degrees,
            axiom_degrees,
            total,
        })
    }

    /// Evaluation plus `∂total/∂batch`.
    pub fn evaluate_with_grad(
        &self,
        batch: &[f64],
        length: usize,
        quantifier: Quantifier,
    ) -> Result<(Evaluation, Vec<f64>)> {
        let eval = self.evaluate(batch, length, quantifier)?;
        let n = batch.len() / self.schema().len() / length;
        let dim = batch.len() / n;
        let outer = product_except(&eval.axiom_degrees);
        let mut grad = vec![0.0; batch.len()];
        for (k, ax) in self.axioms().iter().enumerate() {
            if outer[k] == 0.0 {
                continue;
            }
            match quantifier {
                Quantifier::Mean => {
                    let adj = outer[k] / n as f64;
                    for (x, g) in batch.chunks_exact(dim).zip(grad.chunks_exact_mut(dim)) {
                        expr_backprop(&ax.expr, x, length, adj, g);
                    }
                }
                Quantifier::Min => {
                    let ds = &eval.window_degrees[k];
                    let w = ds
                        .iter()
                        .enumerate()
                        .fold((0, f64::INFINITY), |best, (i, &d)| if d < best.1 { (i, d) } else { best })
                        .0;
                    let range = w * dim..(w + 1) * dim;
                    expr_backprop(&ax.expr, &batch[range.clone()], length, outer[k], &mut grad[range]);
                }
            }
        }
        Ok((eval, grad))
    }

    /// Satisfaction of raw-unit windows, listing axioms below `cutoff`.
    pub fn satisfaction(
        &self,
        windows: &[Window],
        quantifier: Quantifier,
        cutoff: f64,
    ) -> Result<SatisfactionReport> {
        let first = windows.first().ok_or(KbError::EmptyBatch)?;
        let length = first.length();
        for w in windows {
            if w.channel_names().as_ref() != self.schema() || w.length() != length {
                return Err(KbError::Schema(format!(
                    "window channels {:?} do not match knowledge-base schema {:?}",
                    w.channel_names(),
                    self.schema()
                )));
            }
        }
        let batch: Vec<f64> = windows.iter().flat_map(|w| w.samples().iter().copied()).collect();
        let eval = self.evaluate(&batch, length, quantifier)?;
        let dim = first.dim();
        let mut violations = Vec::new();
        for (k, ax) in self.axioms().iter().enumerate() {
            let degree = eval.axiom_degrees[k];
            if degree >= cutoff {
                continue;
            }
            // attribute using the least-satisfied window
            let worst = eval.window_degrees[k]
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |b, (i, &d)| if d < b.1 { (i, d) } else { b })
                .0;
            let x = &batch[worst * dim..(worst + 1) * dim];
            let channels = super::explain::culprit_channels(ax, x, length, cutoff)
                .into_iter()
                .map(|c| self.schema()[c].clone())
                .collect();
            violations.push(Violation {
                axiom: ax.name.clone(),
                degree,
                channels,
            });
        }
        Ok(SatisfactionReport {
            axioms: self
                .axioms()
                .iter()
                .zip(&eval.axiom_degrees)
                .map(|(a, &d)| (a.name.clone(), d))
                .collect(),
            total: eval.total,
            violations,
        })
    }
}

/// `λ · (1 − total)` and its gradient w.r.t. the batch.
pub fn semantic_loss(
    kb: &KnowledgeBase,
    batch: &[f64],
    length: usize,
    lambda: f64,
    quantifier: Quantifier,
) -> Result<(f64, Vec<f64>)> {
    if !(lambda >= 0.0) {
        return Err(KbError::NegativeWeight(lambda));
    }
    if lambda == 0.0 {
        kb.check_batch(batch, length)?;
        return Ok((0.0, vec![0.0; batch.len()]));
    }
    let (eval, grad) = kb.evaluate_with_grad(batch, length, quantifier)?;
    Ok((lambda * (1.0 - eval.total), grad.into_iter().map(|g| -lambda * g).collect()))
}
