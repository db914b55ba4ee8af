use nalgebra::{DMatrix, DVector};

use super::projection::{dot, InferenceProbe, NoProbe, RffProjection};
use super::{Result, RffError};
use crate::metrics::auroc;
use crate::tensor::{gemm, MatRef};

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// L2 penalty on the weights (the bias is not penalized).
    pub ridge: f64,
    /// Maximum Newton iterations.
    pub max_iter: usize,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-4,
            max_iter: 100,
            tol: 1e-10,
        }
    }
}

/// Per-channel input scaling carried with a deployed classifier so raw
/// sensor rows can be scored directly.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNormalization {
    pub channels: usize,
    pub length: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Logistic head on random Fourier features:
/// `p = σ(wᵀφ(x) + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledClassifier {
    pub projection: RffProjection,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub normalization: Option<InputNormalization>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillReport {
    /// Regularized objective after each accepted Newton step, starting
    /// with the initial point.
    pub loss_trace: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eᶻ)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

struct Problem<'a> {
    /// `n × m` feature matrix, row-major, `m = 2D`.
    phi: &'a [f64],
    y: &'a [f64],
    n: usize,
    m: usize,
    ridge: f64,
}

impl Problem<'_> {
    fn logits(&self, w: &[f64], b: f64) -> Vec<f64> {
        self.phi.chunks_exact(self.m).map(|row| dot(row, w) + b).collect()
    }

    fn loss(&self, w: &[f64], b: f64) -> f64 {
        let ce: f64 = self
            .logits(w, b)
            .iter()
            .zip(self.y)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum::<f64>()
            / self.n as f64;
        ce + self.ridge * dot(w, w)
    }

    /// Gradient (length `m + 1`, bias last) and probabilities.
    fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, Vec<f64>) {
        let p: Vec<f64> = self.logits(w, b).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = p.iter().zip(self.y).map(|(p, y)| (p - y) / self.n as f64).collect();
        let mut g = vec![0.0; self.m + 1];
        gemm(
            1,
            self.n,
            self.m,
            MatRef::row_major(&r, self.n),
            MatRef::row_major(self.phi, self.m),
            &mut g[..self.m],
            false,
        );
        for (gi, wi) in g.iter_mut().zip(w) {
            *gi += 2.0 * self.ridge * wi;
        }
        g[self.m] = r.iter().sum();
        (g, p)
    }

    /// Hessian of the objective over `[w; b]`.
    fn hessian(&self, p: &[f64]) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let s: Vec<f64> = p.iter().map(|p| p * (1.0 - p) / n as f64).collect();
        let mut weighted = self.phi.to_vec();
        for (row, si) in weighted.chunks_exact_mut(m).zip(&s) {
            for v in row {
                *v *= si;
            }
        }
        let mut h_ww = vec![0.0; m * m];
        gemm(
            m,
            n,
            m,
            MatRef::transposed(self.phi, m),
            MatRef::row_major(&weighted, m),
            &mut h_ww,
            false,
        );
        let mut h = DMatrix::zeros(m + 1, m + 1);
        for i in 0..m {
            for j in 0..m {
                h[(i, j)] = h_ww[i * m + j];
            }
            h[(i, i)] += 2.0 * self.ridge;
        }
        for j in 0..m {
            let v: f64 = weighted.chunks_exact(m).map(|row| row[j]).sum();
            h[(m, j)] = v;
            h[(j, m)] = v;
        }
        h[(m, m)] = s.iter().sum();
        h
    }
}

fn newton_direction(h: DMatrix<f64>, g: &[f64]) -> Vec<f64> {
    let rhs = DVector::from_column_slice(g);
    let scale = h.diagonal().amax().max(1e-300);
    let mut jitter = 0.0;
    loop {
        let mut hj = h.clone();
        for i in 0..hj.nrows() {
            hj[(i, i)] += jitter;
        }
        if let Some(ch) = hj.cholesky() {
            return ch.solve(&rhs).iter().map(|v| -v).collect();
        }
        jitter = if jitter == 0.0 { scale * 1e-12 } else { jitter * 10.0 };
    }
}

/// Fits the logistic head by damped Newton (Armijo backtracking) on
/// mean cross-entropy plus `ridge·‖w‖²`. `rows` are model inputs of
/// length `d`; `labels` are the teacher's hard labels.
pub fn distill(
    rows: &[&[f64]],
    labels: &[bool],
    projection: RffProjection,
    config: &DistillConfig,
) -> Result<(DistilledClassifier, DistillReport)> {
    if rows.len() != labels.len() {
        return Err(RffError::Dimension(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(RffError::SingleClass {
            positives,
            total: labels.len(),
        });
    }
    if !(config.ridge >= 0.0) {
        return Err(RffError::Config(format!("ridge must be >= 0, got {}", config.ridge)));
    }
    let m = projection.feature_dim();
    let mut phi = vec![0.0; rows.len() * m];
    for (x, out) in rows.iter().zip(phi.chunks_exact_mut(m)) {
        projection.features_into(x, out, &mut NoProbe)?;
    }
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let problem = Problem {
        phi: &phi,
        y: &y,
        n: rows.len(),
        m,
        ridge: config.ridge,
    };

    let mut w = vec![0.0; m];
    let prior = positives as f64 / labels.len() as f64;
    let mut b = (prior / (1.0 - prior)).ln();
    let mut loss = problem.loss(&w, b);
    let mut trace = vec![loss];
    let mut iterations = 0;
    let (mut g, mut p) = problem.gradient(&w, b);
    while iterations < config.max_iter && dot(&g, &g).sqrt() >= config.tol {
        let dir = newton_direction(problem.hessian(&p), &g);
        let slope = dot(&g, &dir);
        if slope >= 0.0 {
            break;
        }
        let mut step = 1.0;
        let accepted = loop {
            let wn: Vec<f64> = w.iter().zip(&dir).map(|(wi, d)| wi + step * d).collect();
            let bn = b + step * dir[m];
            let ln = problem.loss(&wn, bn);
            if ln <= loss + 1e-4 * step * slope {
                break Some((wn, bn, ln));
            }
            step *= 0.5;
            if step < 1e-12 {
                break None;
            }
        };
        let Some((wn, bn, ln)) = accepted else { break };
        w = wn;
        b = bn;
        loss = ln;
        trace.push(loss);
        iterations += 1;
        (g, p) = problem.gradient(&w, b);
    }
    if !loss.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(RffError::NonFinite);
    }
    let report = DistillReport {
        loss_trace: trace,
        gradient_norm: dot(&g, &g).sqrt(),
        iterations,
    };
    Ok((
        DistilledClassifier {
            projection,
            weights: w,
            bias: b,
            normalization: None,
        },
        report,
    ))
}

impl DistilledClassifier {
    pub fn new(projection: RffProjection, weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.len() != projection.feature_dim() {
            return Err(RffError::Dimension(format!(
                "{} weights for {} features",
                weights.len(),
                projection.feature_dim()
            )));
        }
        Ok(Self {
            projection,
            weights,
            bias,
            normalization: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.projection.input_dim()
    }

    /// `σ(wᵀφ(x) + b)`: one `D × d` product, trig, one `2D` dot product
    /// and a sigmoid, each reported to `probe`.
    pub fn predict_prob_probed(&self, x: &[f64], scratch: &mut Vec<f64>, probe: &mut impl InferenceProbe) -> Result<f64> {
        scratch.resize(self.projection.feature_dim(), 0.0);
        self.projection.features_into(x, scratch, probe)?;
        probe.dot(scratch.len());
        let z = dot(scratch, &self.weights) + self.bias;
        probe.sigmoid();
        Ok(sigmoid(z))
    }

    pub fn predict_prob(&self, x: &[f64]) -> Result<f64> {
        self.predict_prob_probed(x, &mut Vec::new(), &mut NoProbe)
    }

    /// Probabilities for normalized `rows`.
    pub fn predict_many(&self, rows: &[&[f64]]) -> Result<Vec<f64>> {
        let mut scratch = Vec::new();
        rows.iter()
            .map(|x| self.predict_prob_probed(x, &mut scratch, &mut NoProbe))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    /// Fraction of windows where `p > 0.5` matches the teacher label.
    pub agreement: f64,
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
    /// Student AUROC against ground truth, absent when undefined.
    pub auroc: Option<f64>,
}

/// Compares student decisions with teacher labels and, when given,
/// ground truth (evaluation only).
pub fn fidelity(
    classifier: &DistilledClassifier,
    rows: &[&[f64]],
    teacher: &[bool],
    truth: Option<&[bool]>,
) -> Result<FidelityReport> {
    if rows.is_empty() {
        return Err(RffError::Empty);
    }
    if teacher.len() != rows.len() || truth.is_some_and(|t| t.len() != rows.len()) {
        return Err(RffError::Dimension("label count does not match row count".into()));
    }
    let probs = classifier.predict_many(rows)?;
    fidelity_from_probs(&probs, teacher, truth)
}

pub fn fidelity_from_probs(probs: &[f64], teacher: &[bool], truth: Option<&[bool]>) -> Result<FidelityReport> {
    if probs.is_empty() {
        return Err(RffError::Empty);
    }
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    for (&p, &t) in probs.iter().zip(teacher) {
        match (p > 0.5, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    Ok(FidelityReport {
        agreement: (tp + tn) as f64 / probs.len() as f64,
        true_positive: tp,
        false_positive: fp,
        true_negative: tn,
        false_negative: fneg,
        auroc: truth.and_then(|t| auroc(probs, t)),
    })
}
