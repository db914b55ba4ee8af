use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::net::{DenoiserNet, EpsilonPredictor};
use super::schedule::NoiseSchedule;
use super::{DdpmError, Result};
use crate::nesy::{semantic_loss, KnowledgeBase, Quantifier};
use crate::rng::rng_for;
use crate::signals::{NormalizationStats, Window};
use crate::tensor::{Adam, AdamConfig, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// Knowledge-base penalty `λ·(1 − sat(KB, x̂0))`, evaluated in raw units.
#[derive(Debug, Clone, Copy)]
pub struct SemanticTerm<'a> {
    pub kb: &'a KnowledgeBase,
    /// Statistics that normalized the training windows.
    pub norm: &'a NormalizationStats,
    pub lambda: f64,
    pub quantifier: Quantifier,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean total batch loss.
    pub loss: f64,
    pub mse: f64,
    pub semantic: f64,
}

/// One noised minibatch: `rows × dim` values plus per-row levels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedBatch {
    pub x0: Vec<f64>,
    pub x_t: Vec<f64>,
    pub eps: Vec<f64>,
    pub steps: Vec<usize>,
}

impl NoisedBatch {
    pub fn sample(x0: Vec<f64>, dim: usize, schedule: &NoiseSchedule, rng: &mut impl Rng) -> Self {
        let rows = x0.len() / dim;
        let mut steps = Vec::with_capacity(rows);
        let mut eps = Vec::with_capacity(x0.len());
        let mut x_t = Vec::with_capacity(x0.len());
        for row in x0.chunks_exact(dim) {
            let t = rng.random_range(1..=schedule.steps());
            let ab = schedule.alpha_bar(t);
            let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
            for &x in row {
                let e: f64 = StandardNormal.sample(rng);
                eps.push(e);
                x_t.push(s * x + n * e);
            }
            steps.push(t);
        }
        Self { x0, x_t, eps, steps }
    }

    pub fn rows(&self) -> usize {
        self.steps.len()
    }
}

/// Builds the training loss on `tape`. Returns `(total, mse, semantic)`
/// where `semantic` is 0 when the term is absent.
pub fn build_loss(
    net: &DenoiserNet,
    tape: &mut Tape,
    vars: &super::net::NetVars,
    batch: &NoisedBatch,
    schedule: &NoiseSchedule,
    semantic: Option<&SemanticTerm<'_>>,
) -> Result<(Var, f64, f64)> {
    let rows = batch.rows();
    let d = net.dim();
    let width = d + net.config().time_dim;
    let input = tape.constant(Tensor::matrix(rows, width, net.input_rows(&batch.x_t, &batch.steps))?);
    let eps_hat = net.forward_tape(tape, vars, input)?;
    let eps = tape.constant(Tensor::matrix(rows, d, batch.eps.clone())?);
    let diff = tape.sub(eps_hat, eps)?;
    let sq = tape.square(diff)?;
    let mse = tape.mean(sq)?;
    let mse_value = tape.value(mse).data()[0];
    let Some(term) = semantic.filter(|s| s.lambda > 0.0) else {
        return Ok((mse, mse_value, 0.0));
    };

    // x̂0 = x_t/√ᾱ − (√(1−ᾱ)/√ᾱ)·ε̂, row by row
    let mut scaled_xt = Vec::with_capacity(rows * d);
    let mut coef = Vec::with_capacity(rows * d);
    for (row, &t) in batch.x_t.chunks_exact(d).zip(&batch.steps) {
        let ab = schedule.alpha_bar(t);
        let (inv, c) = (1.0 / ab.sqrt(), ((1.0 - ab) / ab).sqrt());
        scaled_xt.extend(row.iter().map(|x| x * inv));
        coef.extend(std::iter::repeat_n(c, d));
    }
    let a = tape.constant(Tensor::matrix(rows, d, scaled_xt)?);
    let c = tape.constant(Tensor::matrix(rows, d, coef)?);
    let b = tape.mul(c, eps_hat)?;
    let x0_hat = tape.sub(a, b)?;

    let length = net.length();
    let (mean, std) = (&term.norm.mean, &term.norm.std);
    let raw: Vec<f64> = tape
        .value(x0_hat)
        .data()
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let ch = (i % d) / length;
            z * std[ch] + mean[ch]
        })
        .collect();
    let (value, grad_raw) = semantic_loss(term.kb, &raw, length, term.lambda, term.quantifier)?;
    let jac: Vec<f64> = grad_raw
        .iter()
        .enumerate()
        .map(|(i, g)| g * std[(i % d) / length])
        .collect();
    let sem = tape.custom_scalar(x0_hat, value, Tensor::matrix(rows, d, jac)?)?;
    let total = tape.add(mse, sem)?;
    Ok((total, mse_value, value))
}

fn check_semantic(net: &DenoiserNet, semantic: Option<&SemanticTerm<'_>>) -> Result<()> {
    if let Some(s) = semantic {
        if !(s.lambda >= 0.0) {
            return Err(DdpmError::Kb(crate::nesy::KbError::NegativeWeight(s.lambda)));
        }
        if s.kb.schema().len() != net.channels() || s.norm.channels() != net.channels() {
            return Err(DdpmError::Shape(format!(
                "knowledge base covers {} channels, normalization {}, network {}",
                s.kb.schema().len(),
                s.norm.channels(),
                net.channels()
            )));
        }
    }
    Ok(())
}

/// Minibatch Adam on the ε-prediction loss (plus the semantic term when
/// `λ > 0`). `windows` must already be normalized. Returns one entry per
/// epoch; with `λ = 0` the term is never built, so the trace matches a run
/// without a knowledge base bit for bit.
pub fn train(
    net: &mut DenoiserNet,
    windows: &[Window],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    semantic: Option<SemanticTerm<'_>>,
) -> Result<Vec<EpochStats>> {
    if windows.is_empty() {
        return Err(DdpmError::EmptyCorpus);
    }
    let d = net.dim();
    if let Some(w) = windows.iter().find(|w| w.dim() != d || w.channels() != net.channels()) {
        return Err(DdpmError::Shape(format!(
            "window at {} has {}×{} samples, network expects {}×{}",
            w.origin(),
            w.channels(),
            w.length(),
            net.channels(),
            net.length()
        )));
    }
    if config.batch_size == 0 {
        return Err(DdpmError::Shape("batch size must be positive".into()));
    }
    check_semantic(net, semantic.as_ref())?;

    let mut adam = Adam::new(config.adam, net.params());
    let mut rng = rng_for(&[config.seed, 0x7472_6169_6e]);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut mse_sum, mut sem_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let x0: Vec<f64> = chunk.iter().flat_map(|&i| windows[i].samples().iter().copied()).collect();
            let batch = NoisedBatch::sample(x0, d, schedule, &mut rng);
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape);
            let (total, mse, sem) = build_loss(net, &mut tape, &vars, &batch, schedule, semantic.as_ref())
                .map_err(|e| non_finite(e, epoch))?;
            let loss = tape.value(total).data()[0];
            if !loss.is_finite() {
                return Err(DdpmError::NonFiniteLoss { epoch });
            }
            let grads = tape.backward(total).map_err(|e| non_finite(e.into(), epoch))?;
            let g: Vec<Tensor> = vars
                .layers
                .iter()
                .flat_map(|&(w, b)| [w, b])
                .zip(net.params().tensors())
                .map(|(v, like)| grads.get_or_zeros(v, like))
                .collect();
            adam.step(net.params_mut(), &g).map_err(|e| non_finite(e.into(), epoch))?;
            loss_sum += loss;
            mse_sum += mse;
            sem_sum += sem;
            batches += 1;
        }
        let n = batches as f64;
        trace.push(EpochStats {
            epoch,
            loss: loss_sum / n,
            mse: mse_sum / n,
            semantic: sem_sum / n,
        });
    }
    Ok(trace)
}

fn non_finite(e: DdpmError, epoch: usize) -> DdpmError {
    match e {
        DdpmError::Tensor(TensorError::NonFinite { .. }) => DdpmError::NonFiniteLoss { epoch },
        other => other,
    }
}

/// Mean ε-prediction MSE of `net` on freshly noised copies of `windows`.
pub fn evaluate_mse(net: &impl EpsilonPredictor, windows: &[Window], schedule: &NoiseSchedule, seed: u64) -> Result<f64> {
    if windows.is_empty() {
        return Err(DdpmError::EmptyCorpus);
    }
    let d = net.dim();
    let mut rng = rng_for(&[seed, 0x6576_616c]);
    let x0: Vec<f64> = windows.iter().flat_map(|w| w.samples().iter().copied()).collect();
    let batch = NoisedBatch::sample(x0, d, schedule, &mut rng);
    let eps_hat = net.predict(&batch.x_t, &batch.steps);
    Ok(eps_hat.iter().zip(&batch.eps).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / eps_hat.len() as f64)
}
