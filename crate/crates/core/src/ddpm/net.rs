use rand::Rng;

use super::{DdpmError, Result};
use crate::rng::rng_for;
use crate::tensor::{gemm, MatRef, ParamStore, Tape, Tensor, Var};

/// Anything that predicts the injected noise for a batch of noisy windows.
pub trait EpsilonPredictor {
    /// Flattened window dimension `C·L`.
    fn dim(&self) -> usize;

    /// `x_t` holds `steps.len()` rows of `dim()` values; returns ε̂ in the
    /// same layout. Row `i` was noised to level `steps[i]`.
    fn predict(&self, x_t: &[f64], steps: &[usize]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub layers: usize,
    pub time_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            layers: 3,
            time_dim: 32,
        }
    }
}

/// Half sine, half cosine at geometrically spaced frequencies.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (t as f64 * freq).sin_cos();
        out[i] = s;
        out[half + i] = c;
    }
    out
}

/// MLP ε-predictor: `[x_t ‖ emb(t)] → tanh^layers → C·L`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    channels: usize,
    length: usize,
    config: DenoiserConfig,
    params: ParamStore,
}

/// Parameter tensors as tape variables, in layer order `(W, b)`.
pub struct NetVars {
    pub layers: Vec<(Var, Var)>,
}

impl DenoiserNet {
    /// Glorot-uniform hidden layers; the output layer starts at zero so the
    /// untrained net predicts ε̂ = 0.
    pub fn new(channels: usize, length: usize, config: DenoiserConfig, seed: u64) -> Result<Self> {
        if channels == 0 || length == 0 || config.hidden == 0 || config.layers == 0 {
            return Err(DdpmError::Shape("denoiser dimensions must be positive".into()));
        }
        if !config.time_dim.is_multiple_of(2) {
            return Err(DdpmError::Shape(format!("time embedding dim {} must be even", config.time_dim)));
        }
        let mut rng = rng_for(&[seed, 0x6e_6574]);
        let d = channels * length;
        let mut params = ParamStore::new();
        let mut fan_in = d + config.time_dim;
        for l in 0..config.layers {
            let limit = (6.0 / (fan_in + config.hidden) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * config.hidden)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            params.push(format!("l{l}.w"), Tensor::matrix(fan_in, config.hidden, w)?);
            params.push(format!("l{l}.b"), Tensor::zeros(&[config.hidden]));
            fan_in = config.hidden;
        }
        params.push("out.w", Tensor::zeros(&[config.hidden, d]));
        params.push("out.b", Tensor::zeros(&[d]));
        Ok(Self {
            channels,
            length,
            config,
            params,
        })
    }

    /// Wraps loaded parameters, checking every expected shape.
    pub fn from_params(channels: usize, length: usize, config: DenoiserConfig, params: ParamStore) -> Result<Self> {
        let template = Self::new(channels, length, config, 0)?;
        for (name, t) in template.params.entries() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(DdpmError::Shape(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(DdpmError::Shape(format!("missing parameter {name}"))),
            }
        }
        let ordered = template
            .params
            .entries()
            .iter()
            .map(|(n, _)| (n.clone(), params.get(n).cloned().expect("checked above")))
            .collect();
        Ok(Self {
            params: ParamStore::from_entries(ordered),
            ..template
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn config(&self) -> DenoiserConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Multiply-adds of one single-row forward pass.
    pub fn macs_per_row(&self) -> usize {
        let DenoiserConfig { hidden, layers, time_dim } = self.config;
        let d = self.channels * self.length;
        (d + time_dim) * hidden + (layers - 1) * hidden * hidden + hidden * d
    }

    /// Network input rows `[x_t ‖ emb(t)]`.
    pub fn input_rows(&self, x_t: &[f64], steps: &[usize]) -> Vec<f64> {
        let d = self.dim();
        let width = d + self.config.time_dim;
        let mut out = Vec::with_capacity(steps.len() * width);
        for (row, &t) in x_t.chunks_exact(d).zip(steps) {
            out.extend_from_slice(row);
            out.extend(time_embedding(t, self.config.time_dim));
        }
        out
    }

    /// Registers all parameters on `tape` as trainable leaves.
    pub fn bind(&self, tape: &mut Tape) -> NetVars {
        let e = self.params.entries();
        NetVars {
            layers: e
                .chunks_exact(2)
                .map(|p| (tape.param(p[0].1.clone()), tape.param(p[1].1.clone())))
                .collect(),
        }
    }

    /// Recorded forward pass over `rows` input rows (see [`input_rows`](Self::input_rows)).
    pub fn forward_tape(&self, tape: &mut Tape, vars: &NetVars, input: Var) -> Result<Var> {
        let rows = tape.value(input).shape()[0];
        let mut h = input;
        let last = vars.layers.len() - 1;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            let width = tape.value(z).shape()[1];
            let bb = tape.broadcast(b, &[rows, width])?;
            let z = tape.add(z, bb)?;
            h = if i == last { z } else { tape.tanh(z)? };
        }
        Ok(h)
    }
}

impl EpsilonPredictor for DenoiserNet {
    fn dim(&self) -> usize {
        self.channels * self.length
    }

    fn predict(&self, x_t: &[f64], steps: &[usize]) -> Vec<f64> {
        let rows = steps.len();
        let mut h = self.input_rows(x_t, steps);
        let mut width = self.dim() + self.config.time_dim;
        let e = self.params.entries();
        let last = e.len() / 2 - 1;
        for (i, p) in e.chunks_exact(2).enumerate() {
            let (w, b) = (&p[0].1, &p[1].1);
            let out_w = w.shape()[1];
            let mut z = vec![0.0; rows * out_w];
            gemm(
                rows,
                width,
                out_w,
                MatRef::row_major(&h, width),
                MatRef::row_major(w.data(), out_w),
                &mut z,
                false,
            );
            for row in z.chunks_exact_mut(out_w) {
                for (v, bias) in row.iter_mut().zip(b.data()) {
                    *v += bias;
                    if i != last {
                        *v = v.tanh();
                    }
                }
            }
            h = z;
            width = out_w;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DenoiserConfig {
        DenoiserConfig {
            hidden: 8,
            layers: 3,
            time_dim: 4,
        }
    }

    #[test]
    fn shapes_and_zero_output() {
        let net = DenoiserNet::new(2, 5, small(), 1).unwrap();
        let x = vec![0.3; 3 * 10];
        let out = net.predict(&x, &[1, 2, 3]);
        assert_eq!(out.len(), 30);
        assert!(out.iter().all(|&v| v == 0.0));
        assert_eq!(net.macs_per_row(), 14 * 8 + 2 * 64 + 8 * 10);
        let default = DenoiserNet::new(6, 64, DenoiserConfig::default(), 0).unwrap();
        assert_eq!(default.macs_per_row(), 416 * 256 + 2 * 256 * 256 + 256 * 384);
    }

    #[test]
    fn tape_and_fast_paths_agree() {
        let mut net = DenoiserNet::new(2, 5, small(), 3).unwrap();
        // make the output layer non-trivial
        for (i, v) in net.params_mut().tensors_mut().last().unwrap().data_mut().iter_mut().enumerate() {
            *v = 0.1 * i as f64;
        }
        let w = net.params_mut().tensors_mut().nth(6).unwrap();
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            *v = ((i * 7 % 13) as f64 - 6.0) * 0.05;
        }
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let steps = [4, 17];
        let fast = net.predict(&x, &steps);
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let input = tape.constant(Tensor::matrix(2, 14, net.input_rows(&x, &steps)).unwrap());
        let out = net.forward_tape(&mut tape, &vars, input).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(&fast) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_layout() {
        let e = time_embedding(3, 8);
        assert_eq!(e[0], 3f64.sin());
        assert_eq!(e[4], 3f64.cos());
        assert!(e.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn reload_checks_shapes() {
        let net = DenoiserNet::new(2, 5, small(), 9).unwrap();
        let again = DenoiserNet::from_params(2, 5, small(), net.params().clone()).unwrap();
        assert_eq!(again, net);
        assert!(DenoiserNet::from_params(3, 5, small(), net.params().clone()).is_err());
        assert!(DenoiserNet::from_params(2, 5, small(), ParamStore::new()).is_err());
    }
}
