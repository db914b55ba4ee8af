use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Result, RffError};
use crate::rng::rng_for;

/// Observes the primitive work done by an inference call.
pub trait InferenceProbe {
    /// A `rows × cols` matrix-vector product.
    fn matvec(&mut self, rows: usize, cols: usize);
    /// A dot product of two `len`-vectors.
    fn dot(&mut self, len: usize);
    /// `n` elementwise trig evaluations.
    fn trig(&mut self, n: usize);
    fn sigmoid(&mut self);
}

/// Probe that records nothing; compiles away.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoProbe;

impl InferenceProbe for NoProbe {
    #[inline(always)]
    fn matvec(&mut self, _: usize, _: usize) {}
    #[inline(always)]
    fn dot(&mut self, _: usize) {}
    #[inline(always)]
    fn trig(&mut self, _: usize) {}
    #[inline(always)]
    fn sigmoid(&mut self) {}
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators let the loop vectorize
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Random Fourier feature map
/// `φ(x) = [cos(w₁ᵀx+b₁), sin(w₁ᵀx+b₁), …, cos(w_Dᵀx+b_D), sin(w_Dᵀx+b_D)]`
/// with `wᵢ ~ N(0, σ⁻²I)` and `bᵢ ~ U[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RffProjection {
    input_dim: usize,
    pairs: usize,
    sigma: f64,
    /// `pairs × input_dim`, row-major.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl RffProjection {
    pub fn new(input_dim: usize, pairs: usize, sigma: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || pairs == 0 {
            return Err(RffError::Dimension("input dimension and feature count must be positive".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(RffError::Bandwidth(sigma));
        }
        let mut rng = rng_for(&[seed, 0x7266_66]);
        let normal = Normal::new(0.0, 1.0 / sigma).map_err(|_| RffError::Bandwidth(sigma))?;
        let w = (0..pairs * input_dim).map(|_| normal.sample(&mut rng)).collect();
        let b = Self::sample_phases(pairs, &mut rng);
        Ok(Self {
            input_dim,
            pairs,
            sigma,
            w,
            b,
        })
    }

    /// Builds a projection from explicit frequencies and phases.
    pub fn from_parts(input_dim: usize, pairs: usize, sigma: f64, w: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if input_dim == 0 || pairs == 0 || w.len() != pairs * input_dim || b.len() != pairs {
            return Err(RffError::Dimension(format!(
                "W has {} values and b {} for d = {input_dim}, D = {pairs}",
                w.len(),
                b.len()
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(RffError::Bandwidth(sigma));
        }
        Ok(Self {
            input_dim,
            pairs,
            sigma,
            w,
            b,
        })
    }

    fn sample_phases(pairs: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..pairs)
            .map(|_| {
                let v = rng.random_range(0.0..2.0 * PI);
                // guard the open upper end against rounding
                if v >= 2.0 * PI {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    }

    /// Same frequencies, freshly drawn phases.
    pub fn with_resampled_phases(&self, seed: u64) -> Self {
        let mut rng = rng_for(&[seed, 0x7068_6173_65]);
        Self {
            b: Self::sample_phases(self.pairs, &mut rng),
            ..self.clone()
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Frequency count `D`; the feature vector has `2D` entries.
    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.pairs
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.w
    }

    pub fn phases(&self) -> &[f64] {
        &self.b
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(RffError::Dimension(format!(
                "input has {} values, projection expects {}",
                x.len(),
                self.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RffError::NonFinite);
        }
        Ok(())
    }

    /// Writes `φ(x)` into `out` (length `2D`).
    pub fn features_into(&self, x: &[f64], out: &mut [f64], probe: &mut impl InferenceProbe) -> Result<()> {
        self.check(x)?;
        debug_assert_eq!(out.len(), 2 * self.pairs);
        probe.matvec(self.pairs, self.input_dim);
        for ((row, b), pair) in self.w.chunks_exact(self.input_dim).zip(&self.b).zip(out.chunks_exact_mut(2)) {
            let (s, c) = (dot(row, x) + b).sin_cos();
            pair[0] = c;
            pair[1] = s;
        }
        probe.trig(2 * self.pairs);
        Ok(())
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; 2 * self.pairs];
        self.features_into(x, &mut out, &mut NoProbe)?;
        Ok(out)
    }
}

/// `φ(x)ᵀφ(y)/D`, an estimate of the RBF kernel with bandwidth σ.
pub fn kernel_estimate(x: &[f64], y: &[f64], proj: &RffProjection) -> Result<f64> {
    let (fx, fy) = (proj.features(x)?, proj.features(y)?);
    Ok(dot(&fx, &fy) / proj.pairs() as f64)
}

/// `exp(−‖x−y‖²/(2σ²))`.
pub fn rbf_kernel(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Median pairwise Euclidean distance over at most `max_samples` rows
/// drawn without replacement. `None` for fewer than two rows or an
/// all-zero median.
pub fn median_heuristic(rows: &[&[f64]], max_samples: usize, seed: u64) -> Option<f64> {
    if rows.len() < 2 {
        return None;
    }
    let picked: Vec<&[f64]> = if rows.len() > max_samples {
        let mut rng = rng_for(&[seed, 0x6d65_6469_616e]);
        let mut idx = sample(&mut rng, rows.len(), max_samples.max(2)).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| rows[i]).collect()
    } else {
        rows.to_vec()
    };
    let mut dists = Vec::with_capacity(picked.len() * (picked.len() - 1) / 2);
    for i in 0..picked.len() {
        for j in i + 1..picked.len() {
            let d2: f64 = picked[i].iter().zip(picked[j]).map(|(a, b)| (a - b).powi(2)).sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let n = dists.len();
    let median = if n % 2 == 1 {
        dists[n / 2]
    } else {
        0.5 * (dists[n / 2 - 1] + dists[n / 2])
    };
    (median > 0.0).then_some(median)
}
