use rand_distr::{Distribution, StandardNormal};

use super::net::EpsilonPredictor;
use super::schedule::NoiseSchedule;
use super::{DdpmError, Result};
use crate::metrics::percentile_nearest_rank;
use crate::rng::rng_for;
use crate::signals::Window;

/// How `x̂0` is recovered from a noised window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ReconstructionMode {
    /// One denoiser call: `x̂0 = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t`.
    #[default]
    SingleShot,
    /// Ancestral sampling from `t` down to 0 (`t` denoiser calls).
    ReverseChain,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Aggregation {
    #[default]
    MeanZ,
    MaxZ,
}

/// Per-level reconstruction MSEs of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionProfile {
    pub origin: usize,
    pub levels: Vec<usize>,
    pub errors: Vec<f64>,
}

/// Fixed settings for reconstruction scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileConfig {
    pub levels: Vec<usize>,
    pub seed: u64,
    pub mode: ReconstructionMode,
    /// Independent ε draws averaged per level.
    pub draws: usize,
}

/// Default ε draws per level; single draws leave too much noise in the
/// per-window error for a stable ranking.
pub const DEFAULT_DRAWS: usize = 16;

impl ProfileConfig {
    pub fn new(levels: Vec<usize>, seed: u64, schedule: &NoiseSchedule) -> Result<Self> {
        if levels.len() < 2 {
            return Err(DdpmError::Levels(format!("need at least 2 levels, got {}", levels.len())));
        }
        for (i, &t) in levels.iter().enumerate() {
            schedule.check_step(t)?;
            if levels[..i].contains(&t) {
                return Err(DdpmError::Levels(format!("level {t} appears twice")));
            }
        }
        Ok(Self {
            levels,
            seed,
            mode: ReconstructionMode::SingleShot,
            draws: DEFAULT_DRAWS,
        })
    }
}

/// Reconstruction noise for a window origin, level and draw index.
pub fn reconstruction_noise(seed: u64, origin: usize, t: usize, draw: usize, dim: usize) -> Vec<f64> {
    let mut rng = rng_for(&[seed, origin as u64, t as u64, draw as u64]);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Single-shot estimates for rows of `x_t` at their levels.
pub fn estimate_x0(net: &impl EpsilonPredictor, x_t: &[f64], steps: &[usize], schedule: &NoiseSchedule) -> Vec<f64> {
    let d = net.dim();
    let eps_hat = net.predict(x_t, steps);
    let mut out = Vec::with_capacity(x_t.len());
    for ((xr, er), &t) in x_t.chunks_exact(d).zip(eps_hat.chunks_exact(d)).zip(steps) {
        let ab = schedule.alpha_bar(t);
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        out.extend(xr.iter().zip(er).map(|(x, e)| (x - n * e) / s));
    }
    out
}

fn reverse_chain(
    net: &impl EpsilonPredictor,
    mut x: Vec<f64>,
    t: usize,
    origins: &[usize],
    seed: u64,
    draw: usize,
    schedule: &NoiseSchedule,
) -> Vec<f64> {
    let d = net.dim();
    let rows = origins.len();
    for s in (1..=t).rev() {
        let eps_hat = net.predict(&x, &vec![s; rows]);
        let (alpha, beta, ab) = (schedule.alpha(s), schedule.beta(s), schedule.alpha_bar(s));
        let coef = beta / (1.0 - ab).sqrt();
        for (r, (xr, er)) in x.chunks_exact_mut(d).zip(eps_hat.chunks_exact(d)).enumerate() {
            for (v, e) in xr.iter_mut().zip(er) {
                *v = (*v - coef * e) / alpha.sqrt();
            }
            if s > 1 {
                let mut rng = rng_for(&[seed, origins[r] as u64, t as u64, draw as u64, s as u64]);
                for v in xr.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += beta.sqrt() * z;
                }
            }
        }
    }
    x
}

/// Noises `window` to level `t` with the seeded ε of `draw` and
/// reconstructs it.
pub fn reconstruct(
    net: &impl EpsilonPredictor,
    window: &Window,
    t: usize,
    schedule: &NoiseSchedule,
    seed: u64,
    draw: usize,
    mode: ReconstructionMode,
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    check_dim(net, window)?;
    let eps = reconstruction_noise(seed, window.origin(), t, draw, window.dim());
    let x_t = super::forward_noise(window.samples(), t, &eps, schedule)?;
    Ok(match mode {
        ReconstructionMode::SingleShot => estimate_x0(net, &x_t, &[t], schedule),
        ReconstructionMode::ReverseChain => reverse_chain(net, x_t, t, &[window.origin()], seed, draw, schedule),
    })
}

fn check_dim(net: &impl EpsilonPredictor, w: &Window) -> Result<()> {
    if w.dim() == net.dim() {
        Ok(())
    } else {
        Err(DdpmError::Shape(format!(
            "window at {} has {} values, network expects {}",
            w.origin(),
            w.dim(),
            net.dim()
        )))
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Profiles of many windows: per level, the reconstruction MSE averaged
/// over `config.draws` noise draws. Single-shot mode pushes every
/// (window, level) pair of a chunk through the network as one batch.
pub fn reconstruction_profiles(
    net: &impl EpsilonPredictor,
    windows: &[Window],
    schedule: &NoiseSchedule,
    config: &ProfileConfig,
) -> Result<Vec<ReconstructionProfile>> {
    const CHUNK: usize = 64;
    if config.draws == 0 {
        return Err(DdpmError::Levels("at least one noise draw is required".into()));
    }
    let d = net.dim();
    let k = config.levels.len();
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(CHUNK) {
        for w in chunk {
            check_dim(net, w)?;
        }
        let mut errors = vec![0.0; chunk.len() * k];
        let mut x_t = Vec::with_capacity(chunk.len() * k * d);
        let mut steps = Vec::with_capacity(chunk.len() * k);
        for draw in 0..config.draws {
            x_t.clear();
            steps.clear();
            for w in chunk {
                for &t in &config.levels {
                    let eps = reconstruction_noise(config.seed, w.origin(), t, draw, d);
                    x_t.extend(super::forward_noise(w.samples(), t, &eps, schedule)?);
                    steps.push(t);
                }
            }
            let x0_hat = match config.mode {
                ReconstructionMode::SingleShot => estimate_x0(net, &x_t, &steps, schedule),
                ReconstructionMode::ReverseChain => {
                    let mut all = Vec::with_capacity(x_t.len());
                    for (i, row) in x_t.chunks_exact(d).enumerate() {
                        let origin = chunk[i / k].origin();
                        all.extend(reverse_chain(net, row.to_vec(), steps[i], &[origin], config.seed, draw, schedule));
                    }
                    all
                }
            };
            for (i, row) in x0_hat.chunks_exact(d).enumerate() {
                errors[i] += mse(row, chunk[i / k].samples());
            }
        }
        let scale = 1.0 / config.draws as f64;
        for (w, e) in chunk.iter().zip(errors.chunks_exact(k)) {
            out.push(ReconstructionProfile {
                origin: w.origin(),
                levels: config.levels.clone(),
                errors: e.iter().map(|v| v * scale).collect(),
            });
        }
    }
    Ok(out)
}

pub fn reconstruction_profile(
    net: &impl EpsilonPredictor,
    window: &Window,
    schedule: &NoiseSchedule,
    config: &ProfileConfig,
) -> Result<ReconstructionProfile> {
    Ok(reconstruction_profiles(net, std::slice::from_ref(window), schedule, config)?.remove(0))
}

/// Per-level error mean and standard deviation over training profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileStats {
    pub levels: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ProfileStats {
    pub fn fit(profiles: &[ReconstructionProfile]) -> Result<Self> {
        let first = profiles.first().ok_or(DdpmError::EmptyCorpus)?;
        let k = first.levels.len();
        if let Some(p) = profiles.iter().find(|p| p.levels != first.levels) {
            return Err(DdpmError::Levels(format!(
                "profile at {} uses levels {:?}, expected {:?}",
                p.origin, p.levels, first.levels
            )));
        }
        let n = profiles.len() as f64;
        let mut mean = vec![0.0; k];
        for p in profiles {
            for (m, e) in mean.iter_mut().zip(&p.errors) {
                *m += e / n;
            }
        }
        let mut std = vec![0.0; k];
        for p in profiles {
            for ((s, e), m) in std.iter_mut().zip(&p.errors).zip(&mean) {
                *s += (e - m).powi(2) / n;
            }
        }
        // a degenerate level (e.g. an exact oracle) contributes raw offsets
        let std = std.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self {
            levels: first.levels.clone(),
            mean,
            std,
        })
    }

    pub fn z_scores(&self, profile: &ReconstructionProfile) -> Vec<f64> {
        profile
            .errors
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(e, (m, s))| (e - m) / s)
            .collect()
    }

    pub fn score(&self, profile: &ReconstructionProfile, aggregation: Aggregation) -> f64 {
        let z = self.z_scores(profile);
        match aggregation {
            Aggregation::MeanZ => z.iter().sum::<f64>() / z.len() as f64,
            Aggregation::MaxZ => z.into_iter().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub threshold: f64,
}

impl PseudoLabelSet {
    pub fn positive_fraction(&self) -> f64 {
        self.labels.iter().filter(|&&l| l).count() as f64 / self.labels.len() as f64
    }
}

/// Labels `score > threshold` where the threshold is the nearest-rank
/// `percentile` of `scores`.
pub fn pseudo_label(scores: &[f64], percentile: f64) -> Result<PseudoLabelSet> {
    if scores.is_empty() {
        return Err(DdpmError::EmptyCorpus);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(DdpmError::NonFiniteScore);
    }
    let threshold = percentile_nearest_rank(scores, percentile)
        .ok_or_else(|| DdpmError::Levels(format!("percentile {percentile} outside [0, 100]")))?;
    Ok(apply_threshold(scores, threshold))
}

/// Labels held-out scores against an existing threshold.
pub fn apply_threshold(scores: &[f64], threshold: f64) -> PseudoLabelSet {
    PseudoLabelSet {
        scores: scores.to_vec(),
        labels: scores.iter().map(|&s| s > threshold).collect(),
        threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddpm::forward_noise;
    use std::sync::Arc;

    /// Test double that knows the clean rows and returns the exact noise.
    struct Oracle {
        x0: Vec<f64>,
        schedule: NoiseSchedule,
    }

    impl EpsilonPredictor for Oracle {
        fn dim(&self) -> usize {
            self.x0.len()
        }

        fn predict(&self, x_t: &[f64], steps: &[usize]) -> Vec<f64> {
            let d = self.dim();
            let mut out = Vec::new();
            for (row, &t) in x_t.chunks_exact(d).zip(steps) {
                let ab = self.schedule.alpha_bar(t);
                out.extend(row.iter().zip(&self.x0).map(|(x, x0)| (x - ab.sqrt() * x0) / (1.0 - ab).sqrt()));
            }
            out
        }
    }

    fn window(samples: Vec<f64>, origin: usize) -> Window {
        let names: Arc<[String]> = vec!["a".to_string(), "b".to_string()].into();
        let l = samples.len() / 2;
        Window::new(names, l, samples, origin).unwrap()
    }

    #[test]
    fn oracle_reconstruction_is_exact() {
        let s = NoiseSchedule::default();
        let x0: Vec<f64> = (0..16).map(|i| (i as f64 * 0.9).cos() * 2.0).collect();
        let oracle = Oracle {
            x0: x0.clone(),
            schedule: s.clone(),
        };
        let w = window(x0.clone(), 3);
        for t in [1, 10, 50, 100] {
            let r = reconstruct(&oracle, &w, t, &s, 9, 0, ReconstructionMode::SingleShot).unwrap();
            assert!(r.iter().zip(&x0).all(|(a, b)| (a - b).abs() < 1e-10), "t={t}");
        }
        // the reverse chain is exact too when ε̂ is the true noise of x_s
        let r = reconstruct(&oracle, &w, 5, &s, 9, 0, ReconstructionMode::ReverseChain).unwrap();
        assert!(mse(&r, &x0) < 1.0);
        assert!(reconstruct(&oracle, &w, 0, &s, 9, 0, ReconstructionMode::SingleShot).is_err());
        assert!(reconstruct(&oracle, &w, 101, &s, 9, 0, ReconstructionMode::SingleShot).is_err());
    }

    /// Predicts zero noise: x̂0 = x_t/√ᾱ.
    struct Zero(usize);

    impl EpsilonPredictor for Zero {
        fn dim(&self) -> usize {
            self.0
        }

        fn predict(&self, x_t: &[f64], _: &[usize]) -> Vec<f64> {
            vec![0.0; x_t.len()]
        }
    }

    #[test]
    fn minimal_level_error_is_tiny() {
        let s = NoiseSchedule::default();
        let w = window((0..16).map(|i| i as f64 / 8.0).collect(), 0);
        let r = reconstruct(&Zero(16), &w, 1, &s, 2, 0, ReconstructionMode::SingleShot).unwrap();
        assert!(mse(&r, w.samples()) < 1e-3);
    }

    #[test]
    fn profiles_match_single_reconstructions() {
        let s = NoiseSchedule::default();
        let mut cfg = ProfileConfig::new(s.default_levels(), 5, &s).unwrap();
        cfg.draws = 3;
        let ws: Vec<Window> = (0..70)
            .map(|o| window((0..16).map(|i| ((i + o) as f64).sin()).collect(), o))
            .collect();
        let net = Zero(16);
        let all = reconstruction_profiles(&net, &ws, &s, &cfg).unwrap();
        assert_eq!(all.len(), 70);
        for (w, p) in ws.iter().zip(&all).step_by(13) {
            for (k, &t) in cfg.levels.iter().enumerate() {
                let mean = (0..3)
                    .map(|draw| {
                        let r = reconstruct(&net, w, t, &s, 5, draw, ReconstructionMode::SingleShot).unwrap();
                        mse(&r, w.samples())
                    })
                    .sum::<f64>()
                    / 3.0;
                assert!((mean - p.errors[k]).abs() <= 1e-12 * mean.max(1.0));
            }
            assert_eq!(&reconstruction_profile(&net, w, &s, &cfg).unwrap(), p);
        }
        // seeded noise: identical on rerun
        assert_eq!(all, reconstruction_profiles(&net, &ws, &s, &cfg).unwrap());
    }

    #[test]
    fn level_validation() {
        let s = NoiseSchedule::default();
        assert!(ProfileConfig::new(vec![10, 10, 20], 0, &s).is_err());
        assert!(ProfileConfig::new(vec![10], 0, &s).is_err());
        assert!(ProfileConfig::new(vec![0, 10], 0, &s).is_err());
        assert!(ProfileConfig::new(vec![10, 101], 0, &s).is_err());
        let mut cfg = ProfileConfig::new(vec![10, 20], 0, &s).unwrap();
        cfg.draws = 0;
        assert!(reconstruction_profiles(&Zero(16), &[window(vec![0.0; 16], 0)], &s, &cfg).is_err());
    }

    #[test]
    fn draws_reduce_profile_variance() {
        // same window at many origins: only the noise differs
        let s = NoiseSchedule::default();
        let ws: Vec<Window> = (0..200).map(|o| window((0..16).map(|i| (i as f64).cos()).collect(), o)).collect();
        let spread = |draws| {
            let mut cfg = ProfileConfig::new(vec![50, 100], 4, &s).unwrap();
            cfg.draws = draws;
            let e: Vec<f64> = reconstruction_profiles(&Zero(16), &ws, &s, &cfg).unwrap().iter().map(|p| p.errors[0]).collect();
            let m = e.iter().sum::<f64>() / e.len() as f64;
            e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / e.len() as f64
        };
        let (one, many) = (spread(1), spread(16));
        assert!(many < one / 8.0, "{one} {many}");
    }

    #[test]
    fn oracle_scores_at_minimum() {
        let s = NoiseSchedule::default();
        let cfg = ProfileConfig::new(s.default_levels(), 1, &s).unwrap();
        let train: Vec<Window> = (0..20)
            .map(|o| window((0..16).map(|i| ((i * o) as f64).sin()).collect(), o))
            .collect();
        let stats = ProfileStats::fit(&reconstruction_profiles(&Zero(16), &train, &s, &cfg).unwrap()).unwrap();
        let zero = window(vec![0.0; 16], 0);
        let oracle = Oracle {
            x0: zero.samples().to_vec(),
            schedule: s.clone(),
        };
        let p = reconstruction_profile(&oracle, &zero, &s, &cfg).unwrap();
        assert!(p.errors.iter().all(|&e| e < 1e-20));
        let floor: f64 = stats.mean.iter().zip(&stats.std).map(|(m, sd)| -m / sd).sum::<f64>() / 5.0;
        assert!((stats.score(&p, Aggregation::MeanZ) - floor).abs() < 1e-9);
        assert!(
            reconstruction_profiles(&Zero(16), &train, &s, &cfg)
                .unwrap()
                .iter()
                .all(|q| stats.score(q, Aggregation::MeanZ) >= floor)
        );
    }

    #[test]
    fn aggregation_rules() {
        let stats = ProfileStats {
            levels: vec![1, 2],
            mean: vec![1.0, 10.0],
            std: vec![1.0, 5.0],
        };
        let p = ReconstructionProfile {
            origin: 0,
            levels: vec![1, 2],
            errors: vec![3.0, 10.0],
        };
        assert_eq!(stats.score(&p, Aggregation::MeanZ), 1.0);
        assert_eq!(stats.score(&p, Aggregation::MaxZ), 2.0);
    }

    #[test]
    fn pseudo_labels() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        let l = pseudo_label(&scores, 95.0).unwrap();
        assert_eq!(l.threshold, 95.0);
        assert_eq!(l.labels.iter().filter(|&&x| x).count(), 5);
        let flat = pseudo_label(&[2.5; 10], 95.0).unwrap();
        assert_eq!(flat.threshold, 2.5);
        assert!(flat.labels.iter().all(|&x| !x));
        assert!(pseudo_label(&[], 95.0).is_err());
        // permutation invariance of the label multiset
        let mut rev = scores.clone();
        rev.reverse();
        let r = pseudo_label(&rev, 95.0).unwrap();
        assert_eq!(r.threshold, l.threshold);
        let mut a: Vec<(u64, bool)> = l.scores.iter().map(|s| s.to_bits()).zip(l.labels.iter().copied()).collect();
        let mut b: Vec<(u64, bool)> = r.scores.iter().map(|s| s.to_bits()).zip(r.labels.iter().copied()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_noise_reused() {
        let s = NoiseSchedule::default();
        let e = reconstruction_noise(1, 2, 3, 0, 4);
        assert_eq!(e, reconstruction_noise(1, 2, 3, 0, 4));
        assert_ne!(e, reconstruction_noise(1, 2, 4, 0, 4));
        assert_ne!(e, reconstruction_noise(1, 2, 3, 1, 4));
        assert_eq!(forward_noise(&[0.0; 4], 3, &e, &s).unwrap().len(), 4);
    }
}
