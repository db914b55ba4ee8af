use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{AnomalyKind, AnomalyTag, Result, SignalError, Stream};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub freq_hz: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub name: String,
    pub offset: f64,
    /// At most three components.
    pub sinusoids: Vec<Sinusoid>,
}

/// `target += gain · source` (the source's noise-free signal).
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub target: usize,
    pub source: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub channels: Vec<ChannelSpec>,
    pub coupling: Vec<Coupling>,
    pub length: usize,
    pub sample_rate: f64,
    /// Standard deviation of additive Gaussian noise, raw units.
    pub noise_std: f64,
    /// Probability that a segment carries an injected anomaly.
    pub anomaly_rate: f64,
    /// Segment length; the stream is cut into consecutive segments and each
    /// receives at most one anomaly.
    pub segment_len: usize,
    pub kinds: Vec<AnomalyKind>,
    /// Spike height in units of the channel's nominal standard deviation.
    pub spike_scale: f64,
    /// Final drift offset in units of the channel's nominal standard deviation.
    pub drift_scale: f64,
}

impl Default for GeneratorConfig {
    /// Six channels: three joint angles and three motor currents, each
    /// current linearly coupled to its joint. 100 Hz sampling.
    fn default() -> Self {
        let joint = |i: usize, f: f64, a: f64, phase: f64| ChannelSpec {
            name: format!("joint{i}"),
            offset: 0.0,
            sinusoids: vec![
                Sinusoid {
                    amplitude: a,
                    freq_hz: f,
                    phase,
                },
                Sinusoid {
                    amplitude: a / 3.0,
                    freq_hz: 2.0 * f,
                    phase: phase + 0.5,
                },
            ],
        };
        let current = |i: usize, f: f64, phase: f64| ChannelSpec {
            name: format!("current{i}"),
            offset: 0.2 * i as f64,
            sinusoids: vec![Sinusoid {
                amplitude: 0.2,
                freq_hz: f,
                phase,
            }],
        };
        Self {
            channels: vec![
                joint(1, 1.1, 1.0, 0.0),
                joint(2, 1.7, 0.8, 1.0),
                joint(3, 2.3, 0.6, 2.0),
                current(1, 3.7, 0.3),
                current(2, 4.9, 1.3),
                current(3, 6.1, 2.3),
            ],
            coupling: (0..3)
                .map(|i| Coupling {
                    target: 3 + i,
                    source: i,
                    gain: 0.8,
                })
                .collect(),
            length: 20_000,
            sample_rate: 100.0,
            noise_std: 0.05,
            anomaly_rate: 0.05,
            segment_len: 64,
            kinds: AnomalyKind::INJECTABLE.to_vec(),
            spike_scale: 5.0,
            drift_scale: 3.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SignalError::InvalidConfig(m));
        if self.channels.is_empty() {
            return bad("at least one channel is required".into());
        }
        if let Some(c) = self.channels.iter().find(|c| c.sinusoids.len() > 3) {
            return bad(format!("channel `{}` has more than 3 sinusoids", c.name));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if !(0.0..=0.5).contains(&self.anomaly_rate) {
            return bad(format!("anomaly_rate must be in [0, 0.5], got {}", self.anomaly_rate));
        }
        if self.segment_len < 8 {
            return bad("segment_len must be at least 8".into());
        }
        if self.length < self.segment_len {
            return bad(format!(
                "stream length {} is shorter than segment length {}",
                self.length, self.segment_len
            ));
        }
        if !(self.sample_rate > 0.0) {
            return bad("sample_rate must be positive".into());
        }
        let c = self.channels.len();
        for cp in &self.coupling {
            if cp.target >= c || cp.source >= c || cp.target == cp.source {
                return bad(format!("invalid coupling {} <- {}", cp.target, cp.source));
            }
        }
        if self.anomaly_rate > 0.0 && self.kinds.iter().all(|k| *k == AnomalyKind::None) {
            return bad("anomaly_rate > 0 but no anomaly kinds enabled".into());
        }
        Ok(())
    }
}

/// Synthesizes a stream plus one tag per segment. Deterministic in `seed`.
pub fn generate_stream(config: &GeneratorConfig, seed: u64) -> Result<(Stream, Vec<AnomalyTag>)> {
    config.validate()?;
    let n = config.length;
    let c = config.channels.len();

    let clean: Vec<Vec<f64>> = config
        .channels
        .iter()
        .map(|spec| {
            (0..n)
                .map(|i| {
                    let t = i as f64 / config.sample_rate;
                    spec.offset
                        + spec
                            .sinusoids
                            .iter()
                            .map(|s| s.amplitude * (2.0 * PI * s.freq_hz * t + s.phase).sin())
                            .sum::<f64>()
                })
                .collect()
        })
        .collect();

    let mut data = clean.clone();
    for cp in &config.coupling {
        for i in 0..n {
            data[cp.target][i] += cp.gain * clean[cp.source][i];
        }
    }

    let mut noise_rng = rng_for(&[seed, 0x6e6f_6973_65]);
    if config.noise_std > 0.0 {
        for ch in data.iter_mut() {
            for v in ch.iter_mut() {
                let z: f64 = noise_rng.sample(StandardNormal);
                *v += config.noise_std * z;
            }
        }
    }

    let scales: Vec<f64> = data.iter().map(|ch| std_dev(ch).max(1e-9)).collect();

    let kinds: Vec<AnomalyKind> = config
        .kinds
        .iter()
        .copied()
        .filter(|k| *k != AnomalyKind::None)
        .filter(|k| *k != AnomalyKind::CorrelationBreak || !config.coupling.is_empty())
        .collect();
    let mut rng = rng_for(&[seed, 0x616e_6f6d]);
    let mut tags = Vec::new();
    let seg = config.segment_len;
    for seg_start in (0..=n - seg).step_by(seg) {
        let seg_end = seg_start + seg;
        let inject = !kinds.is_empty() && rng.random::<f64>() < config.anomaly_rate;
        if !inject {
            tags.push(AnomalyTag {
                kind: AnomalyKind::None,
                channels: Vec::new(),
                start: seg_start,
                end: seg_end,
            });
            continue;
        }
        let kind = kinds[rng.random_range(0..kinds.len())];
        let len = match kind {
            AnomalyKind::Spike => rng.random_range(1..=3),
            _ => rng.random_range(seg / 4..=seg / 2),
        };
        let start = seg_start + rng.random_range(0..=seg - len);
        let end = start + len;
        let channel = match kind {
            AnomalyKind::CorrelationBreak => config.coupling[rng.random_range(0..config.coupling.len())].target,
            _ => rng.random_range(0..c),
        };
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let scale = scales[channel];
        let ch = &mut data[channel];
        match kind {
            AnomalyKind::Spike => {
                for v in &mut ch[start..end] {
                    *v += sign * config.spike_scale * scale;
                }
            }
            AnomalyKind::Drift => {
                for (k, v) in ch[start..end].iter_mut().enumerate() {
                    *v += sign * config.drift_scale * scale * (k + 1) as f64 / len as f64;
                }
            }
            AnomalyKind::Stuck => {
                let held = ch[start];
                for v in &mut ch[start..end] {
                    *v = held;
                }
            }
            AnomalyKind::CorrelationBreak => {
                // flip the sign of every coupling feeding this channel
                for cp in config.coupling.iter().filter(|cp| cp.target == channel) {
                    for i in start..end {
                        data[channel][i] -= 2.0 * cp.gain * clean[cp.source][i];
                    }
                }
            }
            AnomalyKind::None => unreachable!(),
        }
        tags.push(AnomalyTag {
            kind,
            channels: vec![channel],
            start,
            end,
        });
    }

    let stream = Stream {
        channel_names: config.channels.iter().map(|s| s.name.clone()).collect(),
        timestamps: (0..n).map(|i| i.to_string()).collect(),
        data,
    };
    Ok((stream, tags))
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}
