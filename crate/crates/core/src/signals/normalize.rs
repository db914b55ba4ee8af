use super::{Result, SignalError, Window};

/// Per-channel z-score statistics fitted on a training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Population mean and standard deviation over every sample of every
    /// window. Constant channels are rejected by name.
    pub fn fit(windows: &[Window]) -> Result<Self> {
        let first = windows.first().ok_or(SignalError::Empty)?;
        let c = first.channels();
        let mut count = 0usize;
        let mut mean = vec![0.0; c];
        for w in windows {
            check_channels(w, c)?;
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += w.channel(ch).iter().sum::<f64>();
            }
            count += w.length();
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = vec![0.0; c];
        for w in windows {
            for (ch, v) in var.iter_mut().enumerate() {
                *v += w.channel(ch).iter().map(|x| (x - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / count as f64).sqrt()).collect();
        for (ch, (&s, &m)) in std.iter().zip(&mean).enumerate() {
            if !(s > 1e-12 * m.abs().max(1.0)) {
                return Err(SignalError::ZeroVariance(first.channel_names()[ch].clone()));
            }
        }
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, w: &Window) -> Result<Window> {
        self.transform(w, |x, m, s| (x - m) / s)
    }

    pub fn invert(&self, w: &Window) -> Result<Window> {
        self.transform(w, |z, m, s| z * s + m)
    }

    fn transform(&self, w: &Window, f: impl Fn(f64, f64, f64) -> f64) -> Result<Window> {
        check_channels(w, self.channels())?;
        let l = w.length();
        let samples = w
            .samples()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let ch = i / l;
                f(x, self.mean[ch], self.std[ch])
            })
            .collect();
        w.with_samples(samples)
    }
}

fn check_channels(w: &Window, expected: usize) -> Result<()> {
    if w.channels() != expected {
        return Err(SignalError::ChannelMismatch {
            expected,
            found: w.channels(),
        });
    }
    Ok(())
}
