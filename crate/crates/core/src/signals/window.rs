use std::sync::Arc;

use super::{AnomalyTag, Result, SignalError, Stream};

/// Fixed-length multichannel frame cut from a stream. Samples are stored
/// channel-major: `samples[c * length + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    channels: usize,
    length: usize,
    samples: Vec<f64>,
    origin: usize,
    channel_names: Arc<[String]>,
}

impl Window {
    pub fn new(
        channel_names: Arc<[String]>,
        length: usize,
        samples: Vec<f64>,
        origin: usize,
    ) -> Result<Self> {
        let channels = channel_names.len();
        if channels == 0 || length == 0 {
            return Err(SignalError::Empty);
        }
        if samples.len() != channels * length {
            return Err(SignalError::ChannelMismatch {
                expected: channels * length,
                found: samples.len(),
            });
        }
        Ok(Self {
            channels,
            length,
            samples,
            origin,
            channel_names,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// Flattened dimension `channels · length`.
    pub fn dim(&self) -> usize {
        self.samples.len()
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn channel_names(&self) -> &Arc<[String]> {
        &self.channel_names
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.samples[c * self.length..(c + 1) * self.length]
    }

    /// Channel-major flat view, the layout fed to the models.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Same geometry and origin, new values.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Window::new(self.channel_names.clone(), self.length, samples, self.origin)
    }
}

/// Cuts `floor((len − length)/stride) + 1` windows.
pub fn windowize(stream: &Stream, length: usize, stride: usize) -> Result<Vec<Window>> {
    if length == 0 || stride == 0 {
        return Err(SignalError::InvalidStride);
    }
    if stream.channels() == 0 {
        return Err(SignalError::Empty);
    }
    if length > stream.len() {
        return Err(SignalError::WindowTooLong {
            window: length,
            len: stream.len(),
        });
    }
    let names: Arc<[String]> = stream.channel_names.clone().into();
    let count = (stream.len() - length) / stride + 1;
    (0..count)
        .map(|k| {
            let origin = k * stride;
            let mut samples = Vec::with_capacity(stream.channels() * length);
            for ch in &stream.data {
                samples.extend_from_slice(&ch[origin..origin + length]);
            }
            Window::new(names.clone(), length, samples, origin)
        })
        .collect()
}

/// Anomalous tags a window `[origin, origin + length)` covers by at least a
/// quarter of the tag's interval.
pub fn overlapping_tags(origin: usize, length: usize, tags: &[AnomalyTag]) -> Vec<&AnomalyTag> {
    let end = origin + length;
    tags.iter()
        .filter(|t| t.is_anomaly() && !t.is_empty())
        .filter(|t| {
            let overlap = end.min(t.end).saturating_sub(origin.max(t.start));
            4 * overlap >= t.len()
        })
        .collect()
}

/// Evaluation-only labels: a window is anomalous iff it overlaps ≥25% of
/// some tagged interval.
pub fn ground_truth(windows: &[Window], tags: &[AnomalyTag]) -> Vec<bool> {
    windows
        .iter()
        .map(|w| !overlapping_tags(w.origin(), w.length(), tags).is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::AnomalyKind;

    fn ramp(len: usize) -> Stream {
        Stream {
            channel_names: vec!["a".into(), "b".into()],
            timestamps: (0..len).map(|i| i.to_string()).collect(),
            data: vec![
                (0..len).map(|i| i as f64).collect(),
                (0..len).map(|i| -(i as f64)).collect(),
            ],
        }
    }

    #[test]
    fn window_counts() {
        let s = ramp(10);
        assert_eq!(windowize(&s, 5, 5).unwrap().len(), 2);
        assert_eq!(windowize(&s, 5, 1).unwrap().len(), 6);
        assert_eq!(windowize(&s, 10, 3).unwrap().len(), 1);
        assert!(matches!(windowize(&s, 11, 1), Err(SignalError::WindowTooLong { .. })));
        assert!(matches!(windowize(&s, 5, 0), Err(SignalError::InvalidStride)));
    }

    #[test]
    fn non_overlapping_windows_rebuild_prefix() {
        let s = ramp(23);
        let ws = windowize(&s, 5, 5).unwrap();
        for c in 0..2 {
            let rebuilt: Vec<f64> = ws.iter().flat_map(|w| w.channel(c).to_vec()).collect();
            assert_eq!(rebuilt, s.data[c][..20].to_vec());
        }
        assert_eq!(ws.iter().map(|w| w.origin()).collect::<Vec<_>>(), vec![0, 5, 10, 15]);
    }

    #[test]
    fn quarter_overlap_rule() {
        let tag = |start, end| AnomalyTag {
            kind: AnomalyKind::Drift,
            channels: vec![0],
            start,
            end,
        };
        // tag of length 8; window [0,10) overlaps 2 samples of [8,16) = 25%
        assert_eq!(overlapping_tags(0, 10, &[tag(8, 16)]).len(), 1);
        // 1 sample = 12.5%
        assert!(overlapping_tags(0, 9, &[tag(8, 16)]).is_empty());
        let none = AnomalyTag {
            kind: AnomalyKind::None,
            channels: vec![],
            start: 0,
            end: 10,
        };
        assert!(overlapping_tags(0, 10, &[none]).is_empty());
    }
}
