use std::io::{Read, Write};

use super::net::{DenoiserConfig, DenoiserNet};
use super::schedule::NoiseSchedule;
use super::{DdpmError, Result};
use crate::signals::NormalizationStats;
use crate::tensor::{read_checkpoint, write_checkpoint, ParamStore, Tensor};

const SCHEDULE: &str = "schedule.beta";
const NORM_MEAN: &str = "norm.mean";
const NORM_STD: &str = "norm.std";
const GEOMETRY: &str = "meta.geometry";
const CHANNEL_PREFIX: &str = "channel:";

/// Everything needed to score raw windows: network, schedule, the
/// normalization fitted on the training corpus and the channel names.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpmModel {
    pub net: DenoiserNet,
    pub schedule: NoiseSchedule,
    pub norm: NormalizationStats,
    pub channel_names: Vec<String>,
}

impl DdpmModel {
    /// Writes an `NSAD` checkpoint: network parameters first, then the β
    /// array, normalization statistics, geometry and one scalar record per
    /// channel name (`channel:<name>` holding its index).
    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let mut store = self.net.params().clone();
        store.push(SCHEDULE, Tensor::vector(self.schedule.betas().to_vec()));
        store.push(NORM_MEAN, Tensor::vector(self.norm.mean.clone()));
        store.push(NORM_STD, Tensor::vector(self.norm.std.clone()));
        let c = self.net.config();
        let geometry = [self.net.channels(), self.net.length(), c.hidden, c.layers, c.time_dim];
        store.push(GEOMETRY, Tensor::vector(geometry.iter().map(|&v| v as f64).collect()));
        for (i, name) in self.channel_names.iter().enumerate() {
            store.push(format!("{CHANNEL_PREFIX}{name}"), Tensor::scalar(i as f64));
        }
        write_checkpoint(w, &store)?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let store = read_checkpoint(r)?;
        let vector = |name: &str| -> Result<Vec<f64>> {
            store
                .get(name)
                .map(|t| t.data().to_vec())
                .ok_or_else(|| DdpmError::Checkpoint(format!("missing record {name}")))
        };
        let geometry = vector(GEOMETRY)?;
        if geometry.len() != 5 || geometry.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return Err(DdpmError::Checkpoint("malformed geometry record".into()));
        }
        let g: Vec<usize> = geometry.iter().map(|&v| v as usize).collect();
        let config = DenoiserConfig {
            hidden: g[2],
            layers: g[3],
            time_dim: g[4],
        };
        let schedule = NoiseSchedule::from_betas(vector(SCHEDULE)?)?;
        let norm = NormalizationStats {
            mean: vector(NORM_MEAN)?,
            std: vector(NORM_STD)?,
        };
        let mut names: Vec<(usize, String)> = store
            .entries()
            .iter()
            .filter_map(|(n, t)| Some((t.item()? as usize, n.strip_prefix(CHANNEL_PREFIX)?.to_string())))
            .collect();
        names.sort();
        if names.len() != g[0] || names.iter().enumerate().any(|(i, (j, _))| i != *j) {
            return Err(DdpmError::Checkpoint("channel name records do not match geometry".into()));
        }
        if norm.mean.len() != g[0] || norm.std.len() != g[0] {
            return Err(DdpmError::Checkpoint("normalization records do not match geometry".into()));
        }
        let params: ParamStore = ParamStore::from_entries(
            store
                .into_entries()
                .into_iter()
                .filter(|(n, _)| n.starts_with('l') || n.starts_with("out."))
                .collect(),
        );
        let net = DenoiserNet::from_params(g[0], g[1], config, params)?;
        Ok(Self {
            net,
            schedule,
            norm,
            channel_names: names.into_iter().map(|(_, n)| n).collect(),
        })
    }
}
