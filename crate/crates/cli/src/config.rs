//! Pipeline configuration: one TOML file with a section per stage. Every
//! field has a default, so an empty file (or no file) is a valid config.

use std::path::{Path, PathBuf};

use nsad_core::ddpm::{Aggregation, NoiseSchedule, ReconstructionMode, DEFAULT_DRAWS};
use nsad_core::nesy::Quantifier;
use nsad_core::signals::GeneratorConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
    pub data: DataSection,
    pub generator: GeneratorSection,
    pub ddpm: DdpmSection,
    pub nesy: NesySection,
    pub rff: RffSection,
    pub bench: BenchSection,
    pub paths: PathsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            data: DataSection::default(),
            generator: GeneratorSection::default(),
            ddpm: DdpmSection::default(),
            nesy: NesySection::default(),
            rff: RffSection::default(),
            bench: BenchSection::default(),
            paths: PathsSection::default(),
        }
    }
}

/// Input stream and windowing. Without `csv` the synthetic generator is
/// used with the root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub csv: Option<PathBuf>,
    pub tags: Option<PathBuf>,
    pub holdout_csv: Option<PathBuf>,
    pub holdout_tags: Option<PathBuf>,
    /// Window length `L`.
    pub window: usize,
    pub stride: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            csv: None,
            tags: None,
            holdout_csv: None,
            holdout_tags: None,
            window: 64,
            stride: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub length: usize,
    pub sample_rate: f64,
    pub noise_std: f64,
    pub anomaly_rate: f64,
    pub segment_len: usize,
    pub spike_scale: f64,
    pub drift_scale: f64,
    /// Seed of the held-out stream; defaults to `seed + 1`.
    pub holdout_seed: Option<u64>,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            length: g.length,
            sample_rate: g.sample_rate,
            noise_std: g.noise_std,
            anomaly_rate: g.anomaly_rate,
            segment_len: g.segment_len,
            spike_scale: g.spike_scale,
            drift_scale: g.drift_scale,
            holdout_seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationName {
    MeanZ,
    MaxZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    SingleShot,
    ReverseChain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantifierName {
    Mean,
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpmSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub layers: usize,
    pub time_dim: usize,
    /// Scoring levels; empty means ⌈T·{0.1, 0.25, 0.5, 0.75, 1}⌉.
    pub levels: Vec<usize>,
    /// ε draws averaged per level when scoring.
    pub draws: usize,
    pub mode: ModeName,
    pub aggregation: AggregationName,
    /// Windows scoring above this percentile are labeled anomalous.
    pub percentile: f64,
}

impl Default for DdpmSection {
    fn default() -> Self {
        let s = NoiseSchedule::default();
        Self {
            steps: s.steps(),
            beta_start: nsad_core::ddpm::DEFAULT_BETA_START,
            beta_end: nsad_core::ddpm::DEFAULT_BETA_END,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            hidden: 256,
            layers: 3,
            time_dim: 32,
            levels: Vec::new(),
            draws: DEFAULT_DRAWS,
            mode: ModeName::SingleShot,
            aggregation: AggregationName::MeanZ,
            percentile: 95.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NesySection {
    pub kb: Option<PathBuf>,
    /// Semantic-loss weight; 0 trains without the knowledge base.
    pub lambda: f64,
    pub quantifier: QuantifierName,
    /// Axioms below this degree are reported as violated.
    pub cutoff: f64,
}

impl Default for NesySection {
    fn default() -> Self {
        Self {
            kb: None,
            lambda: 0.0,
            quantifier: QuantifierName::Mean,
            cutoff: 0.5,
        }
    }
}

/// What the student sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentInput {
    /// Normalized, flattened raw windows: inference never runs the teacher.
    Window,
    /// The teacher's per-level z-scores (experimental: inference then
    /// needs the diffusion model).
    Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RffSection {
    pub input: StudentInput,
    /// Frequency count `D`.
    pub pairs: usize,
    /// Fixed bandwidth; absent means the median heuristic.
    pub sigma: Option<f64>,
    /// Multiplier applied to the median-heuristic bandwidth.
    pub sigma_scale: f64,
    /// Rows sampled by the median heuristic.
    pub median_sample: usize,
    pub ridge: f64,
    /// Newton iterations.
    pub max_iter: usize,
    pub tol: f64,
    /// Stride of the teacher-labeled windows the student is fitted on.
    pub stride: usize,
}

impl Default for RffSection {
    fn default() -> Self {
        Self {
            input: StudentInput::Window,
            pairs: nsad_core::rff::DEFAULT_PAIRS,
            sigma: None,
            sigma_scale: 0.5,
            median_sample: 1000,
            ridge: 1e-4,
            max_iter: 100,
            tol: 1e-10,
            stride: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub iterations: usize,
    pub warmup: usize,
    /// Distinct windows cycled through while timing.
    pub windows: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            warmup: 1_000,
            windows: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Directory receiving checkpoints, classifier and reports.
    pub out: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self { out: PathBuf::from("out") }
    }
}

impl PipelineConfig {
    /// Parses `text`; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut self.data.csv);
        fix(&mut self.data.tags);
        fix(&mut self.data.holdout_csv);
        fix(&mut self.data.holdout_tags);
        fix(&mut self.nesy.kb);
        if self.paths.out.is_relative() {
            self.paths.out = base.join(&self.paths.out);
        }
    }

    /// Checks numeric bounds and that referenced input files exist.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        let d = &self.data;
        if d.window < 2 || d.stride == 0 || self.rff.stride == 0 {
            return bad("data.window must be >= 2 and strides >= 1".into());
        }
        let g = &self.generator;
        if !(0.0..=1.0).contains(&g.anomaly_rate) || !(g.noise_std >= 0.0) || !(g.sample_rate > 0.0) {
            return bad("generator: anomaly_rate in [0, 1], noise_std >= 0, sample_rate > 0".into());
        }
        let m = &self.ddpm;
        if m.epochs == 0 || m.batch_size == 0 || m.draws == 0 || m.hidden == 0 || m.layers == 0 || m.time_dim == 0 {
            return bad("ddpm: epochs, batch_size, draws, hidden, layers and time_dim must be positive".into());
        }
        if !(m.learning_rate > 0.0) || !(m.percentile > 0.0 && m.percentile < 100.0) {
            return bad("ddpm: learning_rate > 0 and percentile in (0, 100) required".into());
        }
        let n = &self.nesy;
        if !(n.lambda >= 0.0) || !(0.0..=1.0).contains(&n.cutoff) {
            return bad("nesy: lambda >= 0 and cutoff in [0, 1] required".into());
        }
        if n.lambda > 0.0 && n.kb.is_none() {
            return bad("nesy.lambda > 0 requires nesy.kb".into());
        }
        let r = &self.rff;
        if r.pairs == 0 || r.median_sample < 2 || !(r.ridge > 0.0) || !(r.sigma_scale > 0.0) {
            return bad("rff: pairs >= 1, median_sample >= 2, ridge > 0 and sigma_scale > 0 required".into());
        }
        if r.sigma.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return bad("rff.sigma must be positive".into());
        }
        if self.bench.iterations == 0 || self.bench.windows == 0 {
            return bad("bench: iterations and windows must be positive".into());
        }
        self.schedule()?;
        for p in [&d.csv, &d.tags, &d.holdout_csv, &d.holdout_tags, &n.kb].into_iter().flatten() {
            if !p.is_file() {
                return bad(format!("referenced file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.ddpm.steps, self.ddpm.beta_start, self.ddpm.beta_end)
            .map_err(|e| CliError::Usage(format!("ddpm schedule: {e}")))
    }

    pub fn levels(&self, schedule: &NoiseSchedule) -> Vec<usize> {
        if self.ddpm.levels.is_empty() {
            schedule.default_levels()
        } else {
            self.ddpm.levels.clone()
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        let g = &self.generator;
        GeneratorConfig {
            length: g.length,
            sample_rate: g.sample_rate,
            noise_std: g.noise_std,
            anomaly_rate: g.anomaly_rate,
            segment_len: g.segment_len,
            spike_scale: g.spike_scale,
            drift_scale: g.drift_scale,
            ..GeneratorConfig::default()
        }
    }

    pub fn holdout_seed(&self) -> u64 {
        self.generator.holdout_seed.unwrap_or(self.seed.wrapping_add(1))
    }

    pub fn aggregation(&self) -> Aggregation {
        match self.ddpm.aggregation {
            AggregationName::MeanZ => Aggregation::MeanZ,
            AggregationName::MaxZ => Aggregation::MaxZ,
        }
    }

    pub fn mode(&self) -> ReconstructionMode {
        match self.ddpm.mode {
            ModeName::SingleShot => ReconstructionMode::SingleShot,
            ModeName::ReverseChain => ReconstructionMode::ReverseChain,
        }
    }

    pub fn quantifier(&self) -> Quantifier {
        match self.nesy.quantifier {
            QuantifierName::Mean => Quantifier::Mean,
            QuantifierName::Min => Quantifier::Min,
        }
    }

    /// The effective configuration as TOML, echoed into reports.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}
