//! Stage logic shared by the subcommands: data loading, teacher training
//! and scoring, student distillation and explanation statistics.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use nsad_core::ddpm::{
    self, DdpmModel, DenoiserConfig, DenoiserNet, EpochStats, ProfileConfig, ProfileStats, PseudoLabelSet,
    ReconstructionProfile, SemanticTerm, TrainConfig,
};
use nsad_core::nesy::{explain, KnowledgeBase};
use nsad_core::rff::{self, DistillConfig, DistillReport, DistilledClassifier, InputNormalization, RffProjection};
use nsad_core::rng::derive_seed;
use nsad_core::signals::{
    generate_stream, overlapping_tags, read_stream_csv, read_tags_csv, windowize, AnomalyKind, AnomalyTag,
    NormalizationStats, Stream, Window,
};
use nsad_core::tensor::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::config::{AggregationName, ModeName, PipelineConfig, StudentInput};
use crate::error::{CliError, Result};

// Per-stage seed domains.
const INIT: u64 = 1;
const TRAIN: u64 = 2;
const SCORE: u64 = 3;
const PROJECT: u64 = 4;
const MEDIAN: u64 = 5;

/// A stream with its ground-truth tags when known.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub stream: Stream,
    pub tags: Option<Vec<AnomalyTag>>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_dataset(csv: &Path, tags: Option<&Path>) -> Result<Dataset> {
    let stream = read_stream_csv(open(csv)?).map_err(|e| CliError::Data(format!("{}: {e}", csv.display())))?;
    let tags = match tags {
        Some(p) => Some(
            read_tags_csv(open(p)?, &stream.channel_names).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };
    Ok(Dataset { stream, tags })
}

/// The training stream: the configured CSV, or the generator at the root
/// seed.
pub fn load_training(cfg: &PipelineConfig) -> Result<Dataset> {
    match &cfg.data.csv {
        Some(p) => read_dataset(p, cfg.data.tags.as_deref()),
        None => {
            let (stream, tags) = generate_stream(&cfg.generator(), cfg.seed)?;
            Ok(Dataset {
                stream,
                tags: Some(tags),
            })
        }
    }
}

/// The held-out stream: the configured CSV, or an independently seeded
/// generator run when the training data is synthetic.
pub fn load_holdout(cfg: &PipelineConfig) -> Result<Option<Dataset>> {
    match (&cfg.data.holdout_csv, &cfg.data.csv) {
        (Some(p), _) => read_dataset(p, cfg.data.holdout_tags.as_deref()).map(Some),
        (None, Some(_)) => Ok(None),
        (None, None) => {
            let (stream, tags) = generate_stream(&cfg.generator(), cfg.holdout_seed())?;
            Ok(Some(Dataset {
                stream,
                tags: Some(tags),
            }))
        }
    }
}

pub fn windows(cfg: &PipelineConfig, data: &Dataset, stride: usize) -> Result<Vec<Window>> {
    Ok(windowize(&data.stream, cfg.data.window, stride)?)
}

pub fn load_kb(cfg: &PipelineConfig, schema: &[String]) -> Result<Option<KnowledgeBase>> {
    let Some(path) = &cfg.nesy.kb else { return Ok(None) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("knowledge base {}: {e}", path.display())))?;
    KnowledgeBase::parse(&text, schema)
        .map(Some)
        .map_err(|e| CliError::Usage(format!("knowledge base {}: {e}", path.display())))
}

pub fn normalize(norm: &NormalizationStats, windows: &[Window]) -> Result<Vec<Window>> {
    Ok(windows.iter().map(|w| norm.apply(w)).collect::<std::result::Result<_, _>>()?)
}

/// Fits normalization on `raw` and trains a fresh denoiser. The semantic
/// term is attached only when `kb` is given and λ > 0.
pub fn train_model(
    cfg: &PipelineConfig,
    raw: &[Window],
    kb: Option<&KnowledgeBase>,
) -> Result<(DdpmModel, Vec<EpochStats>)> {
    let first = raw.first().ok_or_else(|| CliError::Data("no training windows".into()))?;
    let schedule = cfg.schedule()?;
    let norm = NormalizationStats::fit(raw)?;
    let windows = normalize(&norm, raw)?;
    let m = &cfg.ddpm;
    let net_cfg = DenoiserConfig {
        hidden: m.hidden,
        layers: m.layers,
        time_dim: m.time_dim,
    };
    let mut net = DenoiserNet::new(first.channels(), first.length(), net_cfg, derive_seed(&[cfg.seed, INIT]))?;
    let train_cfg = TrainConfig {
        epochs: m.epochs,
        batch_size: m.batch_size,
        seed: derive_seed(&[cfg.seed, TRAIN]),
        adam: AdamConfig {
            lr: m.learning_rate,
            ..AdamConfig::default()
        },
    };
    let semantic = kb.filter(|_| cfg.nesy.lambda > 0.0).map(|kb| SemanticTerm {
        kb,
        norm: &norm,
        lambda: cfg.nesy.lambda,
        quantifier: cfg.quantifier(),
    });
    let trace = ddpm::train(&mut net, &windows, &schedule, &train_cfg, semantic)?;
    let model = DdpmModel {
        net,
        schedule,
        norm,
        channel_names: first.channel_names().to_vec(),
    };
    Ok((model, trace))
}

pub fn profile_config(cfg: &PipelineConfig, model: &DdpmModel) -> Result<ProfileConfig> {
    let mut pc = ProfileConfig::new(cfg.levels(&model.schedule), derive_seed(&[cfg.seed, SCORE]), &model.schedule)?;
    pc.draws = cfg.ddpm.draws;
    pc.mode = cfg.mode();
    Ok(pc)
}

/// Checks that raw windows match the model's channel schema and length.
pub fn check_schema(model: &DdpmModel, windows: &[Window]) -> Result<()> {
    for w in windows.iter().take(1) {
        if w.channel_names().as_ref() != model.channel_names.as_slice() || w.length() != model.net.length() {
            return Err(CliError::Data(format!(
                "data channels {:?} × {} do not match the checkpoint's {:?} × {}",
                w.channel_names(),
                w.length(),
                model.channel_names,
                model.net.length()
            )));
        }
    }
    Ok(())
}

/// Reconstruction profiles of raw windows.
pub fn profiles(model: &DdpmModel, raw: &[Window], pc: &ProfileConfig) -> Result<Vec<ReconstructionProfile>> {
    check_schema(model, raw)?;
    let normed = normalize(&model.norm, raw)?;
    Ok(ddpm::reconstruction_profiles(&model.net, &normed, &model.schedule, pc)?)
}

/// Everything needed to label new windows the way the teacher labeled its
/// training data. Stored next to the checkpoint as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Teacher {
    pub levels: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub aggregation: AggregationName,
    pub mode: ModeName,
    pub draws: usize,
    pub seed: u64,
    pub percentile: f64,
    pub threshold: f64,
}

impl Teacher {
    pub fn stats(&self) -> ProfileStats {
        ProfileStats {
            levels: self.levels.clone(),
            mean: self.mean.clone(),
            std: self.std.clone(),
        }
    }

    pub fn profile_config(&self, model: &DdpmModel) -> Result<ProfileConfig> {
        let mut pc = ProfileConfig::new(self.levels.clone(), self.seed, &model.schedule)?;
        pc.draws = self.draws;
        pc.mode = match self.mode {
            ModeName::SingleShot => ddpm::ReconstructionMode::SingleShot,
            ModeName::ReverseChain => ddpm::ReconstructionMode::ReverseChain,
        };
        Ok(pc)
    }

    pub fn aggregation(&self) -> ddpm::Aggregation {
        match self.aggregation {
            AggregationName::MeanZ => ddpm::Aggregation::MeanZ,
            AggregationName::MaxZ => ddpm::Aggregation::MaxZ,
        }
    }

    pub fn profiles(&self, model: &DdpmModel, raw: &[Window]) -> Result<Vec<ReconstructionProfile>> {
        profiles(model, raw, &self.profile_config(model)?)
    }

    /// Anomaly scores of profiles.
    pub fn scores(&self, profiles: &[ReconstructionProfile]) -> Result<Vec<f64>> {
        let stats = self.stats();
        let agg = self.aggregation();
        let scores: Vec<f64> = profiles.iter().map(|p| stats.score(p, agg)).collect();
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(ddpm::DdpmError::NonFiniteScore.into());
        }
        Ok(scores)
    }

    /// Anomaly scores of raw windows.
    pub fn score(&self, model: &DdpmModel, raw: &[Window]) -> Result<Vec<f64>> {
        self.scores(&self.profiles(model, raw)?)
    }

    pub fn label(&self, model: &DdpmModel, raw: &[Window]) -> Result<(Vec<f64>, PseudoLabelSet)> {
        let scores = self.score(model, raw)?;
        let labels = ddpm::apply_threshold(&scores, self.threshold);
        Ok((scores, labels))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("teacher is always serializable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Data(format!("teacher file: {e}")))
    }
}

/// Scores the training windows, fits per-level statistics and thresholds
/// at the configured percentile.
pub fn fit_teacher(
    cfg: &PipelineConfig,
    model: &DdpmModel,
    raw: &[Window],
) -> Result<(Teacher, Vec<ReconstructionProfile>, Vec<f64>, PseudoLabelSet)> {
    let pc = profile_config(cfg, model)?;
    let profs = profiles(model, raw, &pc)?;
    let stats = ProfileStats::fit(&profs)?;
    let agg = cfg.aggregation();
    let scores: Vec<f64> = profs.iter().map(|p| stats.score(p, agg)).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ddpm::DdpmError::NonFiniteScore.into());
    }
    let labels = ddpm::pseudo_label(&scores, cfg.ddpm.percentile)?;
    let teacher = Teacher {
        levels: stats.levels,
        mean: stats.mean,
        std: stats.std,
        aggregation: cfg.ddpm.aggregation,
        mode: cfg.ddpm.mode,
        draws: pc.draws,
        seed: pc.seed,
        percentile: cfg.ddpm.percentile,
        threshold: labels.threshold,
    };
    Ok((teacher, profs, scores, labels))
}

/// Bandwidth per the configured policy, measured on normalized rows.
pub fn bandwidth(cfg: &PipelineConfig, rows: &[&[f64]]) -> Result<f64> {
    match cfg.rff.sigma {
        Some(s) => Ok(s),
        None => rff::median_heuristic(rows, cfg.rff.median_sample, derive_seed(&[cfg.seed, MEDIAN]))
            .map(|m| m * cfg.rff.sigma_scale)
            .filter(|s| *s > 0.0 && s.is_finite())
            .ok_or_else(|| CliError::Data("median heuristic needs at least two distinct windows".into())),
    }
}

/// Student inputs: normalized raw windows, or the teacher's per-level
/// z-scores in profile mode.
pub fn student_rows(
    cfg: &PipelineConfig,
    model: &DdpmModel,
    teacher: &Teacher,
    raw: &[Window],
    profiles: &[ReconstructionProfile],
) -> Result<Vec<Vec<f64>>> {
    Ok(match cfg.rff.input {
        StudentInput::Window => normalize(&model.norm, raw)?.into_iter().map(|w| w.samples().to_vec()).collect(),
        StudentInput::Profile => {
            let stats = teacher.stats();
            profiles.iter().map(|p| stats.z_scores(p)).collect()
        }
    })
}

/// Fits the student on teacher labels. Window-input students carry the
/// teacher's normalization so they can score raw sensor rows.
pub fn distill_student(
    cfg: &PipelineConfig,
    model: &DdpmModel,
    rows: &[Vec<f64>],
    labels: &[bool],
) -> Result<(DistilledClassifier, DistillReport)> {
    let rows: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let sigma = bandwidth(cfg, &rows)?;
    let d = rows.first().map_or(0, |r| r.len());
    let projection = RffProjection::new(d, cfg.rff.pairs, sigma, derive_seed(&[cfg.seed, PROJECT]))?;
    let dc = DistillConfig {
        ridge: cfg.rff.ridge,
        max_iter: cfg.rff.max_iter,
        tol: cfg.rff.tol,
    };
    let (mut clf, report) = rff::distill(&rows, labels, projection, &dc)?;
    if cfg.rff.input == StudentInput::Window {
        clf.normalization = Some(InputNormalization {
            channels: model.net.channels(),
            length: model.net.length(),
            mean: model.norm.mean.clone(),
            std: model.norm.std.clone(),
        });
    }
    Ok((clf, report))
}

/// Student probabilities for prepared rows.
pub fn predict_rows(clf: &DistilledClassifier, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let rows: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Ok(clf.predict_many(&rows)?)
}

/// Scores raw windows with a deployed student, normalizing with its
/// embedded statistics.
pub fn student_probs(clf: &DistilledClassifier, raw: &[Window]) -> Result<Vec<f64>> {
    let mut scratch = Vec::new();
    let mut x = Vec::new();
    raw.iter()
        .map(|w| {
            normalize_into(clf, w.samples(), w.length(), &mut x);
            Ok(clf.predict_prob_probed(&x, &mut scratch, &mut rff::NoProbe)?)
        })
        .collect()
}

/// Applies the classifier's embedded normalization to a channel-major
/// raw window.
pub fn normalize_into(clf: &DistilledClassifier, raw: &[f64], length: usize, out: &mut Vec<f64>) {
    out.clear();
    match &clf.normalization {
        Some(n) => out.extend(raw.chunks(length).zip(n.mean.iter().zip(&n.std)).flat_map(|(ch, (m, s))| ch.iter().map(move |v| (v - m) / s))),
        None => out.extend_from_slice(raw),
    }
}

/// Anomaly kinds the default knowledge base is written to catch.
pub const KB_COVERED: [AnomalyKind; 3] = [AnomalyKind::Spike, AnomalyKind::Drift, AnomalyKind::CorrelationBreak];

/// How often explanations point at the injected sensor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Attribution {
    /// Windows overlapping a covered single-channel anomaly.
    pub anomalous: usize,
    /// ...of which at least one axiom is violated.
    pub violated: usize,
    /// ...of which the report names the injected channel.
    pub named: usize,
    /// Nominal windows with a non-empty report.
    pub false_alarms: usize,
    pub nominal: usize,
}

impl Attribution {
    pub fn rate(&self) -> Option<f64> {
        (self.violated > 0).then(|| self.named as f64 / self.violated as f64)
    }
}

pub fn explain_attribution(
    kb: &KnowledgeBase,
    raw: &[Window],
    tags: &[AnomalyTag],
    cutoff: f64,
    covered: &[AnomalyKind],
) -> Attribution {
    let mut a = Attribution::default();
    for w in raw {
        let hits: Vec<&AnomalyTag> = overlapping_tags(w.origin(), w.length(), tags)
            .into_iter()
            .filter(|t| t.is_anomaly())
            .collect();
        let report = explain(kb, w, cutoff);
        if hits.is_empty() {
            a.nominal += 1;
            a.false_alarms += usize::from(!report.is_empty());
            continue;
        }
        if !hits.iter().all(|t| covered.contains(&t.kind) && t.channels.len() == 1) {
            continue;
        }
        a.anomalous += 1;
        if report.is_empty() {
            continue;
        }
        a.violated += 1;
        let named = report.channels();
        if hits.iter().any(|t| named.contains(&w.channel_names()[t.channels[0]].as_str())) {
            a.named += 1;
        }
    }
    a
}
