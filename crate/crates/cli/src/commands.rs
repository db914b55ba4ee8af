//! One function per subcommand. Each writes its artifacts under the
//! configured output directory and a plain-text report that ends with the
//! effective configuration.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nsad_core::ddpm::{apply_threshold, Aggregation, DdpmModel};
use nsad_core::metrics::{auroc, percentile_nearest_rank};
use nsad_core::nesy::explain;
use nsad_core::rff::{self, fidelity_from_probs, read_classifier, write_classifier, DistilledClassifier, NoProbe};
use nsad_core::signals::{ground_truth, write_stream_csv, write_tags_csv, Window};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{self, Teacher};

pub const STREAM_FILE: &str = "stream.csv";
pub const TAGS_FILE: &str = "tags.csv";
pub const CHECKPOINT_FILE: &str = "ddpm.nsad";
pub const TEACHER_FILE: &str = "teacher.toml";
pub const STUDENT_FILE: &str = "student.nsrf";

/// Per-invocation options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
    pub plot_data: bool,
}

impl Context {
    pub fn out(&self) -> &Path {
        &self.config.paths.out
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out().join(name)
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(self.out())
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", self.out().display())))
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display())))
    }

    fn report(&self, name: &str, title: &str, body: &str) -> Result<()> {
        let mut f = self.create(name)?;
        write!(f, "# nsad {title}\n\n{body}\n# effective configuration\n{}", self.config.echo())?;
        f.flush()?;
        Ok(())
    }

    /// Writes an `x,y` series under `plot/` when `--plot-data` is set.
    fn plot(&self, name: &str, x: &str, y: &str, points: impl IntoIterator<Item = (f64, f64)>) -> Result<()> {
        if !self.plot_data {
            return Ok(());
        }
        let dir = self.path("plot");
        fs::create_dir_all(&dir)?;
        let mut f = BufWriter::new(File::create(dir.join(name))?);
        writeln!(f, "{x},{y}")?;
        for (a, b) in points {
            writeln!(f, "{a},{b}")?;
        }
        f.flush()?;
        Ok(())
    }

    fn load_model(&self) -> Result<DdpmModel> {
        let p = self.path(CHECKPOINT_FILE);
        let f = File::open(&p).map_err(|e| CliError::Data(format!("{}: {e} (run `nsad train` first)", p.display())))?;
        Ok(DdpmModel::load(std::io::BufReader::new(f))?)
    }

    fn load_teacher(&self) -> Result<Teacher> {
        let p = self.path(TEACHER_FILE);
        let text =
            fs::read_to_string(&p).map_err(|e| CliError::Data(format!("{}: {e} (run `nsad score` first)", p.display())))?;
        Teacher::from_toml(&text)
    }
}

pub fn load_classifier(path: &Path) -> Result<DistilledClassifier> {
    let f = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(read_classifier(std::io::BufReader::new(f))?)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

/// `generate`: writes the synthetic stream and its tag sidecar.
pub fn generate(ctx: &Context) -> Result<()> {
    ctx.ensure_out()?;
    let cfg = &ctx.config;
    let (stream, tags) = nsad_core::signals::generate_stream(&cfg.generator(), cfg.seed)?;
    write_stream_csv(ctx.create(STREAM_FILE)?, &stream)?;
    write_tags_csv(ctx.create(TAGS_FILE)?, &tags, &stream.channel_names)?;
    let injected = tags.iter().filter(|t| t.is_anomaly()).count();
    let mut body = String::new();
    writeln!(body, "samples: {}", stream.len()).unwrap();
    writeln!(body, "channels: {}", stream.channel_names.join(", ")).unwrap();
    writeln!(body, "segments: {}", tags.len()).unwrap();
    writeln!(
        body,
        "anomalous segments: {injected} ({:.4})",
        injected as f64 / tags.len().max(1) as f64
    )
    .unwrap();
    ctx.report("generate_report.txt", "generate", &body)?;
    eprintln!("wrote {} samples and {} tags to {}", stream.len(), tags.len(), ctx.out().display());
    Ok(())
}

/// `train`: fits the denoiser and writes the checkpoint and loss trace.
pub fn train(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let data = pipeline::load_training(cfg)?;
    // parse the knowledge base before any training work
    let kb = pipeline::load_kb(cfg, &data.stream.channel_names)?;
    ctx.ensure_out()?;
    let raw = pipeline::windows(cfg, &data, cfg.data.stride)?;
    eprintln!("training on {} windows for {} epochs", raw.len(), cfg.ddpm.epochs);
    let t0 = Instant::now();
    let (model, trace) = pipeline::train_model(cfg, &raw, kb.as_ref())?;
    eprintln!("trained in {:.1?}", t0.elapsed());
    let mut f = ctx.create(CHECKPOINT_FILE)?;
    model.save(&mut f)?;
    f.flush()?;
    let mut f = ctx.create("loss_trace.csv")?;
    writeln!(f, "epoch,loss,mse,semantic")?;
    for e in &trace {
        writeln!(f, "{},{},{},{}", e.epoch, e.loss, e.mse, e.semantic)?;
    }
    f.flush()?;
    ctx.plot("loss.csv", "epoch", "loss", trace.iter().map(|e| (e.epoch as f64, e.loss)))?;
    let (first, last) = (trace[0].loss, trace[trace.len() - 1].loss);
    let mut body = String::new();
    writeln!(body, "windows: {}", raw.len()).unwrap();
    writeln!(body, "epochs: {}", trace.len()).unwrap();
    writeln!(body, "initial loss: {first:.6}").unwrap();
    writeln!(body, "final loss: {last:.6}").unwrap();
    let sem = if kb.is_some() && cfg.nesy.lambda > 0.0 { "on" } else { "off" };
    writeln!(body, "semantic term: {sem}").unwrap();
    ctx.report("train_report.txt", "train", &body)?;
    eprintln!("loss {first:.4} -> {last:.4}; checkpoint {}", ctx.path(CHECKPOINT_FILE).display());
    Ok(())
}

/// `score`: teacher scores and pseudo-labels for the training windows,
/// plus explanations for every labeled window.
pub fn score(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let model = ctx.load_model()?;
    let data = pipeline::load_training(cfg)?;
    let kb = pipeline::load_kb(cfg, &data.stream.channel_names)?;
    ctx.ensure_out()?;
    let raw = pipeline::windows(cfg, &data, cfg.data.stride)?;
    let t0 = Instant::now();
    let (teacher, profiles, scores, labels) = pipeline::fit_teacher(cfg, &model, &raw)?;
    eprintln!("scored {} windows in {:.1?}", raw.len(), t0.elapsed());
    fs::write(ctx.path(TEACHER_FILE), teacher.to_toml())?;

    let stats = teacher.stats();
    let mut f = ctx.create("scores.csv")?;
    write!(f, "origin,score")?;
    for t in &teacher.levels {
        write!(f, ",z_t{t}")?;
    }
    writeln!(f)?;
    for (p, s) in profiles.iter().zip(&scores) {
        write!(f, "{},{s}", p.origin)?;
        for z in stats.z_scores(p) {
            write!(f, ",{z}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    let mut f = ctx.create("labels.csv")?;
    writeln!(f, "origin,label")?;
    for (w, &l) in raw.iter().zip(&labels.labels) {
        writeln!(f, "{},{}", w.origin(), u8::from(l))?;
    }
    f.flush()?;
    ctx.plot("scores.csv", "origin", "score", raw.iter().zip(&scores).map(|(w, &s)| (w.origin() as f64, s)))?;

    let mut body = String::new();
    writeln!(body, "windows: {}", raw.len()).unwrap();
    writeln!(body, "threshold: {}", teacher.threshold).unwrap();
    writeln!(body, "labeled anomalous: {} ({:.4})", labels.labels.iter().filter(|&&l| l).count(), labels.positive_fraction()).unwrap();
    if let Some(tags) = &data.tags {
        writeln!(body, "AUROC vs ground truth: {}", opt(auroc(&scores, &ground_truth(&raw, tags)))).unwrap();
    }
    if let Some(kb) = &kb {
        let mut text = String::new();
        let (mut labeled, mut unlabeled) = (0, 0);
        for (w, &l) in raw.iter().zip(&labels.labels) {
            let r = explain(kb, w, cfg.nesy.cutoff);
            if r.is_empty() {
                continue;
            }
            if l {
                labeled += 1;
                write!(text, "{r}").unwrap();
            } else {
                unlabeled += 1;
            }
        }
        fs::write(ctx.path("explain.txt"), text)?;
        writeln!(body, "explained labeled windows: {labeled}").unwrap();
        writeln!(body, "unlabeled windows with violations: {unlabeled}").unwrap();
    }
    ctx.report("score_report.txt", "score", &body)?;
    eprint!("{body}");
    Ok(())
}

/// `distill`: fits the random-feature student on teacher labels and
/// writes the deployable classifier.
pub fn distill(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let model = ctx.load_model()?;
    let teacher = ctx.load_teacher()?;
    let data = pipeline::load_training(cfg)?;
    ctx.ensure_out()?;
    let raw = pipeline::windows(cfg, &data, cfg.rff.stride)?;
    let t0 = Instant::now();
    let profiles = teacher.profiles(&model, &raw)?;
    let labels = apply_threshold(&teacher.scores(&profiles)?, teacher.threshold);
    eprintln!("teacher labeled {} windows in {:.1?}", raw.len(), t0.elapsed());
    let rows = pipeline::student_rows(cfg, &model, &teacher, &raw, &profiles)?;
    let t0 = Instant::now();
    let (clf, report) = pipeline::distill_student(cfg, &model, &rows, &labels.labels)?;
    eprintln!("distilled in {:.1?} ({} Newton steps)", t0.elapsed(), report.iterations);

    let mut bytes = Vec::new();
    write_classifier(&mut bytes, &clf)?;
    let mut again = Vec::new();
    write_classifier(&mut again, &rff::read_classifier(bytes.as_slice())?)?;
    if again != bytes {
        return Err(CliError::Data("classifier file does not round-trip".into()));
    }
    fs::write(ctx.path(STUDENT_FILE), &bytes)?;
    ctx.plot(
        "distill_loss.csv",
        "iteration",
        "loss",
        report.loss_trace.iter().enumerate().map(|(i, &l)| (i as f64, l)),
    )?;

    let probs = pipeline::predict_rows(&clf, &rows)?;
    let truth = data.tags.as_ref().map(|t| ground_truth(&raw, t));
    let fit = fidelity_from_probs(&probs, &labels.labels, truth.as_deref())?;
    let mut body = String::new();
    writeln!(body, "student input: {:?}", cfg.rff.input).unwrap();
    writeln!(body, "features: {} (sigma {})", clf.projection.feature_dim(), clf.projection.sigma()).unwrap();
    writeln!(body, "newton steps: {}, gradient norm {:e}", report.iterations, report.gradient_norm).unwrap();
    writeln!(body, "file: {} bytes, round-trip byte-exact", bytes.len()).unwrap();
    writeln!(body, "\n[distillation windows]").unwrap();
    writeln!(body, "windows: {} (stride {})", raw.len(), cfg.rff.stride).unwrap();
    writeln!(body, "teacher positives: {} ({:.4})", labels.labels.iter().filter(|&&l| l).count(), labels.positive_fraction()).unwrap();
    write_fidelity(&mut body, &fit, None);

    // the windows `score` labeled, when they are a subset of these
    if cfg.data.stride.is_multiple_of(cfg.rff.stride) {
        let keep: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].origin() % cfg.data.stride == 0).collect();
        let pick = |v: &[bool]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let p: Vec<f64> = keep.iter().map(|&i| probs[i]).collect();
        let t = truth.as_deref().map(pick);
        let f = fidelity_from_probs(&p, &pick(&labels.labels), t.as_deref())?;
        writeln!(body, "\n[scored windows]").unwrap();
        writeln!(body, "windows: {} (stride {})", keep.len(), cfg.data.stride).unwrap();
        write_fidelity(&mut body, &f, None);
    }

    if let Some(hold) = pipeline::load_holdout(cfg)? {
        let hraw = pipeline::windows(cfg, &hold, cfg.data.stride)?;
        let hprof = teacher.profiles(&model, &hraw)?;
        let tscores = teacher.scores(&hprof)?;
        let tlabels = apply_threshold(&tscores, teacher.threshold);
        let hp = pipeline::predict_rows(&clf, &pipeline::student_rows(cfg, &model, &teacher, &hraw, &hprof)?)?;
        let htruth = hold.tags.as_ref().map(|t| ground_truth(&hraw, t));
        let hf = fidelity_from_probs(&hp, &tlabels.labels, htruth.as_deref())?;
        writeln!(body, "\n[held-out windows]").unwrap();
        writeln!(body, "windows: {}", hraw.len()).unwrap();
        let teacher_auc = htruth.as_ref().and_then(|t| auroc(&tscores, t));
        write_fidelity(&mut body, &hf, Some(teacher_auc));
    }
    ctx.report("distill_report.txt", "distill", &body)?;
    eprint!("{body}");
    Ok(())
}

fn write_fidelity(body: &mut String, f: &rff::FidelityReport, teacher_auc: Option<Option<f64>>) {
    writeln!(body, "agreement with teacher labels: {:.4}", f.agreement).unwrap();
    writeln!(
        body,
        "confusion vs teacher: tp {} fp {} tn {} fn {}",
        f.true_positive, f.false_positive, f.true_negative, f.false_negative
    )
    .unwrap();
    writeln!(body, "student AUROC vs ground truth: {}", opt(f.auroc)).unwrap();
    if let Some(t) = teacher_auc {
        writeln!(body, "teacher AUROC vs ground truth: {}", opt(t)).unwrap();
    }
}

/// Latency percentiles in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latency {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

impl Latency {
    pub fn from_samples(ns: &[f64]) -> Self {
        let p = |q| percentile_nearest_rank(ns, q).unwrap_or(f64::NAN);
        Self {
            p50: p(50.0),
            p95: p(95.0),
            p99: p(99.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub rff: Latency,
    pub ddpm: Latency,
    pub speedup: f64,
    pub host: String,
    pub iterations: usize,
    pub warmup: usize,
}

/// Times `f` over `iterations` calls after `warmup` untimed ones.
pub fn time_calls(warmup: usize, iterations: usize, mut f: impl FnMut(usize)) -> Vec<f64> {
    for i in 0..warmup {
        f(i);
    }
    (0..iterations)
        .map(|i| {
            let t = Instant::now();
            f(i);
            t.elapsed().as_nanos() as f64
        })
        .collect()
}

pub fn host_description() -> String {
    let cpu = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{} {} / {cpu} / {cores} logical cores", std::env::consts::OS, std::env::consts::ARCH)
}

/// Per-window latency of both detectors on the same raw windows: the
/// student (normalize, features, dot, sigmoid) and the teacher
/// (normalize, K-level reconstruction profile, z-score aggregation).
pub fn run_bench(
    model: &DdpmModel,
    teacher: &Teacher,
    clf: &DistilledClassifier,
    windows: &[Window],
    warmup: usize,
    iterations: usize,
) -> Result<(BenchmarkReport, Vec<f64>, Vec<f64>)> {
    if windows.is_empty() {
        return Err(CliError::Data("no windows to benchmark".into()));
    }
    if clf.input_dim() != windows[0].dim() {
        return Err(CliError::Data(format!(
            "classifier expects {} inputs, windows have {}",
            clf.input_dim(),
            windows[0].dim()
        )));
    }
    pipeline::check_schema(model, windows)?;
    let n = windows.len();
    let mut scratch = Vec::new();
    let mut x = Vec::new();
    let mut failed = None;
    let mut rff_ns = time_calls(warmup, iterations, |i| {
        let w = &windows[i % n];
        pipeline::normalize_into(clf, w.samples(), w.length(), &mut x);
        match clf.predict_prob_probed(&x, &mut scratch, &mut NoProbe) {
            Ok(p) => {
                std::hint::black_box(p);
            }
            Err(e) => failed = Some(CliError::from(e)),
        }
    });
    if let Some(e) = failed {
        return Err(e);
    }
    let pc = teacher.profile_config(model)?;
    let stats = teacher.stats();
    let agg: Aggregation = teacher.aggregation();
    let mut failed = None;
    let mut ddpm_ns = time_calls(warmup, iterations, |i| {
        let w = &windows[i % n];
        let r = model
            .norm
            .apply(w)
            .map_err(CliError::from)
            .and_then(|z| Ok(nsad_core::ddpm::reconstruction_profile(&model.net, &z, &model.schedule, &pc)?));
        match r {
            Ok(p) => {
                std::hint::black_box(stats.score(&p, agg));
            }
            Err(e) => failed = Some(e),
        }
    });
    if let Some(e) = failed {
        return Err(e);
    }
    rff_ns.sort_by(f64::total_cmp);
    ddpm_ns.sort_by(f64::total_cmp);
    let rff = Latency::from_samples(&rff_ns);
    let ddpm = Latency::from_samples(&ddpm_ns);
    let report = BenchmarkReport {
        rff,
        ddpm,
        speedup: ddpm.p50 / rff.p50,
        host: host_description(),
        iterations,
        warmup,
    };
    Ok((report, rff_ns, ddpm_ns))
}

/// `bench`: latency of the student against the teacher.
pub fn bench(ctx: &Context, model_path: Option<&Path>, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = &ctx.config;
    let clf = load_classifier(&model_path.map_or_else(|| ctx.path(STUDENT_FILE), Path::to_path_buf))?;
    let model = match checkpoint {
        Some(p) => DdpmModel::load(std::io::BufReader::new(File::open(p)?))?,
        None => ctx.load_model()?,
    };
    let teacher = ctx.load_teacher()?;
    let data = pipeline::load_training(cfg)?;
    let mut raw = pipeline::windows(cfg, &data, cfg.data.stride)?;
    raw.truncate(cfg.bench.windows);
    ctx.ensure_out()?;
    let b = &cfg.bench;
    eprintln!("timing {} iterations per path after {} warmup", b.iterations, b.warmup);
    let (r, rff_ns, ddpm_ns) = run_bench(&model, &teacher, &clf, &raw, b.warmup, b.iterations)?;

    let mut f = ctx.create("bench.csv")?;
    writeln!(f, "path,p50_ns,p95_ns,p99_ns")?;
    writeln!(f, "rff,{},{},{}", r.rff.p50, r.rff.p95, r.rff.p99)?;
    writeln!(f, "ddpm,{},{},{}", r.ddpm.p50, r.ddpm.p95, r.ddpm.p99)?;
    f.flush()?;
    let cdf = |ns: &[f64]| {
        let step = (ns.len() / 1000).max(1);
        ns.iter()
            .enumerate()
            .step_by(step)
            .map(|(i, &v)| ((i + 1) as f64 / ns.len() as f64, v))
            .collect::<Vec<_>>()
    };
    ctx.plot("latency_rff.csv", "quantile", "ns", cdf(&rff_ns))?;
    ctx.plot("latency_ddpm.csv", "quantile", "ns", cdf(&ddpm_ns))?;

    let mut body = String::new();
    writeln!(body, "host: {}", r.host).unwrap();
    writeln!(body, "iterations: {} timed, {} warmup, {} distinct windows", r.iterations, r.warmup, raw.len()).unwrap();
    writeln!(
        body,
        "rff (d={}, D={}): p50 {:.0} ns, p95 {:.0} ns, p99 {:.0} ns",
        clf.input_dim(),
        clf.projection.pairs(),
        r.rff.p50,
        r.rff.p95,
        r.rff.p99
    )
    .unwrap();
    writeln!(
        body,
        "ddpm profile ({} levels x {} draws): p50 {:.0} ns, p95 {:.0} ns, p99 {:.0} ns",
        teacher.levels.len(),
        teacher.draws,
        r.ddpm.p50,
        r.ddpm.p95,
        r.ddpm.p99
    )
    .unwrap();
    writeln!(body, "speedup (ddpm p50 / rff p50): {:.1}x", r.speedup).unwrap();
    let verdict = if r.rff.p50 < 1e6 { "within" } else { "over" };
    writeln!(
        body,
        "rff p50 is {verdict} the 1 ms per-window budget (a desk target set by this tool, not a hardware deadline)"
    )
    .unwrap();
    ctx.report("bench_report.txt", "bench", &body)?;
    print!("{body}");
    Ok(())
}

/// `explain`: violation reports for raw windows of the configured stream.
pub fn explain_cmd(ctx: &Context, origin: Option<usize>) -> Result<()> {
    let cfg = &ctx.config;
    let data = pipeline::load_training(cfg)?;
    let kb = pipeline::load_kb(cfg, &data.stream.channel_names)?
        .ok_or_else(|| CliError::Usage("explain needs nesy.kb in the config".into()))?;
    ctx.ensure_out()?;
    let raw = pipeline::windows(cfg, &data, cfg.data.stride)?;
    let selected: Vec<&Window> = match origin {
        Some(o) => {
            let w = raw
                .iter()
                .find(|w| w.origin() == o)
                .ok_or_else(|| CliError::Usage(format!("no window starts at {o} (stride {})", cfg.data.stride)))?;
            vec![w]
        }
        None => raw.iter().collect(),
    };
    let mut text = String::new();
    let mut violated = 0;
    for w in &selected {
        let r = explain(&kb, w, cfg.nesy.cutoff);
        if origin.is_some() || !r.is_empty() {
            write!(text, "{r}").unwrap();
        }
        violated += usize::from(!r.is_empty());
    }
    fs::write(ctx.path("explain.txt"), &text)?;
    let mut body = String::new();
    writeln!(body, "windows: {}", selected.len()).unwrap();
    writeln!(body, "windows with violations: {violated}").unwrap();
    if let (Some(tags), None) = (&data.tags, origin) {
        let a = pipeline::explain_attribution(&kb, &raw, tags, cfg.nesy.cutoff, &pipeline::KB_COVERED);
        writeln!(body, "anomalous windows (covered kinds): {}", a.anomalous).unwrap();
        writeln!(body, "  with violations: {}", a.violated).unwrap();
        writeln!(body, "  naming the injected sensor: {} ({})", a.named, opt(a.rate())).unwrap();
        writeln!(body, "nominal windows with violations: {} of {}", a.false_alarms, a.nominal).unwrap();
    }
    ctx.report("explain_report.txt", "explain", &body)?;
    if origin.is_some() {
        print!("{text}");
    } else {
        print!("{body}");
    }
    Ok(())
}
