//! Streaming inference: a reader thread parses CSV rows into a bounded
//! channel (so a slow scorer blocks the reader instead of dropping rows),
//! and the scorer buffers `L` rows and emits one decision per stride.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread;

use nsad_core::rff::{DistilledClassifier, NoProbe};

use crate::error::{CliError, Result};
use crate::pipeline::normalize_into;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferOptions {
    pub stride: usize,
    /// Probability above which a window is flagged.
    pub threshold: f64,
    /// Rows the reader may run ahead of the scorer.
    pub capacity: usize,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            stride: 16,
            threshold: 0.5,
            capacity: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InferSummary {
    pub rows: usize,
    pub windows: usize,
    pub malformed: usize,
}

enum Msg {
    Header(Vec<String>),
    Row { line: u64, values: std::result::Result<Vec<f64>, String> },
    Fail(String),
}

fn parse_row(record: &csv::StringRecord, width: usize) -> std::result::Result<Vec<f64>, String> {
    if record.len() != width {
        return Err(format!("expected {width} fields, found {}", record.len()));
    }
    record
        .iter()
        .skip(1)
        .map(|cell| match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("`{cell}` is not a finite number")),
        })
        .collect()
}

fn read_rows<R: Read>(input: R, tx: std::sync::mpsc::SyncSender<Msg>) {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut record = csv::StringRecord::new();
    let mut width = None;
    loop {
        let msg = match reader.read_record(&mut record) {
            Ok(false) => return,
            Ok(true) => match width {
                None => {
                    width = Some(record.len());
                    Msg::Header(record.iter().map(str::to_string).collect())
                }
                Some(w) => Msg::Row {
                    line: record.position().map_or(0, |p| p.line()),
                    values: parse_row(&record, w),
                },
            },
            Err(e) => Msg::Fail(e.to_string()),
        };
        let stop = matches!(msg, Msg::Fail(_));
        // the scorer hung up (e.g. closed output): nothing left to do
        if tx.send(msg).is_err() || stop {
            return;
        }
    }
}

/// Channel count and window length the classifier expects.
fn geometry(clf: &DistilledClassifier, header_channels: usize) -> Result<(usize, usize)> {
    let d = clf.input_dim();
    let (c, l) = match &clf.normalization {
        Some(n) => (n.channels, n.length),
        None if header_channels > 0 && d.is_multiple_of(header_channels) => (header_channels, d / header_channels),
        None => (0, 0),
    };
    if c != header_channels {
        return Err(CliError::Data(format!(
            "input has {header_channels} channel column(s), classifier expects {c} (window of {d} values)"
        )));
    }
    Ok((c, l))
}

fn score_rows<W: Write>(
    clf: &DistilledClassifier,
    rx: Receiver<Msg>,
    mut out: W,
    opts: &InferOptions,
    warn: &mut dyn FnMut(String),
) -> Result<InferSummary> {
    let mut summary = InferSummary::default();
    let Ok(first) = rx.recv() else { return Ok(summary) };
    let (channels, length) = match first {
        Msg::Header(h) => geometry(clf, h.len().saturating_sub(1))?,
        Msg::Fail(e) => return Err(CliError::Data(format!("input: {e}"))),
        Msg::Row { .. } => unreachable!("first record is the header"),
    };
    let mut buf: VecDeque<Vec<f64>> = VecDeque::with_capacity(length + 1);
    // stream index of buf[0]
    let mut start = 0usize;
    let (mut raw, mut x, mut scratch) = (vec![0.0; channels * length], Vec::new(), Vec::new());
    for msg in rx {
        let (line, values) = match msg {
            Msg::Row { line, values } => (line, values),
            Msg::Fail(e) => return Err(CliError::Data(format!("input: {e}"))),
            Msg::Header(_) => unreachable!("only one header"),
        };
        let index = summary.rows;
        summary.rows += 1;
        let row = match values {
            Ok(v) => v,
            Err(e) => {
                summary.malformed += 1;
                warn(format!("line {line}: {e}; skipping windows that contain it"));
                buf.clear();
                start = index + 1;
                continue;
            }
        };
        buf.push_back(row);
        if buf.len() > length {
            buf.pop_front();
            start += 1;
        }
        if buf.len() < length || !start.is_multiple_of(opts.stride) {
            continue;
        }
        for (r, row) in buf.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                raw[c * length + r] = v;
            }
        }
        normalize_into(clf, &raw, length, &mut x);
        let p = clf.predict_prob_probed(&x, &mut scratch, &mut NoProbe)?;
        writeln!(out, "{start},{p},{}", u8::from(p > opts.threshold)).and_then(|_| out.flush())?;
        summary.windows += 1;
    }
    Ok(summary)
}

/// Runs the two-stage pipeline over `input`, writing
/// `origin,probability,decision` lines to `out`. Malformed rows are passed
/// to `warn` with their line number.
pub fn run_infer<R, W>(
    clf: &DistilledClassifier,
    input: R,
    out: W,
    opts: &InferOptions,
    warn: &mut dyn FnMut(String),
) -> Result<InferSummary>
where
    R: Read + Send + 'static,
    W: Write,
{
    if opts.stride == 0 || opts.capacity == 0 {
        return Err(CliError::Usage("stride and capacity must be positive".into()));
    }
    let (tx, rx) = sync_channel(opts.capacity);
    let reader = thread::spawn(move || read_rows(input, tx));
    let result = score_rows(clf, rx, out, opts, warn);
    // the receiver is gone, so a blocked reader wakes up and exits
    reader.join().map_err(|_| CliError::Data("input reader panicked".into()))?;
    result
}
