use std::io::{Read, Write};

use super::{AnomalyKind, AnomalyTag, Result, SignalError, Stream};

/// Writes `timestamp,<channel>...` rows. Values use the shortest decimal
/// form that parses back to the same f64.
pub fn write_stream_csv<W: Write>(w: W, stream: &Stream) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["timestamp".to_string()];
    header.extend(stream.channel_names.iter().cloned());
    out.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..stream.len() {
        row.clear();
        row.push(stream.timestamps[i].clone());
        row.extend(stream.data.iter().map(|ch| ch[i].to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a stream CSV: header row, `timestamp` first, one column per
/// channel. Rejects ragged rows and non-finite or non-numeric cells.
pub fn read_stream_csv<R: Read>(r: R) -> Result<Stream> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let header = reader.headers()?.clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(SignalError::Empty);
    }
    if header.len() < 2 {
        return Err(SignalError::BadCell {
            line: 1,
            column: header.get(0).unwrap_or("").to_string(),
            message: "expected a timestamp column followed by at least one channel".into(),
        });
    }
    let channel_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut timestamps = Vec::new();
    let mut data = vec![Vec::new(); channel_names.len()];
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(SignalError::RaggedRow {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        timestamps.push(record[0].to_string());
        for (c, cell) in record.iter().skip(1).enumerate() {
            data[c].push(parse_cell(cell, line, &channel_names[c])?);
        }
    }
    if timestamps.is_empty() {
        return Err(SignalError::Empty);
    }
    Ok(Stream {
        channel_names,
        timestamps,
        data,
    })
}

pub(crate) fn parse_cell(cell: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| SignalError::BadCell {
        line,
        column: column.to_string(),
        message: format!("`{cell}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(SignalError::BadCell {
            line,
            column: column.to_string(),
            message: format!("`{cell}` is not finite"),
        });
    }
    Ok(v)
}

/// Tag sidecar: `kind,channels,start,end` with channel names joined by `;`.
pub fn write_tags_csv<W: Write>(w: W, tags: &[AnomalyTag], channel_names: &[String]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["kind", "channels", "start", "end"])?;
    for t in tags {
        let chans: Vec<&str> = t.channels.iter().map(|&c| channel_names[c].as_str()).collect();
        out.write_record([
            t.kind.as_str().to_string(),
            chans.join(";"),
            t.start.to_string(),
            t.end.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_tags_csv<R: Read>(r: R, channel_names: &[String]) -> Result<Vec<AnomalyTag>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let mut tags = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |column: &str, message: String| SignalError::BadCell {
            line,
            column: column.to_string(),
            message,
        };
        if record.len() != 4 {
            return Err(SignalError::RaggedRow {
                line,
                expected: 4,
                found: record.len(),
            });
        }
        let kind: AnomalyKind = record[0].parse().map_err(|m| bad("kind", m))?;
        let channels = record[1]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|name| {
                channel_names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| bad("channels", format!("unknown channel `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let index = |col: usize, name: &str| {
            record[col]
                .parse::<usize>()
                .map_err(|_| bad(name, format!("`{}` is not a sample index", &record[col])))
        };
        let (start, end) = (index(2, "start")?, index(3, "end")?);
        if end < start {
            return Err(bad("end", format!("end {end} precedes start {start}")));
        }
        tags.push(AnomalyTag {
            kind,
            channels,
            start,
            end,
        });
    }
    Ok(tags)
}
