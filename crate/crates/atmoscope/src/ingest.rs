//! Record file parsers (jsonl and `;`-delimited text, optionally gzipped) and
//! their writer counterparts.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Read, Write};

use atmoscope_core::record::is_token;
use atmoscope_core::time::day_of;
use atmoscope_core::{Date, ExperimentId, GeoPoint, ObservationRecord, Timestamp};
use flate2::read::MultiGzDecoder;

use crate::store::segment::GZIP_MAGIC;
use crate::wire;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// Abort on the first malformed line.
    Strict,
    /// Skip malformed lines and count them.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<ObservationRecord>,
    pub skipped: usize,
    /// Lenient mode only: one entry per skipped line.
    pub errors: Vec<LineError>,
}

/// Wraps `reader`, transparently decompressing when it starts with the gzip
/// magic bytes.
pub fn maybe_gzip<'a, R: Read + 'a>(reader: R) -> io::Result<Box<dyn BufRead + 'a>> {
    let mut buf = BufReader::new(reader);
    let head = buf.fill_buf()?;
    if head.starts_with(&GZIP_MAGIC) {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(buf))))
    } else {
        Ok(Box::new(buf))
    }
}

fn drive<R: Read>(
    reader: R,
    mode: ParseMode,
    mut parse_line: impl FnMut(&str) -> Result<Option<ObservationRecord>, String>,
) -> Result<ParseOutcome, IngestError> {
    let mut out = ParseOutcome::default();
    for (i, line) in maybe_gzip(reader)?.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        match parse_line(line.trim_end_matches('\r')) {
            Ok(Some(rec)) => out.records.push(rec),
            Ok(None) => {}
            Err(reason) => match mode {
                ParseMode::Strict => return Err(IngestError::Malformed { line: lineno, reason }),
                ParseMode::Lenient => {
                    out.skipped += 1;
                    out.errors.push(LineError { line: lineno, reason });
                }
            },
        }
    }
    Ok(out)
}

/// Newline-delimited JSON in the REST record schema. Blank lines are ignored.
pub fn parse_jsonl<R: Read>(reader: R, experiment: &ExperimentId, mode: ParseMode) -> Result<ParseOutcome, IngestError> {
    drive(reader, mode, |line| {
        if line.trim().is_empty() {
            return Ok(None);
        }
        wire::parse_record(line, Some(experiment)).map(Some).map_err(|e| e.to_string())
    })
}

/// Comma-separated observable names naming the columns after
/// `time;lat;lon;orbit`.
pub fn parse_schema(text: &str) -> Result<Vec<String>, IngestError> {
    let cols: Vec<String> = text.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if let Some(bad) = cols.iter().find(|c| !is_token(c)) {
        return Err(IngestError::Schema(format!("bad observable name {bad:?}")));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = cols.iter().find(|c| !seen.insert(c.as_str())) {
        return Err(IngestError::Schema(format!("duplicate column {dup:?}")));
    }
    Ok(cols)
}

/// `time;lat;lon;orbit;<observables...>` per line. Lines starting with `#`
/// are comments; a leading line whose first field is literally `time` is a
/// header. Delimited files carry no profile; the record id is the record's
/// epoch milliseconds.
pub fn parse_delimited<R: Read>(
    reader: R,
    schema: &[String],
    experiment: &ExperimentId,
    mode: ParseMode,
) -> Result<ParseOutcome, IngestError> {
    let expected = 4 + schema.len();
    let mut first_data_line = true;
    drive(reader, mode, |line| {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            return Ok(None);
        }
        let cols: Vec<&str> = trimmed.split(';').map(str::trim).collect();
        if std::mem::take(&mut first_data_line) && cols[0].eq_ignore_ascii_case("time") {
            return Ok(None);
        }
        if cols.len() != expected {
            return Err(format!("expected {expected} columns, found {}", cols.len()));
        }
        let num = |i: usize, what: &str| -> Result<f64, String> {
            cols[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("column {} ({what}): cannot parse {:?} as a finite number", i + 1, cols[i]))
        };
        let time = Timestamp::parse_iso8601(cols[0]).map_err(|e| format!("column 1 (time): {e}"))?;
        let geo = GeoPoint::new(num(1, "lat")?, num(2, "lon")?).map_err(|e| e.to_string())?;
        let orbit: u32 = cols[3]
            .parse()
            .map_err(|_| format!("column 4 (orbit): cannot parse {:?} as an unsigned integer", cols[3]))?;
        let mut observables = BTreeMap::new();
        for (j, name) in schema.iter().enumerate() {
            observables.insert(name.clone(), num(4 + j, name)?);
        }
        Ok(Some(ObservationRecord {
            experiment: experiment.clone(),
            record_id: time.epoch_ms(),
            time,
            geo,
            orbit,
            observables,
            profile: None,
        }))
    })
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[ObservationRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, &wire::RecordJson(r))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Writer counterpart of [`parse_delimited`]; missing observables are an error.
pub fn write_delimited<W: Write>(mut w: W, records: &[ObservationRecord], schema: &[String]) -> io::Result<()> {
    writeln!(w, "# time;lat;lon;orbit;{}", schema.join(";"))?;
    for r in records {
        write!(w, "{};{};{};{}", r.time.to_iso8601(), r.geo.lat(), r.geo.lon(), r.orbit)?;
        for name in schema {
            let v = r.observables.get(name).ok_or_else(|| {
                io::Error::new(io::ErrorKind::InvalidData, format!("record {} lacks {name}", r.record_id))
            })?;
            write!(w, ";{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn group_by_day(records: Vec<ObservationRecord>) -> BTreeMap<Date, Vec<ObservationRecord>> {
    let mut out: BTreeMap<Date, Vec<ObservationRecord>> = BTreeMap::new();
    for r in records {
        out.entry(day_of(r.time)).or_default().push(r);
    }
    out
}
