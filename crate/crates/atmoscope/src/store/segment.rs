//! Segment file format.
//!
//! ```text
//! +-----------------------------------------------------------+
//! | header: 64 bytes, ASCII, space padded, '\n' terminated     |
//! |   "ATMOSEG1 <experiment> <YYYY-MM-DD> <record_count>"      |
//! +-----------------------------------------------------------+
//! | gzip stream (1F 8B ...) of newline-delimited JSON records  |
//! | sorted by (time, record_id)                                |
//! +-----------------------------------------------------------+
//! ```
//!
//! The CRC-32 of the gzip payload lives in the manifest, not in the file.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use atmoscope_core::{Date, ExperimentId, ObservationRecord};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::StoreError;
use crate::wire;

pub const MAGIC: &str = "ATMOSEG1";
pub const HEADER_LEN: usize = 64;
pub const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentHeader {
    pub experiment: ExperimentId,
    pub day: Date,
    pub record_count: u64,
}

impl SegmentHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let text = format!("{MAGIC} {} {} {}", self.experiment, self.day, self.record_count);
        debug_assert!(text.len() < HEADER_LEN);
        let mut out = [b' '; HEADER_LEN];
        out[..text.len()].copy_from_slice(text.as_bytes());
        out[HEADER_LEN - 1] = b'\n';
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<SegmentHeader> {
        if bytes.len() < HEADER_LEN || bytes[HEADER_LEN - 1] != b'\n' {
            return None;
        }
        let text = std::str::from_utf8(&bytes[..HEADER_LEN - 1]).ok()?;
        let mut parts = text.split_ascii_whitespace();
        if parts.next()? != MAGIC {
            return None;
        }
        let experiment = ExperimentId::new(parts.next()?).ok()?;
        let day = Date::parse(parts.next()?).ok()?;
        let record_count = parts.next()?.parse().ok()?;
        parts.next().is_none().then_some(SegmentHeader { experiment, day, record_count })
    }
}

/// Encoded segment ready to be written.
pub struct EncodedSegment {
    pub bytes: Vec<u8>,
    pub crc32: u32,
    pub compressed_bytes: u64,
}

pub fn encode(header: &SegmentHeader, records: &[ObservationRecord]) -> EncodedSegment {
    let mut gz = GzEncoder::new(Vec::new(), Compression::default());
    for r in records {
        serde_json::to_writer(&mut gz, &wire::RecordJson(r)).expect("records serialize");
        gz.write_all(b"\n").expect("in-memory write");
    }
    let payload = gz.finish().expect("in-memory write");
    let mut bytes = Vec::with_capacity(HEADER_LEN + payload.len());
    bytes.extend_from_slice(&header.encode());
    bytes.extend_from_slice(&payload);
    EncodedSegment {
        crc32: crc32fast::hash(&payload),
        compressed_bytes: payload.len() as u64,
        bytes,
    }
}

/// CRC-32 of the payload and its length, reading the file once.
pub fn checksum_file(path: &Path) -> std::io::Result<Option<(u32, u64)>> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Ok(None);
    }
    let payload = &bytes[HEADER_LEN..];
    Ok(Some((crc32fast::hash(payload), payload.len() as u64)))
}

/// Reads, verifies and decodes a whole segment.
pub fn read(path: &Path, expected_crc: u32, experiment: &ExperimentId) -> Result<(SegmentHeader, Vec<ObservationRecord>), StoreError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| StoreError::io(path, e))?;
    let header = SegmentHeader::decode(&bytes).ok_or_else(|| StoreError::Corrupt {
        path: path.to_path_buf(),
        reason: "bad segment header".into(),
    })?;
    let payload = &bytes[HEADER_LEN..];
    if crc32fast::hash(payload) != expected_crc {
        return Err(StoreError::Checksum { files: vec![path.to_path_buf()] });
    }
    if !payload.starts_with(&GZIP_MAGIC) {
        return Err(StoreError::Corrupt {
            path: path.to_path_buf(),
            reason: "payload is not gzip".into(),
        });
    }
    let mut records = Vec::with_capacity(header.record_count as usize);
    let reader = BufReader::new(GzDecoder::new(payload));
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| StoreError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let rec = wire::parse_record(&line, Some(experiment)).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        records.push(rec);
    }
    if records.len() as u64 != header.record_count {
        return Err(StoreError::Corrupt {
            path: path.to_path_buf(),
            reason: format!("header says {} records, payload has {}", header.record_count, records.len()),
        });
    }
    Ok((header, records))
}
