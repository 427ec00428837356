//! Line-delimited sweep records.
//!
//! Each line is a JSON object ending in a `checksum` field: the SHA-256 (hex)
//! of the line with that field removed, i.e. of everything before
//! `,"checksum":` followed by `}`.

use crate::charlib::{HammerResult, RetentionResult, TrcdResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, Write};
use thiserror::Error;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

const CHECKSUM_KEY: &str = ",\"checksum\":\"";

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("line {line}: unsupported record schema version {found}")]
    Version { line: usize, found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Result carried by one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// Worst-case data patterns chosen at nominal VPP.
    Wcdp { row: u32, rowhammer: Option<u8>, retention: Option<u8> },
    Hammer(HammerResult),
    Trcd(TrcdResult),
    Retention(RetentionResult),
    /// A row that could not be measured.
    Skipped { row: u32, test: String, reason: String },
}

impl Payload {
    pub fn row(&self) -> u32 {
        match self {
            Payload::Wcdp { row, .. } | Payload::Skipped { row, .. } => *row,
            Payload::Hammer(h) => h.row,
            Payload::Trcd(t) => t.row,
            Payload::Retention(r) => r.row,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub schema_version: u32,
    pub profile_id: String,
    pub seed: u64,
    pub vpp: f64,
    pub bank: u32,
    pub result: Payload,
}

impl SweepRecord {
    pub fn new(profile_id: &str, seed: u64, vpp: f64, bank: u32, result: Payload) -> Self {
        Self { schema_version: RECORD_SCHEMA_VERSION, profile_id: profile_id.to_string(), seed, vpp, bank, result }
    }

    /// Serialized line including the checksum, without the trailing newline.
    pub fn to_line(&self) -> Result<String, RecordError> {
        let body = serde_json::to_string(self)?;
        let digest = hex(&Sha256::digest(body.as_bytes()));
        Ok(format!("{}{CHECKSUM_KEY}{digest}\"}}", &body[..body.len() - 1]))
    }

    /// Parse one line; `line` is the 1-based line number used in diagnostics.
    pub fn from_line(text: &str, line: usize) -> Result<Self, RecordError> {
        let corrupt = |reason: &str| RecordError::Corrupt { line, reason: reason.to_string() };
        let pos = text.rfind(CHECKSUM_KEY).ok_or_else(|| corrupt("missing checksum"))?;
        let tail = &text[pos + CHECKSUM_KEY.len()..];
        let claimed = tail.strip_suffix("\"}").ok_or_else(|| corrupt("malformed checksum field"))?;
        let body = format!("{}}}", &text[..pos]);
        if hex(&Sha256::digest(body.as_bytes())) != claimed {
            return Err(corrupt("checksum mismatch"));
        }
        let rec: SweepRecord =
            serde_json::from_str(&body).map_err(|e| RecordError::Corrupt { line, reason: e.to_string() })?;
        if rec.schema_version != RECORD_SCHEMA_VERSION {
            return Err(RecordError::Version { line, found: rec.schema_version });
        }
        Ok(rec)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_records<W: Write>(mut out: W, records: &[SweepRecord]) -> Result<(), RecordError> {
    for r in records {
        writeln!(out, "{}", r.to_line()?)?;
    }
    Ok(())
}

/// Read every record, stopping at the first bad line.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<SweepRecord>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(SweepRecord::from_line(&line, i + 1)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charlib::RetentionPoint;
    use proptest::prelude::*;

    fn sample() -> Vec<SweepRecord> {
        vec![
            SweepRecord::new("A0", 7, 2.5, 0, Payload::Wcdp { row: 3, rowhammer: Some(2), retention: None }),
            SweepRecord::new(
                "A0",
                7,
                1.4,
                0,
                Payload::Hammer(HammerResult {
                    row: 3,
                    vpp: 1.4,
                    wcdp: 2,
                    hc_first: Some(42_187),
                    ber: 1.0 / 3.0,
                    ber_iterations: vec![0.1, 1.0 / 3.0],
                    bracket: (Some(42_100), None),
                }),
            ),
            SweepRecord::new(
                "C1",
                7,
                1.5,
                1,
                Payload::Retention(RetentionResult {
                    row: 9,
                    vpp: 1.5,
                    pattern: 0,
                    points: vec![RetentionPoint { window_s: 0.064, ber: 4.0 / 8192.0, words: [124, 4, 0] }],
                }),
            ),
            SweepRecord::new("B2", 7, 2.0, 0, Payload::Skipped { row: 0, test: "rowhammer".into(), reason: "edge row".into() }),
        ]
    }

    #[test]
    fn write_read_write_is_identical() {
        let mut a = Vec::new();
        write_records(&mut a, &sample()).unwrap();
        let back = read_records(&a[..]).unwrap();
        assert_eq!(back, sample());
        let mut b = Vec::new();
        write_records(&mut b, &back).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tampering_is_reported_with_line() {
        let mut a = Vec::new();
        write_records(&mut a, &sample()).unwrap();
        let text = String::from_utf8(a).unwrap().replace("42187", "42188");
        match read_records(text.as_bytes()) {
            Err(RecordError::Corrupt { line, reason }) => {
                assert_eq!(line, 2);
                assert_eq!(reason, "checksum mismatch");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(SweepRecord::from_line("{\"a\":1}", 4), Err(RecordError::Corrupt { line: 4, .. })));
    }

    proptest! {
        #[test]
        fn floats_roundtrip_bytewise(vpp in 1.0f64..2.6, ber in 0.0f64..1.0, seed in any::<u64>()) {
            let r = SweepRecord::new("X", seed, vpp, 0, Payload::Trcd(TrcdResult { row: 1, vpp, trcd_min_ns: ber * 30.0, unbounded_below: false }));
            let line = r.to_line().unwrap();
            let back = SweepRecord::from_line(&line, 1).unwrap();
            prop_assert_eq!(&back, &r);
            prop_assert_eq!(back.to_line().unwrap(), line);
        }
    }
}
