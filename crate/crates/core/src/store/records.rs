use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::{IqSignal, ReceiverProfile, TransmitterProfile};

pub const RECORD_MAGIC: &[u8; 4] = b"RXA1";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.bin";
/// Fixed header bytes of one record before its samples.
pub const RECORD_HEADER_BYTES: usize = 4 + 4 + 2 + 4;

/// One capture with its provenance tags. Samples are interleaved I,Q.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub tx: u32,
    pub rx: u32,
    pub day: u16,
    pub iq: Vec<f32>,
}

impl Record {
    pub fn from_signal(tx: u32, rx: u32, day: u16, s: &IqSignal) -> Self {
        Self { tx, rx, day, iq: s.to_interleaved_f32() }
    }

    pub fn len(&self) -> usize {
        self.iq.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.iq.is_empty()
    }

    pub fn to_signal(&self, sample_rate_hz: f64) -> Result<IqSignal> {
        let s = self.iq.chunks(2).map(|p| Complex64::new(f64::from(p[0]), f64::from(p[1]))).collect();
        IqSignal::new(s, sample_rate_hz)
    }

    pub fn encoded_len(&self) -> usize {
        RECORD_HEADER_BYTES + self.iq.len() * 4
    }
}

/// A device table entry: a simulated profile, or `"external"` for real captures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Device<P> {
    Profile(P),
    External(ExternalTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExternalTag {
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub sample_rate_hz: f64,
    pub record_len: usize,
    pub transmitters: BTreeMap<u32, Device<TransmitterProfile>>,
    pub receivers: BTreeMap<u32, Device<ReceiverProfile>>,
    pub days: Vec<u16>,
    pub record_count: usize,
    /// SHA-256 of the record file, hex.
    pub digest: String,
    /// Free-form generation details (seed, per-cell count, roles).
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

pub fn encode_records(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(4 + records.iter().map(Record::encoded_len).sum::<usize>());
    out.extend_from_slice(RECORD_MAGIC);
    for r in records {
        if r.iq.len() % 2 != 0 {
            return Err(Error::Dataset("record with an odd number of floats".into()));
        }
        if let Some(v) = r.iq.iter().find(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!("non-finite sample {v} in record tx={} rx={}", r.tx, r.rx)));
        }
        out.extend_from_slice(&r.tx.to_le_bytes());
        out.extend_from_slice(&r.rx.to_le_bytes());
        out.extend_from_slice(&r.day.to_le_bytes());
        out.extend_from_slice(&(r.len() as u32).to_le_bytes());
        for v in &r.iq {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| {
        Error::Integrity(format!("record file truncated at byte {} (needed {n} more)", *pos))
    })?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() < 4 || &bytes[..4] != RECORD_MAGIC {
        return Err(Error::Integrity("record file does not start with RXA1".into()));
    }
    let mut pos = 4;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let h = take(bytes, &mut pos, RECORD_HEADER_BYTES)?;
        let tx = u32::from_le_bytes(h[0..4].try_into().expect("4 bytes"));
        let rx = u32::from_le_bytes(h[4..8].try_into().expect("4 bytes"));
        let day = u16::from_le_bytes(h[8..10].try_into().expect("2 bytes"));
        let n = u32::from_le_bytes(h[10..14].try_into().expect("4 bytes")) as usize;
        let body = take(bytes, &mut pos, n.checked_mul(8).ok_or_else(|| Error::Integrity("record length overflow".into()))?)?;
        let iq: Vec<f32> = body.chunks(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if iq.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrity(format!("non-finite sample in record {}", out.len())));
        }
        out.push(Record { tx, rx, day, iq });
    }
    Ok(out)
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `manifest.json` and `records.bin` into `dir`, filling in the
/// record count and digest.
pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, records: &[Record]) -> Result<DatasetManifest> {
    let bytes = encode_records(records)?;
    let mut m = manifest.clone();
    m.format_version = FORMAT_VERSION;
    m.record_count = records.len();
    m.digest = digest_bytes(&bytes);
    m.days = records.iter().map(|r| r.day).collect::<BTreeSet<_>>().into_iter().collect();
    validate(&m, records)?;
    fs::create_dir_all(dir)?;
    fs::File::create(dir.join(RECORDS_FILE))?.write_all(&bytes)?;
    let json = serde_json::to_string_pretty(&m)?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(m)
}

fn validate(m: &DatasetManifest, records: &[Record]) -> Result<()> {
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Integrity(format!("unsupported format version {}", m.format_version)));
    }
    if m.record_count != records.len() {
        return Err(Error::Integrity(format!(
            "manifest lists {} records, file has {}",
            m.record_count,
            records.len()
        )));
    }
    for (i, r) in records.iter().enumerate() {
        if r.len() != m.record_len {
            return Err(Error::Integrity(format!("record {i} has {} samples, expected {}", r.len(), m.record_len)));
        }
        if !m.transmitters.contains_key(&r.tx) || !m.receivers.contains_key(&r.rx) {
            return Err(Error::Integrity(format!("record {i} references unknown device tx={} rx={}", r.tx, r.rx)));
        }
        if !m.days.contains(&r.day) {
            return Err(Error::Integrity(format!("record {i} has unlisted day {}", r.day)));
        }
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Record>)> {
    let m: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let mut bytes = Vec::new();
    fs::File::open(dir.join(RECORDS_FILE))?.read_to_end(&mut bytes)?;
    if digest_bytes(&bytes) != m.digest {
        return Err(Error::Integrity("record file digest does not match manifest".into()));
    }
    let records = decode_records(&bytes)?;
    validate(&m, &records)?;
    Ok((m, records))
}
