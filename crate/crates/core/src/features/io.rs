//! Binary feature files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "VCF1" | u32 Q | u32 T | f64 frame_period_ms
//! Q·T f32 MCEP values, dimension-major
//! T f32 log F0 values
//! T u8 voicing flags (0 or 1)
//! u32 blob length | aperiodicity reference blob
//! ```
//!
//! Values are stored as `f32`; a sequence whose values are already
//! `f32`-representable round-trips bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VCF1";

const HEADER_LEN: usize = 4 + 4 + 4 + 8;

pub fn encode(x: &FeatureSequence) -> Vec<u8> {
    let (q, t) = (x.q(), x.frames());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * q * t + 5 * t + 4 + x.ap_ref.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(q as u32).to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&x.frame_period_ms.to_le_bytes());
    for v in x.mcep() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for v in x.log_f0() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.extend(x.voiced().iter().map(|&v| v as u8));
    out.extend_from_slice(&(x.ap_ref.len() as u32).to_le_bytes());
    out.extend_from_slice(&x.ap_ref);
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn f32s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect()
}

pub fn decode(bytes: &[u8]) -> Result<FeatureSequence> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let q = u32_at(bytes, 4) as usize;
    let t = u32_at(bytes, 8) as usize;
    let period = f64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    if q == 0 || t == 0 {
        return Err(Error::MalformedHeader(format!("dimensions {q}x{t}")));
    }
    if !period.is_finite() || period <= 0.0 {
        return Err(Error::MalformedHeader(format!("frame period {period}")));
    }
    let fixed = HEADER_LEN + 4 * q * t + 4 * t + t + 4;
    if bytes.len() < fixed {
        return Err(Error::PayloadSize {
            expected: fixed,
            found: bytes.len(),
        });
    }
    let blob_len = u32_at(bytes, fixed - 4) as usize;
    if bytes.len() != fixed + blob_len {
        return Err(Error::PayloadSize {
            expected: fixed + blob_len,
            found: bytes.len(),
        });
    }
    let mut at = HEADER_LEN;
    let mcep = f32s(&bytes[at..at + 4 * q * t]);
    at += 4 * q * t;
    let log_f0 = f32s(&bytes[at..at + 4 * t]);
    at += 4 * t;
    let mut voiced = Vec::with_capacity(t);
    for (i, &b) in bytes[at..at + t].iter().enumerate() {
        match b {
            0 => voiced.push(false),
            1 => voiced.push(true),
            _ => {
                return Err(Error::MalformedHeader(format!(
                    "voicing flag {b} at frame {i}"
                )))
            }
        }
    }
    if let Some(i) = mcep.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("mcep[{i}]")));
    }
    if let Some(i) = log_f0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("log_f0[{i}]")));
    }
    let ap_ref = bytes[fixed..].to_vec();
    FeatureSequence::new(q, t, mcep, log_f0, voiced, ap_ref, period)
}

pub fn save_features(x: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(x))?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    decode(&fs::read(path)?)
}

/// Sidecar metadata stored next to a feature file as `<name>.meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<usize>,
    pub provenance: String,
}

fn meta_path(features: &Path) -> PathBuf {
    features.with_extension("meta.json")
}

pub fn write_meta(features: impl AsRef<Path>, meta: &FeatureMeta) -> Result<()> {
    fs::write(meta_path(features.as_ref()), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

pub fn read_meta(features: impl AsRef<Path>) -> Result<FeatureMeta> {
    Ok(serde_json::from_slice(&fs::read(meta_path(features.as_ref()))?)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample() -> FeatureSequence {
        let q = 3;
        let t = 5;
        let mcep = (0..q * t).map(|i| (i as f32 * 0.37 - 2.0) as f64).collect();
        let f0 = vec![5.0, 5.25, 0.0, 4.75, 5.5];
        let voiced = vec![true, true, false, true, true];
        FeatureSequence::new(q, t, mcep, f0, voiced, b"ap:blob".to_vec(), 5.0).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.vcf");
        let x = sample();
        save_features(&x, &path).unwrap();
        let y = load_features(&path).unwrap();
        assert_eq!(x, y);
        assert_eq!(encode(&y), fs::read(&path).unwrap());
    }

    #[test]
    fn truncated_file_reports_payload_size() {
        let bytes = encode(&sample());
        for cut in [bytes.len() - 1, HEADER_LEN + 3] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::PayloadSize { .. })));
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(decode(&longer), Err(Error::PayloadSize { .. })));
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = encode(&sample());
        bytes[1] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn malformed_header_and_non_finite_payload() {
        let mut bytes = encode(&sample());
        bytes[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode(&bytes[..10]), Err(Error::MalformedHeader(_))));

        let mut bytes = encode(&sample());
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::NonFinite(_))));
    }

    #[test]
    fn meta_sidecar_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("utt.vcf");
        let meta = FeatureMeta {
            speaker: "spk1".into(),
            domain: Some(1),
            provenance: "synthetic".into(),
        };
        write_meta(&path, &meta).unwrap();
        assert!(dir.path().join("utt.meta.json").exists());
        assert_eq!(read_meta(&path).unwrap(), meta);
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity_on_f32_values(
            q in 1usize..4,
            t in 1usize..8,
            seed in prop::collection::vec(-1.0e3f32..1.0e3, 40),
            blob in prop::collection::vec(any::<u8>(), 0..16),
        ) {
            let mcep: Vec<f64> = (0..q * t).map(|i| seed[i % seed.len()] as f64).collect();
            let f0: Vec<f64> = (0..t).map(|i| seed[(i + 7) % seed.len()] as f64).collect();
            let voiced: Vec<bool> = (0..t).map(|i| i % 3 != 0).collect();
            let x = FeatureSequence::new(q, t, mcep, f0, voiced, blob, 5.0).unwrap();
            prop_assert_eq!(decode(&encode(&x)).unwrap(), x);
        }
    }
}
