//! Acoustic feature sequences, speaker statistics, and feature files.

mod io;
mod stats;
mod synth;

use rand::Rng;

use crate::error::{Error, Result};

pub use io::{decode, encode, load_features, read_meta, save_features, write_meta, FeatureMeta, MAGIC};
pub use stats::{
    compute_speaker_stats, convert_log_f0, denormalize, normalize, SpeakerStats, EPS_STD,
};
pub use synth::{synth_corpus, DomainTransform, Latent, SynthConfig, SynthCorpus};

/// Default MCEP dimensionality.
pub const DEFAULT_Q: usize = 34;

/// Training segment length in frames.
pub const SEGMENT_LEN: usize = 128;

/// Value stored in `log_f0` for unvoiced frames; the voicing mask is
/// authoritative.
pub const UNVOICED: f64 = 0.0;

/// A `Q × T` Mel-cepstral sequence with its log-F0 contour and an opaque
/// aperiodicity reference.
///
/// `mcep` is dimension-major: entry `(d, t)` lives at `d * T + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    q: usize,
    t: usize,
    mcep: Vec<f64>,
    log_f0: Vec<f64>,
    voiced: Vec<bool>,
    /// Untouched aperiodicity payload or a reference to it.
    pub ap_ref: Vec<u8>,
    pub frame_period_ms: f64,
}

impl FeatureSequence {
    /// Builds a sequence, forcing unvoiced log-F0 entries to the sentinel.
    pub fn new(
        q: usize,
        t: usize,
        mcep: Vec<f64>,
        mut log_f0: Vec<f64>,
        voiced: Vec<bool>,
        ap_ref: Vec<u8>,
        frame_period_ms: f64,
    ) -> Result<Self> {
        if q == 0 || t == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature sequence needs Q >= 1 and T >= 1, got {q}x{t}"
            )));
        }
        if mcep.len() != q * t || log_f0.len() != t || voiced.len() != t {
            return Err(Error::Shape(format!(
                "feature sequence {q}x{t}: mcep {}, log_f0 {}, voicing {}",
                mcep.len(),
                log_f0.len(),
                voiced.len()
            )));
        }
        if let Some(i) = mcep.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("mcep[{i}]")));
        }
        for (i, (f, &v)) in log_f0.iter_mut().zip(&voiced).enumerate() {
            if !v {
                *f = UNVOICED;
            } else if !f.is_finite() {
                return Err(Error::NonFinite(format!("log_f0[{i}]")));
            }
        }
        if !frame_period_ms.is_finite() || frame_period_ms <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "frame period must be positive, got {frame_period_ms}"
            )));
        }
        Ok(Self {
            q,
            t,
            mcep,
            log_f0,
            voiced,
            ap_ref,
            frame_period_ms,
        })
    }

    /// A sequence with only MCEPs; every frame unvoiced.
    pub fn from_mcep(q: usize, t: usize, mcep: Vec<f64>) -> Result<Self> {
        Self::new(q, t, mcep, vec![UNVOICED; t], vec![false; t], Vec::new(), 5.0)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    pub fn mcep(&self) -> &[f64] {
        &self.mcep
    }

    pub fn log_f0(&self) -> &[f64] {
        &self.log_f0
    }

    pub fn voiced(&self) -> &[bool] {
        &self.voiced
    }

    pub fn mcep_at(&self, d: usize, t: usize) -> f64 {
        self.mcep[d * self.t + t]
    }

    /// One dimension's trajectory over time.
    pub fn dim(&self, d: usize) -> &[f64] {
        &self.mcep[d * self.t..(d + 1) * self.t]
    }

    /// One frame as a `Q` vector.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        (0..self.q).map(|d| self.mcep[d * self.t + t]).collect()
    }

    /// Replaces the MCEPs, keeping shape and side channels.
    pub fn with_mcep(&self, mcep: Vec<f64>) -> Result<Self> {
        Self::new(
            self.q,
            self.t,
            mcep,
            self.log_f0.clone(),
            self.voiced.clone(),
            self.ap_ref.clone(),
            self.frame_period_ms,
        )
    }

    /// Replaces the log-F0 contour, keeping the voicing mask.
    pub fn with_log_f0(&self, log_f0: Vec<f64>) -> Result<Self> {
        Self::new(
            self.q,
            self.t,
            self.mcep.clone(),
            log_f0,
            self.voiced.clone(),
            self.ap_ref.clone(),
            self.frame_period_ms,
        )
    }

    /// Frames `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.t || len == 0 {
            return Err(Error::TooShort {
                len: self.t,
                required: start + len,
            });
        }
        let mut mcep = Vec::with_capacity(self.q * len);
        for d in 0..self.q {
            mcep.extend_from_slice(&self.dim(d)[start..start + len]);
        }
        Self::new(
            self.q,
            len,
            mcep,
            self.log_f0[start..start + len].to_vec(),
            self.voiced[start..start + len].to_vec(),
            self.ap_ref.clone(),
            self.frame_period_ms,
        )
    }
}

/// Random contiguous window of `length` frames, offset uniform over every
/// valid start.
pub fn crop_segment<R: Rng + ?Sized>(
    x: &FeatureSequence,
    length: usize,
    rng: &mut R,
) -> Result<FeatureSequence> {
    if x.frames() < length {
        return Err(Error::TooShort {
            len: x.frames(),
            required: length,
        });
    }
    let offset = rng.random_range(0..=x.frames() - length);
    x.slice(offset, length)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn ramp(q: usize, t: usize) -> FeatureSequence {
        let mcep = (0..q * t).map(|i| i as f64).collect();
        let f0 = (0..t).map(|i| 5.0 + i as f64 * 0.01).collect();
        FeatureSequence::new(q, t, mcep, f0, vec![true; t], b"ap".to_vec(), 5.0).unwrap()
    }

    #[test]
    fn rejects_degenerate_and_non_finite() {
        assert!(FeatureSequence::from_mcep(0, 4, vec![]).is_err());
        assert!(FeatureSequence::from_mcep(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(FeatureSequence::from_mcep(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn unvoiced_frames_carry_sentinel() {
        let x = FeatureSequence::new(1, 2, vec![0.0; 2], vec![5.0, f64::NAN], vec![true, false], vec![], 5.0)
            .unwrap();
        assert_eq!(x.log_f0(), &[5.0, UNVOICED]);
    }

    #[test]
    fn crop_whole_sequence_when_lengths_match() {
        let x = ramp(3, 128);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            assert_eq!(crop_segment(&x, 128, &mut rng).unwrap(), x);
        }
    }

    #[test]
    fn crop_offsets_cover_every_valid_start() {
        // T = 129, length 128: the valid offsets are exactly {0, 1}.
        let x = ramp(2, 129);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = [false; 2];
        for _ in 0..200 {
            let c = crop_segment(&x, 128, &mut rng).unwrap();
            let offset = c.mcep_at(0, 0) as usize;
            assert!(offset <= 1);
            seen[offset] = true;
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn crop_is_a_verbatim_window() {
        let x = ramp(4, 200);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = crop_segment(&x, 128, &mut rng).unwrap();
        let off = c.mcep_at(0, 0) as usize;
        for d in 0..4 {
            assert_eq!(c.dim(d), &x.dim(d)[off..off + 128]);
        }
        assert_eq!(c.log_f0(), &x.log_f0()[off..off + 128]);
    }

    #[test]
    fn crop_longer_than_input_fails() {
        let x = ramp(1, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(crop_segment(&x, 11, &mut rng), Err(Error::TooShort { .. })));
    }
}
