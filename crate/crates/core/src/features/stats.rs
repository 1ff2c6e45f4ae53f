use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::error::{Error, Result};

/// Floor applied to every standard deviation.
pub const EPS_STD: f64 = 1e-8;

/// Per-speaker feature statistics (population convention).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerStats {
    pub mcep_mean: Vec<f64>,
    pub mcep_std: Vec<f64>,
    /// Mean of log F0 over voiced frames.
    pub logf0_mean: f64,
    pub logf0_std: f64,
}

impl SpeakerStats {
    pub fn q(&self) -> usize {
        self.mcep_mean.len()
    }

    fn check_q(&self, x: &FeatureSequence) -> Result<()> {
        if x.q() != self.q() || self.mcep_std.len() != self.q() {
            return Err(Error::Shape(format!(
                "sequence has Q = {}, statistics have Q = {}",
                x.q(),
                self.q()
            )));
        }
        Ok(())
    }
}

/// Means and standard deviations over every frame of `corpus`; log F0 uses
/// voiced frames only.
pub fn compute_speaker_stats(corpus: &[FeatureSequence]) -> Result<SpeakerStats> {
    let first = corpus.first().ok_or(Error::EmptyCorpus)?;
    let q = first.q();
    if let Some(bad) = corpus.iter().find(|x| x.q() != q) {
        return Err(Error::Shape(format!(
            "mixed dimensionality in corpus: {q} and {}",
            bad.q()
        )));
    }
    let frames: usize = corpus.iter().map(FeatureSequence::frames).sum();
    let mut mean = vec![0.0; q];
    for x in corpus {
        for (d, m) in mean.iter_mut().enumerate() {
            *m += x.dim(d).iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= frames as f64);
    let mut var = vec![0.0; q];
    for x in corpus {
        for (d, v) in var.iter_mut().enumerate() {
            *v += x.dim(d).iter().map(|y| (y - mean[d]).powi(2)).sum::<f64>();
        }
    }
    let std = var
        .iter()
        .map(|v| (v / frames as f64).sqrt().max(EPS_STD))
        .collect();

    let voiced: Vec<f64> = corpus
        .iter()
        .flat_map(|x| {
            x.log_f0()
                .iter()
                .zip(x.voiced())
                .filter(|(_, &v)| v)
                .map(|(f, _)| *f)
        })
        .collect();
    if voiced.len() < 2 {
        return Err(Error::NotEnoughVoiced {
            needed: 2,
            found: voiced.len(),
        });
    }
    let n = voiced.len() as f64;
    let f0_mean = voiced.iter().sum::<f64>() / n;
    let f0_std = (voiced.iter().map(|f| (f - f0_mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(EPS_STD);

    Ok(SpeakerStats {
        mcep_mean: mean,
        mcep_std: std,
        logf0_mean: f0_mean,
        logf0_std: f0_std,
    })
}

/// Per-dimension `(x − mean) / std` on the MCEPs. Log F0 and the
/// aperiodicity reference are left alone.
pub fn normalize(x: &FeatureSequence, s: &SpeakerStats) -> Result<FeatureSequence> {
    s.check_q(x)?;
    let t = x.frames();
    let mcep = x
        .mcep()
        .iter()
        .enumerate()
        .map(|(i, v)| (v - s.mcep_mean[i / t]) / s.mcep_std[i / t])
        .collect();
    x.with_mcep(mcep)
}

/// Inverse of [`normalize`].
pub fn denormalize(x: &FeatureSequence, s: &SpeakerStats) -> Result<FeatureSequence> {
    s.check_q(x)?;
    let t = x.frames();
    let mcep = x
        .mcep()
        .iter()
        .enumerate()
        .map(|(i, v)| v * s.mcep_std[i / t] + s.mcep_mean[i / t])
        .collect();
    x.with_mcep(mcep)
}

/// Log-domain Gaussian normalized F0 transform: voiced frames are mapped by
/// `(v − μ_src) / σ_src · σ_tgt + μ_tgt`; unvoiced frames keep the sentinel.
pub fn convert_log_f0(
    log_f0: &[f64],
    voiced: &[bool],
    src: &SpeakerStats,
    tgt: &SpeakerStats,
) -> Result<Vec<f64>> {
    if log_f0.len() != voiced.len() {
        return Err(Error::Shape(format!(
            "log F0 has {} frames, voicing mask {}",
            log_f0.len(),
            voiced.len()
        )));
    }
    if src.logf0_std <= 0.0 || tgt.logf0_std <= 0.0 {
        return Err(Error::InvalidArgument("log F0 std must be positive".into()));
    }
    Ok(log_f0
        .iter()
        .zip(voiced)
        .map(|(&v, &is_voiced)| {
            if is_voiced {
                (v - src.logf0_mean) / src.logf0_std * tgt.logf0_std + tgt.logf0_mean
            } else {
                v
            }
        })
        .collect())
}
