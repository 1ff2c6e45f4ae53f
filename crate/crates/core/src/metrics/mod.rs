//! Objective evaluation: DTW-aligned mel-cepstral distortion, modulation
//! spectrum distance, and corpus-level reports.

mod dtw;
mod modspec;
mod report;

pub use dtw::{dtw_align, Alignment};
pub use modspec::{modulation_spectrum, msd, ModSpec, MS_BINS, MS_FLOOR, MS_HOP, MS_WINDOW};
pub use report::{evaluate_corpus, EvalReport, MetricConventions, OverallSummary, PairSummary, UtteranceScore};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;

/// `10 / ln 10`, the dB factor of mel-cepstral distortion.
pub const MCD_FACTOR: f64 = 10.0 / std::f64::consts::LN_10;

/// Borrowed dimension-major `Q × T` MCEP matrix.
#[derive(Clone, Copy, Debug)]
pub struct McepView<'a> {
    data: &'a [f64],
    q: usize,
    t: usize,
}

impl<'a> McepView<'a> {
    pub fn new(data: &'a [f64], q: usize, t: usize) -> Result<Self> {
        if q == 0 || t == 0 || data.len() != q * t {
            return Err(Error::Shape(format!(
                "MCEP view of {} values cannot be {q}x{t}",
                data.len()
            )));
        }
        Ok(Self { data, q, t })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    pub fn dim(&self, d: usize) -> &'a [f64] {
        &self.data[d * self.t..(d + 1) * self.t]
    }

    #[inline]
    pub fn at(&self, d: usize, t: usize) -> f64 {
        self.data[d * self.t + t]
    }
}

impl<'a> From<&'a FeatureSequence> for McepView<'a> {
    fn from(s: &'a FeatureSequence) -> Self {
        Self {
            data: s.mcep(),
            q: s.q(),
            t: s.frames(),
        }
    }
}

fn same_q(a: &McepView<'_>, b: &McepView<'_>) -> Result<()> {
    if a.q != b.q {
        return Err(Error::Shape(format!("Q mismatch: {} vs {}", a.q, b.q)));
    }
    Ok(())
}

/// Squared Euclidean distance between frame `i` of `a` and frame `j` of `b`.
pub(crate) fn frame_sq_dist(a: &McepView<'_>, i: usize, b: &McepView<'_>, j: usize) -> f64 {
    (0..a.q)
        .map(|d| {
            let v = a.at(d, i) - b.at(d, j);
            v * v
        })
        .sum()
}

/// MCD in dB together with the number of frame pairs averaged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mcd {
    pub db: f64,
    pub path_len: usize,
}

/// Mel-cepstral distortion over all stored dimensions, averaged over the
/// DTW path (`align = true`) or over equal-length frames.
pub fn mcd_detail(target: McepView<'_>, converted: McepView<'_>, align: bool) -> Result<Mcd> {
    same_q(&target, &converted)?;
    let frame = |i, j| MCD_FACTOR * (2.0 * frame_sq_dist(&target, i, &converted, j)).sqrt();
    let (sum, n) = if align {
        let path = dtw_align(target, converted)?.path;
        (path.iter().map(|&(i, j)| frame(i, j)).sum::<f64>(), path.len())
    } else {
        if target.t != converted.t {
            return Err(Error::Shape(format!(
                "unaligned MCD needs equal lengths, got {} and {}",
                target.t, converted.t
            )));
        }
        ((0..target.t).map(|i| frame(i, i)).sum::<f64>(), target.t)
    };
    Ok(Mcd {
        db: sum / n as f64,
        path_len: n,
    })
}

pub fn mcd(target: McepView<'_>, converted: McepView<'_>, align: bool) -> Result<f64> {
    mcd_detail(target, converted, align).map(|m| m.db)
}

#[cfg(test)]
mod tests;
