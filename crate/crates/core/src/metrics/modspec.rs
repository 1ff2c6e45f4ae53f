//! Log modulation spectra of MCEP trajectories.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{same_q, McepView};
use crate::error::{Error, Result};

/// Analysis window length in frames.
pub const MS_WINDOW: usize = 128;
/// Hop between windows (50% overlap).
pub const MS_HOP: usize = 64;
/// Non-negative frequency bins of one window.
pub const MS_BINS: usize = MS_WINDOW / 2 + 1;
/// Power floor applied before `log10`.
pub const MS_FLOOR: f64 = 1e-10;

/// `Q × F` matrix of `log10` modulation power, row-major by dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct ModSpec {
    pub q: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl ModSpec {
    pub fn row(&self, d: usize) -> &[f64] {
        &self.data[d * self.bins..(d + 1) * self.bins]
    }
}

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

struct Analyzer {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Analyzer {
    fn new() -> Self {
        Self {
            window: hann(MS_WINDOW),
            fft: FftPlanner::new().plan_fft_forward(MS_WINDOW),
        }
    }

    fn spectrum(&self, x: McepView<'_>) -> Result<ModSpec> {
        let t = x.frames();
        if t < MS_WINDOW {
            return Err(Error::TooShort {
                len: t,
                required: MS_WINDOW,
            });
        }
        let n_win = 1 + (t - MS_WINDOW) / MS_HOP;
        let mut data = Vec::with_capacity(x.q() * MS_BINS);
        let mut buf = vec![Complex::new(0.0, 0.0); MS_WINDOW];
        for d in 0..x.q() {
            let traj = x.dim(d);
            let mut power = vec![0.0; MS_BINS];
            for w in 0..n_win {
                let seg = &traj[w * MS_HOP..w * MS_HOP + MS_WINDOW];
                for ((b, &v), &h) in buf.iter_mut().zip(seg).zip(&self.window) {
                    *b = Complex::new(v * h, 0.0);
                }
                self.fft.process(&mut buf);
                for (p, c) in power.iter_mut().zip(&buf) {
                    *p += c.norm_sqr();
                }
            }
            data.extend(power.iter().map(|p| (p / n_win as f64).max(MS_FLOOR).log10()));
        }
        Ok(ModSpec {
            q: x.q(),
            bins: MS_BINS,
            data,
        })
    }
}

/// Per dimension: Hann-windowed DFT power over windows of [`MS_WINDOW`]
/// frames with hop [`MS_HOP`], averaged across windows, floored at
/// [`MS_FLOOR`], then `log10`.
pub fn modulation_spectrum(x: McepView<'_>) -> Result<ModSpec> {
    Analyzer::new().spectrum(x)
}

/// Modulation spectrum distance in dB: `10 · RMS` of the log10 power
/// difference over all dimensions and bins.
pub fn msd(target: McepView<'_>, converted: McepView<'_>) -> Result<f64> {
    same_q(&target, &converted)?;
    let an = Analyzer::new();
    let a = an.spectrum(target)?;
    let b = an.spectrum(converted)?;
    let ms: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(10.0 * ms.sqrt())
}
