//! Synthetic multi-domain corpus with parallel ground truth.
//!
//! Every utterance starts from a latent "content" realization: piecewise
//! constant targets (phone-like segments) plus AR(1) jitter, and a smooth
//! log-F0 contour with segment-level voicing. A domain renders a latent
//! through its own temporal smoothing kernel and per-dimension affine map,
//! and its own log-F0 mean and spread. Training utterances are drawn from
//! independent latents per domain (non-parallel); evaluation utterances
//! render the same latents in every domain, so the rendering in the target
//! domain is the exact conversion reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FeatureSequence, SEGMENT_LEN};
use crate::domain::DomainCode;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_domains: usize,
    /// Utterances per domain, for both the training and evaluation sets.
    pub n_utterances: usize,
    pub frames: usize,
    pub q: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_domains: 4,
            n_utterances: 8,
            frames: 256,
            q: super::DEFAULT_Q,
            seed: 0,
        }
    }
}

/// Hidden per-domain rendering parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainTransform {
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
    /// Symmetric smoothing kernel with unit DC gain.
    pub kernel: Vec<f64>,
    pub logf0_mean: f64,
    pub logf0_std: f64,
}

/// Domain-independent content of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent {
    pub q: usize,
    pub frames: usize,
    /// `Q × T`, dimension-major.
    pub content: Vec<f64>,
    pub pitch: Vec<f64>,
    pub voiced: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub transforms: Vec<DomainTransform>,
    /// `train[d]` holds the non-parallel training utterances of domain `d`.
    pub train: Vec<Vec<FeatureSequence>>,
    /// `eval[d][u]` renders evaluation latent `u` in domain `d`.
    pub eval: Vec<Vec<FeatureSequence>>,
    pub eval_latents: Vec<Latent>,
}

impl SynthCorpus {
    pub fn n_domains(&self) -> usize {
        self.transforms.len()
    }

    pub fn train_for(&self, d: DomainCode) -> &[FeatureSequence] {
        &self.train[d.index()]
    }

    /// Parallel reference for evaluation utterance `u` in domain `d`.
    pub fn ground_truth(&self, u: usize, d: DomainCode) -> Option<&FeatureSequence> {
        self.eval.get(d.index()).and_then(|e| e.get(u))
    }

    pub fn render(&self, latent: &Latent, d: DomainCode) -> Result<FeatureSequence> {
        let tr = self
            .transforms
            .get(d.index())
            .ok_or(Error::DomainOutOfRange {
                code: d.id(),
                n_domains: self.n_domains(),
            })?;
        render(latent, tr, &tag("render", d, 0))
    }
}

fn tag(kind: &str, d: DomainCode, u: usize) -> Vec<u8> {
    format!("synth:{kind}:d{}:u{u}", d.id()).into_bytes()
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn make_transform(k: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> DomainTransform {
    let spread = if cfg.n_domains > 1 {
        k as f64 / (cfg.n_domains - 1) as f64
    } else {
        0.0
    };
    let width = 0.5 + 2.0 * spread + rng.random_range(-0.1..0.1);
    let radius = (3.0 * width).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * width * width)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= total);
    DomainTransform {
        scale: (0..cfg.q).map(|_| rng.random_range(0.6..1.6)).collect(),
        bias: (0..cfg.q).map(|_| rng.random_range(-1.5..1.5)).collect(),
        kernel,
        logf0_mean: rng.random_range(4.6..5.6),
        logf0_std: rng.random_range(0.08..0.25),
    }
}

fn make_latent(q: usize, t: usize, rng: &mut ChaCha8Rng) -> Latent {
    let mut content = vec![0.0; q * t];
    let mut voiced = vec![false; t];
    let mut targets = vec![0.0; q];
    let mut start = 0;
    while start < t {
        let len = rng.random_range(6..=24).min(t - start);
        for (d, v) in targets.iter_mut().enumerate() {
            *v = normal(rng) / (1.0 + 0.25 * d as f64);
        }
        let is_voiced = rng.random_bool(0.75);
        for f in start..start + len {
            voiced[f] = is_voiced;
            for d in 0..q {
                content[d * t + f] = targets[d];
            }
        }
        start += len;
    }
    for d in 0..q {
        let mut ar = 0.0;
        for f in 0..t {
            ar = 0.8 * ar + 0.15 * normal(rng);
            content[d * t + f] += ar;
        }
    }
    let mut pitch = Vec::with_capacity(t);
    let mut p = normal(rng);
    for _ in 0..t {
        p = 0.95 * p + 0.31 * normal(rng);
        pitch.push(p);
    }
    Latent {
        q,
        frames: t,
        content,
        pitch,
        voiced,
    }
}

fn smooth(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let n = x.len() as isize;
    let reflect = |i: isize| -> usize {
        let mut i = i;
        if n == 1 {
            return 0;
        }
        while i < 0 || i >= n {
            if i < 0 {
                i = -i;
            }
            if i >= n {
                i = 2 * (n - 1) - i;
            }
        }
        i as usize
    };
    (0..n)
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * x[reflect(t + k as isize - r)])
                .sum()
        })
        .collect()
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

fn render(latent: &Latent, tr: &DomainTransform, ap_ref: &[u8]) -> Result<FeatureSequence> {
    let (q, t) = (latent.q, latent.frames);
    let mut mcep = Vec::with_capacity(q * t);
    for d in 0..q {
        let s = smooth(&latent.content[d * t..(d + 1) * t], &tr.kernel);
        mcep.extend(s.iter().map(|v| quantize(tr.scale[d] * v + tr.bias[d])));
    }
    let f0 = latent
        .pitch
        .iter()
        .map(|p| quantize(tr.logf0_mean + tr.logf0_std * p))
        .collect();
    FeatureSequence::new(q, t, mcep, f0, latent.voiced.clone(), ap_ref.to_vec(), 5.0)
}

/// Generates a reproducible corpus; a pure function of `cfg`.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.n_domains < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 domains, got {}",
            cfg.n_domains
        )));
    }
    if cfg.frames < SEGMENT_LEN {
        return Err(Error::TooShort {
            len: cfg.frames,
            required: SEGMENT_LEN,
        });
    }
    if cfg.q == 0 || cfg.n_utterances == 0 {
        return Err(Error::InvalidArgument("Q and utterance count must be positive".into()));
    }
    let mut trng = rng_for(cfg.seed, 1);
    let transforms: Vec<_> = (0..cfg.n_domains)
        .map(|k| make_transform(k, cfg, &mut trng))
        .collect();

    let mut train = Vec::with_capacity(cfg.n_domains);
    for (k, tr) in transforms.iter().enumerate() {
        let d = DomainCode::from_index(k);
        let mut utts = Vec::with_capacity(cfg.n_utterances);
        for u in 0..cfg.n_utterances {
            let mut rng = rng_for(cfg.seed, 2 + (k as u64) * 1_000_003 + u as u64);
            let latent = make_latent(cfg.q, cfg.frames, &mut rng);
            utts.push(render(&latent, tr, &tag("train", d, u))?);
        }
        train.push(utts);
    }

    let eval_latents: Vec<Latent> = (0..cfg.n_utterances)
        .map(|u| {
            let mut rng = rng_for(cfg.seed, (1 << 40) + u as u64);
            make_latent(cfg.q, cfg.frames, &mut rng)
        })
        .collect();
    let mut eval = Vec::with_capacity(cfg.n_domains);
    for (k, tr) in transforms.iter().enumerate() {
        let d = DomainCode::from_index(k);
        let utts = eval_latents
            .iter()
            .enumerate()
            .map(|(u, l)| render(l, tr, &tag("eval", d, u)))
            .collect::<Result<Vec<_>>>()?;
        eval.push(utts);
    }

    Ok(SynthCorpus {
        config: cfg.clone(),
        transforms,
        train,
        eval,
        eval_latents,
    })
}
