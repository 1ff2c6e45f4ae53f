//! Generator, projection discriminator and auxiliary classifier.
//!
//! All networks work on `[B, Q, T]` MCEP batches, treated internally as
//! single-channel `Q × T` images. Parameters live in [`ParamStore`]s under
//! canonical names prefixed `g.`, `d.` and `c.`.

mod cin;
mod classifier;
mod discriminator;
mod generator;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

pub use cin::{cin, cin_forward, CinParams, EPS_CIN};
pub use classifier::{Classifier, ClassifierConfig};
pub use discriminator::{Condition, Discriminator, DiscriminatorConfig, ProjectionKind};
pub use generator::{Generator, GeneratorConfig, STRIDE_PRODUCT};

/// How the domain pair enters the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    /// Conditional instance normalization with per-condition scale and bias.
    ModulationBased,
    /// One-hot code maps concatenated to the feature maps.
    ChannelWise,
}

/// Which codes select the conditioning parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionScope {
    /// Target code only: `N` rows.
    Target,
    /// Ordered (source, target) pair: `N²` rows.
    SourceTarget,
}

impl ConditionScope {
    pub fn rows(self, n_domains: usize) -> usize {
        match self {
            Self::Target => n_domains,
            Self::SourceTarget => n_domains * n_domains,
        }
    }

    pub fn row(self, pair: crate::DomainPair, n_domains: usize) -> Result<usize> {
        match self {
            Self::Target => Ok(pair.target.check(n_domains)?.index()),
            Self::SourceTarget => pair.flat_index(n_domains),
        }
    }
}

/// Channel widths shared by the three networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub q: usize,
    pub n_domains: usize,
    /// Generator widths after the input layer and after downsampling.
    pub g_channels: [usize; 2],
    pub g_bottleneck: usize,
    pub g_blocks: usize,
    pub d_channels: [usize; 2],
    pub c_channels: usize,
}

impl ArchConfig {
    /// Small widths that train in minutes on a CPU.
    pub fn desk(q: usize, n_domains: usize) -> Self {
        Self {
            q,
            n_domains,
            g_channels: [16, 32],
            g_bottleneck: 32,
            g_blocks: 3,
            d_channels: [16, 32],
            c_channels: 8,
        }
    }

    pub fn full_scale(q: usize, n_domains: usize) -> Self {
        Self {
            q,
            n_domains,
            g_channels: [128, 256],
            g_bottleneck: 256,
            g_blocks: 9,
            d_channels: [128, 256],
            c_channels: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::InvalidArgument("Q must be positive".into()));
        }
        if self.n_domains < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 domains, got {}",
                self.n_domains
            )));
        }
        let widths = self
            .g_channels
            .iter()
            .chain(&self.d_channels)
            .chain([&self.g_bottleneck, &self.c_channels]);
        if widths.into_iter().any(|&c| c == 0) {
            return Err(Error::InvalidArgument("channel widths must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters of every network used by one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub g: ParamStore,
    pub d: ParamStore,
    pub c: Option<ParamStore>,
}

/// The three networks for one experimental configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub classifier: Option<Classifier>,
}

impl Models {
    pub fn new(
        arch: &ArchConfig,
        mode: ConditioningMode,
        scope: ConditionScope,
        projection: ProjectionKind,
        with_classifier: bool,
    ) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            generator: Generator::new(GeneratorConfig::from_arch(arch, mode, scope)),
            discriminator: Discriminator::new(DiscriminatorConfig::from_arch(arch, projection)),
            classifier: with_classifier.then(|| Classifier::new(ClassifierConfig::from_arch(arch))),
        })
    }

    /// Variance-scaled random convolutions, unit CIN scales, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelParams> {
        Ok(ModelParams {
            g: self.generator.init(rng)?,
            d: self.discriminator.init(rng)?,
            c: self.classifier.as_ref().map(|c| c.init(rng)).transpose()?,
        })
    }
}

pub(crate) fn normal_tensor<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Adds `{name}.w` (`[cout, cin, kh, kw]`, std `1/sqrt(fan_in)`) and a zero
/// `{name}.b`.
pub(crate) fn init_conv<R: Rng + ?Sized>(
    p: &mut ParamStore,
    name: &str,
    shape: [usize; 4],
    rng: &mut R,
) {
    let fan_in = shape[1] * shape[2] * shape[3];
    p.insert(format!("{name}.w"), normal_tensor(&shape, (1.0 / fan_in as f64).sqrt(), rng));
    p.insert(format!("{name}.b"), Tensor::zeros(&[shape[0]]));
}

pub(crate) fn conv(
    g: &mut Graph,
    p: &Bound,
    name: &str,
    x: Var,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Var> {
    let w = p.var(&format!("{name}.w"))?;
    let b = p.try_var(&format!("{name}.b"));
    g.conv2d(x, w, b, stride, pad)
}

pub(crate) fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// `[B, Q, T]` batch from MCEP matrices of equal shape.
pub fn batch_tensor(seqs: &[&crate::features::FeatureSequence]) -> Result<Tensor> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (q, t) = (first.q(), first.frames());
    let mut data = Vec::with_capacity(seqs.len() * q * t);
    for s in seqs {
        if (s.q(), s.frames()) != (q, t) {
            return Err(Error::Shape(format!(
                "batch mixes {q}x{t} and {}x{}",
                s.q(),
                s.frames()
            )));
        }
        data.extend_from_slice(s.mcep());
    }
    Tensor::new(vec![seqs.len(), q, t], data)
}
