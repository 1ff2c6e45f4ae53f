//! Auxiliary domain classifier: three stride-2 convolutions, global average
//! pooling, linear head, log-softmax.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{conv, init_conv, normal_tensor, ArchConfig};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub q: usize,
    pub n_domains: usize,
    pub channels: usize,
}

impl ClassifierConfig {
    pub fn from_arch(arch: &ArchConfig) -> Self {
        Self {
            q: arch.q,
            n_domains: arch.n_domains,
            channels: arch.c_channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub config: ClassifierConfig,
}

impl Classifier {
    pub fn new(config: ClassifierConfig) -> Self {
        Self { config }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        let c = self.config.channels;
        if c == 0 || self.config.n_domains < 2 {
            return Err(Error::InvalidArgument(format!(
                "invalid classifier config {:?}",
                self.config
            )));
        }
        let mut p = ParamStore::new();
        init_conv(&mut p, "c.conv1", [2 * c, 1, 3, 3], rng);
        init_conv(&mut p, "c.conv2", [2 * c, c, 3, 3], rng);
        init_conv(&mut p, "c.conv3", [2 * c, c, 3, 3], rng);
        p.insert(
            "c.head.w",
            normal_tensor(&[c, self.config.n_domains], (1.0 / c as f64).sqrt(), rng),
        );
        p.insert("c.head.b", Tensor::zeros(&[self.config.n_domains]));
        Ok(p)
    }

    /// Log-probabilities `[B, N]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let (b, q, t) = match g.value(x).shape() {
            &[b, q, t] => (b, q, t),
            s => return Err(Error::Shape(format!("classifier input must be [B, Q, T], got {s:?}"))),
        };
        let mut h = g.reshape(x, &[b, 1, q, t])?;
        for name in ["c.conv1", "c.conv2", "c.conv3"] {
            let y = conv(g, p, name, h, (2, 2), (1, 1))?;
            h = g.glu(y)?;
        }
        let (_, _, hh, hw) = g.value(h).dims4()?;
        let pooled = g.sum_spatial(h)?;
        let pooled = g.scale(pooled, 1.0 / (hh * hw) as f64);
        let w = p.var("c.head.w")?;
        let bias = p.var("c.head.b")?;
        let logits = g.matmul(pooled, w)?;
        let logits = g.add_row_bias(logits, bias)?;
        g.log_softmax(logits)
    }

    pub fn log_probs(&self, params: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xv)?;
        Ok(g.value(y).clone())
    }
}
