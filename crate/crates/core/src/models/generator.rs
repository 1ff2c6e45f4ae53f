//! The 2-1-2D convolutional generator.
//!
//! ```text
//! [B,1,Q,T] ─ conv 3x5, GLU ─ 2× (conv s2, IN, GLU) ─ reshape to 1D
//!   ─ 1x1 conv, IN ─ n× (conv k5, CIN or code concat, GLU) ─ 1x1 conv, IN
//!   ─ reshape to 2D ─ 2× (conv, pixel shuffle ×2, IN, GLU) ─ conv 3x5 ─ [B,1,Q,T]
//! ```
//!
//! The 1D blocks have no residual skips. `Q` is zero-padded to a multiple of
//! four internally and cropped back at the output; `T` must already be a
//! multiple of [`STRIDE_PRODUCT`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{conv, init_conv, round_up, ArchConfig, ConditionScope, ConditioningMode};
use crate::autograd::{Graph, Var};
use crate::domain::DomainPair;
use crate::error::{Error, Result};
use crate::models::cin::cin;
use crate::models::EPS_CIN;
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

/// Total temporal downsampling factor.
pub const STRIDE_PRODUCT: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub q: usize,
    pub n_domains: usize,
    pub channels: [usize; 2],
    pub bottleneck: usize,
    pub blocks: usize,
    pub mode: ConditioningMode,
    pub scope: ConditionScope,
}

impl GeneratorConfig {
    pub fn from_arch(arch: &ArchConfig, mode: ConditioningMode, scope: ConditionScope) -> Self {
        Self {
            q: arch.q,
            n_domains: arch.n_domains,
            channels: arch.g_channels,
            bottleneck: arch.g_bottleneck,
            blocks: arch.g_blocks,
            mode,
            scope,
        }
    }

    fn padded_q(&self) -> usize {
        round_up(self.q, STRIDE_PRODUCT)
    }

    fn code_rows(&self) -> usize {
        self.scope.rows(self.n_domains)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Self {
        Self { config }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        let c = &self.config;
        let [c1, c2] = c.channels;
        let cb = c.bottleneck;
        if c1 == 0 || c2 == 0 || cb == 0 || c.q == 0 || c.n_domains < 2 {
            return Err(Error::InvalidArgument(format!("invalid generator config {c:?}")));
        }
        let flat = c2 * c.padded_q() / STRIDE_PRODUCT;
        let mut p = ParamStore::new();
        init_conv(&mut p, "g.in", [2 * c1, 1, 3, 5], rng);
        init_conv(&mut p, "g.down1", [2 * c2, c1, 3, 3], rng);
        init_conv(&mut p, "g.down2", [2 * c2, c2, 3, 3], rng);
        init_conv(&mut p, "g.to1d", [cb, flat, 1, 1], rng);
        for i in 0..c.blocks {
            let name = format!("g.block{i}");
            match c.mode {
                ConditioningMode::ModulationBased => {
                    init_conv(&mut p, &format!("{name}.conv"), [2 * cb, cb, 1, 5], rng);
                    let rows = c.code_rows();
                    p.insert(format!("{name}.cin.gamma"), Tensor::ones(&[rows, 2 * cb]));
                    p.insert(format!("{name}.cin.beta"), Tensor::zeros(&[rows, 2 * cb]));
                }
                ConditioningMode::ChannelWise => {
                    let cin = cb + c.code_rows();
                    init_conv(&mut p, &format!("{name}.conv"), [2 * cb, cin, 1, 5], rng);
                }
            }
        }
        init_conv(&mut p, "g.to2d", [flat, cb, 1, 1], rng);
        init_conv(&mut p, "g.up1", [c2 * 4 * 2, c2, 3, 3], rng);
        init_conv(&mut p, "g.up2", [c1 * 4 * 2, c2, 3, 3], rng);
        init_conv(&mut p, "g.out", [1, c1, 3, 5], rng);
        Ok(p)
    }

    fn rows(&self, pairs: &[DomainPair]) -> Result<Vec<usize>> {
        pairs
            .iter()
            .map(|&p| self.config.scope.row(p, self.config.n_domains))
            .collect()
    }

    /// One-hot condition maps `[B, rows, 1, width]`.
    fn code_map(&self, rows: &[usize], width: usize) -> Tensor {
        let k = self.config.code_rows();
        let mut t = Tensor::zeros(&[rows.len(), k, 1, width]);
        for (b, &r) in rows.iter().enumerate() {
            let start = (b * k + r) * width;
            t.data_mut()[start..start + width].fill(1.0);
        }
        t
    }

    /// The pre-activation of bottleneck block `block` in channel-wise mode;
    /// exposed so the additive code contribution can be inspected.
    pub fn channel_wise_preactivation(
        &self,
        g: &mut Graph,
        p: &Bound,
        h: Var,
        pairs: &[DomainPair],
        block: usize,
    ) -> Result<Var> {
        let (_, _, _, w) = g.value(h).dims4()?;
        let rows = self.rows(pairs)?;
        let code = g.constant(self.code_map(&rows, w));
        let hc = g.concat_channels(h, code)?;
        conv(g, p, &format!("g.block{block}.conv"), hc, (1, 1), (0, 2))
    }

    /// `G(x, c, c')`: `x` is `[B, Q, T]`, one pair per instance.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, pairs: &[DomainPair]) -> Result<Var> {
        let c = &self.config;
        let (b, q, t) = match g.value(x).shape() {
            &[b, q, t] => (b, q, t),
            s => return Err(Error::Shape(format!("generator input must be [B, Q, T], got {s:?}"))),
        };
        if q != c.q {
            return Err(Error::Shape(format!("generator built for Q = {}, got {q}", c.q)));
        }
        if pairs.len() != b {
            return Err(Error::Shape(format!("{} pairs for batch of {b}", pairs.len())));
        }
        if t == 0 || t % STRIDE_PRODUCT != 0 {
            return Err(Error::NotDivisible {
                len: t,
                multiple: STRIDE_PRODUCT,
            });
        }
        let rows = self.rows(pairs)?;
        let qp = c.padded_q();
        let [_, c2] = c.channels;

        let h = g.reshape(x, &[b, 1, q, t])?;
        let h = g.pad_height(h, qp)?;
        let h = conv(g, p, "g.in", h, (1, 1), (1, 2))?;
        let mut h = g.glu(h)?;
        for name in ["g.down1", "g.down2"] {
            let y = conv(g, p, name, h, (2, 2), (1, 1))?;
            let y = g.instance_norm(y, EPS_CIN)?;
            h = g.glu(y)?;
        }

        let (hq, ht) = (qp / STRIDE_PRODUCT, t / STRIDE_PRODUCT);
        let h = g.reshape(h, &[b, c2 * hq, 1, ht])?;
        let h = conv(g, p, "g.to1d", h, (1, 1), (0, 0))?;
        let mut h = g.instance_norm(h, EPS_CIN)?;
        for i in 0..c.blocks {
            let name = format!("g.block{i}");
            let y = match c.mode {
                ConditioningMode::ModulationBased => {
                    let y = conv(g, p, &format!("{name}.conv"), h, (1, 1), (0, 2))?;
                    let gamma = p.var(&format!("{name}.cin.gamma"))?;
                    let beta = p.var(&format!("{name}.cin.beta"))?;
                    cin(g, y, gamma, beta, &rows)?
                }
                // A normalization after the concatenated code would subtract
                // its time-constant contribution, so this path stays unnormalized.
                ConditioningMode::ChannelWise => {
                    self.channel_wise_preactivation(g, p, h, pairs, i)?
                }
            };
            h = g.glu(y)?;
        }
        let h = conv(g, p, "g.to2d", h, (1, 1), (0, 0))?;
        let h = g.instance_norm(h, EPS_CIN)?;
        let mut h = g.reshape(h, &[b, c2, hq, ht])?;

        for name in ["g.up1", "g.up2"] {
            let y = conv(g, p, name, h, (1, 1), (1, 1))?;
            let y = g.pixel_shuffle(y, 2)?;
            let y = g.instance_norm(y, EPS_CIN)?;
            h = g.glu(y)?;
        }
        let y = conv(g, p, "g.out", h, (1, 1), (1, 2))?;
        let y = g.crop_height(y, q)?;
        g.reshape(y, &[b, q, t])
    }

    /// Runs the generator on plain data without recording gradients.
    pub fn convert(&self, params: &ParamStore, x: &Tensor, pairs: &[DomainPair]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xv, pairs)?;
        Ok(g.value(y).clone())
    }
}
