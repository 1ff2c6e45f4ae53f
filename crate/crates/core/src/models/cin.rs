use crate::autograd::{Graph, Var};
use crate::domain::DomainPair;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::ConditionScope;

/// Floor on the per-slice standard deviation.
pub const EPS_CIN: f64 = 1e-5;

/// Scale and bias tables of one conditional instance normalization layer,
/// one row per condition (target code or ordered pair) and one column per
/// channel.
#[derive(Clone, Debug, PartialEq)]
pub struct CinParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub scope: ConditionScope,
    pub n_domains: usize,
}

impl CinParams {
    /// Unit scales and zero biases.
    pub fn identity(scope: ConditionScope, n_domains: usize, channels: usize) -> Self {
        let rows = scope.rows(n_domains);
        Self {
            gamma: Tensor::ones(&[rows, channels]),
            beta: Tensor::zeros(&[rows, channels]),
            scope,
            n_domains,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[1]
    }

    /// Mutable `(gamma, beta)` rows for one condition.
    pub fn row_mut(&mut self, pair: DomainPair) -> Result<(&mut [f64], &mut [f64])> {
        let r = self.scope.row(pair, self.n_domains)?;
        let c = self.channels();
        Ok((
            &mut self.gamma.data_mut()[r * c..(r + 1) * c],
            &mut self.beta.data_mut()[r * c..(r + 1) * c],
        ))
    }
}

/// Whitens each `(instance, channel)` slice of `x: [B, C, H, W]` and applies
/// the scale and bias rows selected by `rows` (one per instance).
pub fn cin(g: &mut Graph, x: Var, gamma: Var, beta: Var, rows: &[usize]) -> Result<Var> {
    let normed = g.instance_norm(x, EPS_CIN)?;
    let gs = g.gather_rows(gamma, rows)?;
    let bs = g.gather_rows(beta, rows)?;
    g.channel_affine(normed, gs, bs)
}

/// Tensor-level conditional instance normalization of `f: [B, C, H, W]`,
/// every instance conditioned on `pair`.
pub fn cin_forward(f: &Tensor, pair: DomainPair, p: &CinParams) -> Result<Tensor> {
    let (b, c, _, _) = f.dims4()?;
    if c != p.channels() {
        return Err(Error::Shape(format!(
            "feature map has {c} channels, CIN table has {}",
            p.channels()
        )));
    }
    let row = p.scope.row(pair, p.n_domains)?;
    let mut g = Graph::new();
    let x = g.constant(f.clone());
    let gamma = g.constant(p.gamma.clone());
    let beta = g.constant(p.beta.clone());
    let y = cin(&mut g, x, gamma, beta, &vec![row; b])?;
    Ok(g.value(y).clone())
}
