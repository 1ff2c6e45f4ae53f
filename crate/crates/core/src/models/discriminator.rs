//! 2D convolutional projection discriminator.
//!
//! The score is `ψ(φ(x)) + ⟨e_y, φ(x)⟩` where `φ(x)` is the global sum pool
//! of the last feature map, `ψ` a linear head and `e_y` the embedding row of
//! the condition `y` (absent for the unconditional variant).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{conv, init_conv, normal_tensor, round_up, ArchConfig, EPS_CIN};
use crate::autograd::{Graph, Var};
use crate::domain::{DomainCode, DomainPair};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    /// No projection term.
    Unconditional,
    /// `N` embedding rows indexed by the target code.
    Target,
    /// `N²` embedding rows indexed by the ordered (source, target) pair.
    SourceTarget,
}

/// Conditioning supplied to [`Discriminator::forward`]; must match the
/// discriminator's [`ProjectionKind`].
#[derive(Clone, Copy, Debug)]
pub enum Condition<'a> {
    None,
    Target(&'a [DomainCode]),
    Pair(&'a [DomainPair]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub q: usize,
    pub n_domains: usize,
    pub channels: [usize; 2],
    pub projection: ProjectionKind,
}

impl DiscriminatorConfig {
    pub fn from_arch(arch: &ArchConfig, projection: ProjectionKind) -> Self {
        Self {
            q: arch.q,
            n_domains: arch.n_domains,
            channels: arch.d_channels,
            projection,
        }
    }

    fn embed_rows(&self) -> Option<usize> {
        match self.projection {
            ProjectionKind::Unconditional => None,
            ProjectionKind::Target => Some(self.n_domains),
            ProjectionKind::SourceTarget => Some(self.n_domains * self.n_domains),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig) -> Self {
        Self { config }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        let [a, b] = self.config.channels;
        if a == 0 || b == 0 || self.config.q == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid discriminator config {:?}",
                self.config
            )));
        }
        let mut p = ParamStore::new();
        init_conv(&mut p, "d.in", [2 * a, 1, 3, 3], rng);
        init_conv(&mut p, "d.down1", [2 * b, a, 3, 3], rng);
        init_conv(&mut p, "d.down2", [2 * b, b, 3, 3], rng);
        init_conv(&mut p, "d.feat", [2 * b, b, 1, 5], rng);
        let std = (1.0 / b as f64).sqrt();
        p.insert("d.head.w", normal_tensor(&[b, 1], std, rng));
        p.insert("d.head.b", Tensor::zeros(&[1]));
        if let Some(rows) = self.config.embed_rows() {
            p.insert("d.embed", normal_tensor(&[rows, b], std, rng));
        }
        Ok(p)
    }

    fn rows(&self, cond: Condition<'_>, batch: usize) -> Result<Option<Vec<usize>>> {
        let n = self.config.n_domains;
        let rows = match (self.config.projection, cond) {
            (ProjectionKind::Unconditional, Condition::None) => return Ok(None),
            (ProjectionKind::Target, Condition::Target(codes)) => codes
                .iter()
                .map(|c| c.check(n).map(DomainCode::index))
                .collect::<Result<Vec<_>>>()?,
            (ProjectionKind::SourceTarget, Condition::Pair(pairs)) => pairs
                .iter()
                .map(|p| p.flat_index(n))
                .collect::<Result<Vec<_>>>()?,
            (kind, c) => {
                return Err(Error::VariantMismatch(format!(
                    "{kind:?} discriminator given {c:?}"
                )))
            }
        };
        if rows.len() != batch {
            return Err(Error::Shape(format!("{} conditions for batch of {batch}", rows.len())));
        }
        Ok(Some(rows))
    }

    /// Realness score per instance, `[B]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, cond: Condition<'_>) -> Result<Var> {
        let (b, q, t) = match g.value(x).shape() {
            &[b, q, t] => (b, q, t),
            s => {
                return Err(Error::Shape(format!(
                    "discriminator input must be [B, Q, T], got {s:?}"
                )))
            }
        };
        if q != self.config.q {
            return Err(Error::Shape(format!(
                "discriminator built for Q = {}, got {q}",
                self.config.q
            )));
        }
        let rows = self.rows(cond, b)?;
        let h = g.reshape(x, &[b, 1, q, t])?;
        let h = g.pad_height(h, round_up(q, 4))?;
        let h = conv(g, p, "d.in", h, (1, 1), (1, 1))?;
        let mut h = g.glu(h)?;
        for name in ["d.down1", "d.down2"] {
            let y = conv(g, p, name, h, (2, 2), (1, 1))?;
            let y = g.instance_norm(y, EPS_CIN)?;
            h = g.glu(y)?;
        }
        let h = conv(g, p, "d.feat", h, (1, 1), (0, 2))?;
        let h = g.glu(h)?;
        let pooled = g.sum_spatial(h)?;

        let w = p.var("d.head.w")?;
        let bias = p.var("d.head.b")?;
        let s = g.matmul(pooled, w)?;
        let s = g.add_row_bias(s, bias)?;
        let mut score = g.reshape(s, &[b])?;
        if let Some(rows) = rows {
            let table = p.var("d.embed")?;
            let e = g.gather_rows(table, &rows)?;
            let proj = g.row_dot(e, pooled)?;
            score = g.add(score, proj)?;
        }
        Ok(score)
    }

    /// Scores plain data without recording gradients.
    pub fn score(&self, params: &ParamStore, x: &Tensor, cond: Condition<'_>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let s = self.forward(&mut g, &p, xv, cond)?;
        Ok(g.value(s).data().to_vec())
    }
}
