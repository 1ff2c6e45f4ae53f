//! Adversarial, classification, cycle and identity losses, and the full
//! per-player objectives built from them.
//!
//! The adversarial game is trained in least-squares form. Each player's
//! objective only produces gradients for that player: fakes are detached
//! for the discriminator, and the discriminator and classifier are frozen
//! inside the generator objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::domain::{DomainCode, DomainPair};
use crate::error::{Error, Result};
use crate::models::{
    Classifier, Condition, ConditionScope, Discriminator, Generator, ModelParams, Models,
    ProjectionKind,
};
use crate::params::Bound;
use crate::tensor::Tensor;

/// Default number of iterations during which the identity loss is active.
pub const DEFAULT_ID_CUTOFF: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_cyc: f64,
    pub lambda_id: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_cyc: 10.0,
            lambda_id: 5.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            lambda_cls: 0.0,
            lambda_cyc: 0.0,
            lambda_id: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_cls", self.lambda_cls),
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_id", self.lambda_id),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which conditional training objective is used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObjectiveVariant {
    /// Unconditional adversarial loss plus domain classification.
    ClsOnly,
    /// Target-conditional adversarial loss.
    TAdv,
    /// Target-conditional adversarial loss plus domain classification.
    TAdvPlusCls,
    /// Source-and-target conditional adversarial loss.
    StAdv,
}

impl ObjectiveVariant {
    pub const ALL: [ObjectiveVariant; 4] = [Self::ClsOnly, Self::TAdv, Self::TAdvPlusCls, Self::StAdv];

    pub fn label(self) -> &'static str {
        match self {
            Self::ClsOnly => "CLS_ONLY",
            Self::TAdv => "T_ADV",
            Self::TAdvPlusCls => "T_ADV_PLUS_CLS",
            Self::StAdv => "ST_ADV",
        }
    }

    pub fn uses_classifier(self) -> bool {
        matches!(self, Self::ClsOnly | Self::TAdvPlusCls)
    }

    pub fn projection(self) -> ProjectionKind {
        match self {
            Self::ClsOnly => ProjectionKind::Unconditional,
            Self::TAdv | Self::TAdvPlusCls => ProjectionKind::Target,
            Self::StAdv => ProjectionKind::SourceTarget,
        }
    }

    /// Generator conditioning scope that goes with this objective.
    pub fn scope(self) -> ConditionScope {
        match self {
            Self::StAdv => ConditionScope::SourceTarget,
            _ => ConditionScope::Target,
        }
    }
}

impl std::fmt::Display for ObjectiveVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ObjectiveVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown objective variant `{s}`")))
    }
}

/// Real segments with their domains and the sampled conversion targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B, Q, T]` normalized MCEP segments.
    pub x: Tensor,
    pub source: Vec<DomainCode>,
    pub target: Vec<DomainCode>,
}

impl Batch {
    pub fn new(x: Tensor, source: Vec<DomainCode>, target: Vec<DomainCode>) -> Result<Self> {
        let b = match x.shape() {
            &[b, _, _] => b,
            s => return Err(Error::Shape(format!("batch must be [B, Q, T], got {s:?}"))),
        };
        if source.len() != b || target.len() != b {
            return Err(Error::Shape(format!(
                "batch of {b} with {} source and {} target codes",
                source.len(),
                target.len()
            )));
        }
        Ok(Self { x, source, target })
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// `(c, c')` per instance.
    pub fn forward_pairs(&self) -> Vec<DomainPair> {
        self.source
            .iter()
            .zip(&self.target)
            .map(|(&s, &t)| DomainPair::new(s, t))
            .collect()
    }

    /// `(c, c)` per instance.
    pub fn identity_pairs(&self) -> Vec<DomainPair> {
        self.source.iter().map(|&c| DomainPair::new(c, c)).collect()
    }
}

/// Draws one target code per instance, uniformly over all domains
/// (including the source domain).
pub fn sample_target_codes<R: Rng + ?Sized>(rng: &mut R, n_domains: usize, batch: usize) -> Vec<DomainCode> {
    (0..batch)
        .map(|_| DomainCode::from_index(rng.random_range(0..n_domains)))
        .collect()
}

/// A differentiable conversion `x ↦ G(x, c, c')`.
pub trait Translator {
    fn translate(&self, g: &mut Graph, x: Var, pairs: &[DomainPair]) -> Result<Var>;
}

/// A generator network together with bound parameters.
pub struct BoundGenerator<'a> {
    pub net: &'a Generator,
    pub params: &'a Bound,
}

impl Translator for BoundGenerator<'_> {
    fn translate(&self, g: &mut Graph, x: Var, pairs: &[DomainPair]) -> Result<Var> {
        self.net.forward(g, self.params, x, pairs)
    }
}

/// Returns its input unchanged.
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, _g: &mut Graph, x: Var, _pairs: &[DomainPair]) -> Result<Var> {
        Ok(x)
    }
}

/// Discriminator and generator sides of one adversarial term.
#[derive(Clone, Copy, Debug)]
pub struct AdvLoss {
    pub d_loss: Var,
    pub g_loss: Var,
}

/// `mean[(s − 1)²]`.
pub fn lsgan_real(g: &mut Graph, scores: Var) -> Var {
    let d = g.offset(scores, -1.0);
    let sq = g.square(d);
    g.mean(sq)
}

/// `mean[s²]`.
pub fn lsgan_fake(g: &mut Graph, scores: Var) -> Var {
    let sq = g.square(scores);
    g.mean(sq)
}

/// Least-squares losses from real and fake discriminator scores.
pub fn lsgan(g: &mut Graph, real_scores: Var, fake_scores: Var) -> Result<AdvLoss> {
    let r = lsgan_real(g, real_scores);
    let f = lsgan_fake(g, fake_scores);
    let d_loss = g.add(r, f)?;
    let g_loss = lsgan_real(g, fake_scores);
    Ok(AdvLoss { d_loss, g_loss })
}

/// The saturating log-likelihood form, evaluated on discriminator
/// probabilities in `(0, 1)`. Training never uses it; it exists so the
/// cross-entropy game can be evaluated and compared.
///
/// `d_loss = −mean[log p_real] − mean[log(1 − p_fake)]`,
/// `g_loss = mean[log(1 − p_fake)]`.
pub fn log_form(g: &mut Graph, real_prob: Var, fake_prob: Var) -> Result<AdvLoss> {
    let lr = g.log(real_prob);
    let lr = g.mean(lr);
    let one_minus = g.scale(fake_prob, -1.0);
    let one_minus = g.offset(one_minus, 1.0);
    let lf = g.log(one_minus);
    let lf = g.mean(lf);
    let sum = g.add(lr, lf)?;
    let d_loss = g.scale(sum, -1.0);
    Ok(AdvLoss { d_loss, g_loss: lf })
}

fn require_projection(disc: &Discriminator, kind: ProjectionKind) -> Result<()> {
    if disc.config.projection != kind {
        return Err(Error::VariantMismatch(format!(
            "expected a {kind:?} discriminator, got {:?}",
            disc.config.projection
        )));
    }
    Ok(())
}

/// Owned discriminator conditioning for one side of the game.
#[derive(Clone, Debug)]
enum Cond {
    None,
    Target(Vec<DomainCode>),
    Pair(Vec<DomainPair>),
}

impl Cond {
    fn as_condition(&self) -> Condition<'_> {
        match self {
            Cond::None => Condition::None,
            Cond::Target(c) => Condition::Target(c),
            Cond::Pair(p) => Condition::Pair(p),
        }
    }
}

/// Conditions for (real, fake) scores under each projection kind. Real data
/// of domain `c` is shown as the target of the sampled source `c'`.
fn conditions(kind: ProjectionKind, source: &[DomainCode], target: &[DomainCode]) -> (Cond, Cond) {
    match kind {
        ProjectionKind::Unconditional => (Cond::None, Cond::None),
        ProjectionKind::Target => (Cond::Target(source.to_vec()), Cond::Target(target.to_vec())),
        ProjectionKind::SourceTarget => {
            let real = target
                .iter()
                .zip(source)
                .map(|(&tc, &sc)| DomainPair::new(tc, sc))
                .collect();
            let fake = source
                .iter()
                .zip(target)
                .map(|(&sc, &tc)| DomainPair::new(sc, tc))
                .collect();
            (Cond::Pair(real), Cond::Pair(fake))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adv_loss(
    g: &mut Graph,
    kind: ProjectionKind,
    disc: &Discriminator,
    dp: &Bound,
    real: Var,
    source: &[DomainCode],
    fake: Var,
    target: &[DomainCode],
) -> Result<AdvLoss> {
    require_projection(disc, kind)?;
    let (rc, fc) = conditions(kind, source, target);
    let rs = disc.forward(g, dp, real, rc.as_condition())?;
    let fs = disc.forward(g, dp, fake, fc.as_condition())?;
    lsgan(g, rs, fs)
}

/// Target-conditional adversarial loss: real `x` of domain `c` scored as
/// `D(x, c)`, fake `G(x, c')` scored as `D(·, c')`.
pub fn adv_loss_target(
    g: &mut Graph,
    disc: &Discriminator,
    dp: &Bound,
    real: Var,
    codes: &[DomainCode],
    fake: Var,
    targets: &[DomainCode],
) -> Result<AdvLoss> {
    adv_loss(g, ProjectionKind::Target, disc, dp, real, codes, fake, targets)
}

/// Source-and-target conditional adversarial loss: real `x` of domain `c`
/// scored as `D(x, c', c)`, fake `G(x, c, c')` scored as `D(·, c, c')`.
pub fn st_adv_loss(
    g: &mut Graph,
    disc: &Discriminator,
    dp: &Bound,
    real: Var,
    codes: &[DomainCode],
    fake: Var,
    targets: &[DomainCode],
) -> Result<AdvLoss> {
    adv_loss(g, ProjectionKind::SourceTarget, disc, dp, real, codes, fake, targets)
}

/// Adversarial loss with an unconditional discriminator.
pub fn adv_loss_unconditional(
    g: &mut Graph,
    disc: &Discriminator,
    dp: &Bound,
    real: Var,
    fake: Var,
) -> Result<AdvLoss> {
    adv_loss(g, ProjectionKind::Unconditional, disc, dp, real, &[], fake, &[])
}

fn nll(g: &mut Graph, clf: &Classifier, cp: &Bound, x: Var, codes: &[DomainCode]) -> Result<Var> {
    let n = clf.config.n_domains;
    let idx = codes
        .iter()
        .map(|c| c.check(n).map(DomainCode::index))
        .collect::<Result<Vec<_>>>()?;
    let lp = clf.forward(g, cp, x)?;
    let picked = g.pick(lp, &idx)?;
    let m = g.mean(picked);
    Ok(g.scale(m, -1.0))
}

/// `mean[−log C(c | x)]` on real data.
pub fn cls_loss_real(g: &mut Graph, clf: &Classifier, cp: &Bound, x: Var, codes: &[DomainCode]) -> Result<Var> {
    nll(g, clf, cp, x, codes)
}

/// `mean[−log C(c' | G(x, c'))]`. The classifier is frozen in this term,
/// so only the generator receives gradients.
pub fn cls_loss_fake(
    g: &mut Graph,
    clf: &Classifier,
    cp: &Bound,
    fake: Var,
    targets: &[DomainCode],
) -> Result<Var> {
    let frozen = cp.frozen(g);
    nll(g, clf, &frozen, fake, targets)
}

/// Mean absolute difference over all elements.
pub fn l1_mean(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// `mean |x − G(G(x, c, c'), c', c)|`; `fake` is `G(x, c, c')`.
pub fn cycle_loss(
    g: &mut Graph,
    gen: &dyn Translator,
    x: Var,
    fake: Var,
    pairs: &[DomainPair],
) -> Result<Var> {
    let back: Vec<_> = pairs.iter().map(|p| p.reversed()).collect();
    let recon = gen.translate(g, fake, &back)?;
    l1_mean(g, x, recon)
}

/// `mean |G(x, c, c) − x|`.
pub fn identity_loss(g: &mut Graph, gen: &dyn Translator, x: Var, codes: &[DomainCode]) -> Result<Var> {
    let pairs: Vec<_> = codes.iter().map(|&c| DomainPair::new(c, c)).collect();
    let y = gen.translate(g, x, &pairs)?;
    l1_mean(g, y, x)
}

/// The players whose parameters receive gradients in a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Player {
    Generator,
    Discriminator,
    Classifier,
}

/// All model parameters recorded on one graph.
#[derive(Clone, Debug)]
pub struct Bindings {
    pub g: Bound,
    pub d: Bound,
    pub c: Option<Bound>,
}

impl Bindings {
    /// Binds every network; those listed in `trainable` become trainable
    /// leaves, the rest constants.
    pub fn new(graph: &mut Graph, params: &ModelParams, trainable: &[Player]) -> Self {
        let t = |p| trainable.contains(&p);
        Self {
            g: params.g.bind(graph, t(Player::Generator)),
            d: params.d.bind(graph, t(Player::Discriminator)),
            c: params.c.as_ref().map(|c| c.bind(graph, t(Player::Classifier))),
        }
    }
}

/// Discriminator-side terms.
#[derive(Clone, Copy, Debug)]
pub struct DTerms {
    pub loss: Var,
}

/// Generator-side terms; `loss` is their weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct GTerms {
    pub loss: Var,
    pub adv: Var,
    pub cls_fake: Option<Var>,
    pub cyc: Var,
    pub id: Option<Var>,
}

/// One row of the per-iteration loss log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub l_d: f64,
    pub l_c: f64,
    pub l_g: f64,
    pub d_adv: f64,
    pub g_adv: f64,
    pub cls_real: f64,
    pub cls_fake: f64,
    pub cyc: f64,
    pub id: f64,
}

impl LossRecord {
    pub const COLUMNS: [&'static str; 9] =
        ["L_D", "L_C", "L_G", "d_adv", "g_adv", "cls_real", "cls_fake", "cyc", "id"];

    pub fn values(&self) -> [f64; 9] {
        [
            self.l_d,
            self.l_c,
            self.l_g,
            self.d_adv,
            self.g_adv,
            self.cls_real,
            self.cls_fake,
            self.cyc,
            self.id,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// The full per-player objectives for one variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub variant: ObjectiveVariant,
    pub weights: LossWeights,
    pub id_cutoff: u64,
}

impl Objective {
    pub fn new(variant: ObjectiveVariant, weights: LossWeights) -> Self {
        Self {
            variant,
            weights,
            id_cutoff: DEFAULT_ID_CUTOFF,
        }
    }

    /// Identity loss is active strictly before `id_cutoff`.
    pub fn identity_active(&self, iteration: u64) -> bool {
        iteration < self.id_cutoff
    }

    fn check_models(&self, models: &Models, b: &Bindings) -> Result<()> {
        if self.variant.uses_classifier() && (models.classifier.is_none() || b.c.is_none()) {
            return Err(Error::MissingModel(format!(
                "objective {} needs a classifier",
                self.variant
            )));
        }
        require_projection(&models.discriminator, self.variant.projection())
    }

    fn adversarial(
        &self,
        g: &mut Graph,
        models: &Models,
        dp: &Bound,
        real: Var,
        fake: Var,
        batch: &Batch,
    ) -> Result<AdvLoss> {
        adv_loss(
            g,
            self.variant.projection(),
            &models.discriminator,
            dp,
            real,
            &batch.source,
            fake,
            &batch.target,
        )
    }

    /// `L_D`: the discriminator's least-squares loss on real data and
    /// detached fakes.
    pub fn discriminator_loss(&self, g: &mut Graph, models: &Models, b: &Bindings, batch: &Batch) -> Result<DTerms> {
        self.check_models(models, b)?;
        let x = g.constant(batch.x.clone());
        let gen = BoundGenerator {
            net: &models.generator,
            params: &b.g,
        };
        let fake = gen.translate(g, x, &batch.forward_pairs())?;
        let fake = g.detach(fake);
        let adv = self.adversarial(g, models, &b.d, x, fake, batch)?;
        Ok(DTerms { loss: adv.d_loss })
    }

    /// `L_C = λ_cls · L_cls^r`, or `None` for variants without a classifier.
    /// Returns `(L_C, L_cls^r)`.
    pub fn classifier_loss(
        &self,
        g: &mut Graph,
        models: &Models,
        b: &Bindings,
        batch: &Batch,
    ) -> Result<Option<(Var, Var)>> {
        self.check_models(models, b)?;
        if !self.variant.uses_classifier() {
            return Ok(None);
        }
        let (clf, cp) = classifier_pair(models, b)?;
        let x = g.constant(batch.x.clone());
        let raw = cls_loss_real(g, clf, cp, x, &batch.source)?;
        Ok(Some((g.scale(raw, self.weights.lambda_cls), raw)))
    }

    /// `L_G`: adversarial, fake-classification, cycle and (before the
    /// cutoff) identity terms. Discriminator and classifier are frozen.
    pub fn generator_loss(
        &self,
        g: &mut Graph,
        models: &Models,
        b: &Bindings,
        batch: &Batch,
        iteration: u64,
    ) -> Result<GTerms> {
        self.check_models(models, b)?;
        let w = self.weights;
        let x = g.constant(batch.x.clone());
        let gen = BoundGenerator {
            net: &models.generator,
            params: &b.g,
        };
        let pairs = batch.forward_pairs();
        let fake = gen.translate(g, x, &pairs)?;

        let d_frozen = b.d.frozen(g);
        let (_, fc) = conditions(self.variant.projection(), &batch.source, &batch.target);
        let fs = models.discriminator.forward(g, &d_frozen, fake, fc.as_condition())?;
        let adv = lsgan_real(g, fs);
        let mut loss = adv;

        let cls_fake = if self.variant.uses_classifier() {
            let (clf, cp) = classifier_pair(models, b)?;
            let c = cls_loss_fake(g, clf, cp, fake, &batch.target)?;
            let s = g.scale(c, w.lambda_cls);
            loss = g.add(loss, s)?;
            Some(c)
        } else {
            None
        };

        let cyc = cycle_loss(g, &gen, x, fake, &pairs)?;
        let s = g.scale(cyc, w.lambda_cyc);
        loss = g.add(loss, s)?;

        let id = if self.identity_active(iteration) {
            let id = identity_loss(g, &gen, x, &batch.source)?;
            let s = g.scale(id, w.lambda_id);
            loss = g.add(loss, s)?;
            Some(id)
        } else {
            None
        };
        Ok(GTerms {
            loss,
            adv,
            cls_fake,
            cyc,
            id,
        })
    }
}

fn classifier_pair<'a>(models: &'a Models, b: &'a Bindings) -> Result<(&'a Classifier, &'a Bound)> {
    match (&models.classifier, &b.c) {
        (Some(c), Some(p)) => Ok((c, p)),
        _ => Err(Error::MissingModel("classifier".into())),
    }
}

/// All three objectives recorded on one graph.
#[derive(Clone, Copy, Debug)]
pub struct TotalLosses {
    pub l_d: Var,
    pub l_c: Option<Var>,
    pub l_g: Var,
    pub record: LossRecord,
}

/// Builds `L_D`, `L_C` and `L_G` on `g` and reports every component.
/// Because each objective freezes the other players, gradients of each
/// total only reach its own player even when every network is trainable.
pub fn total_losses(
    g: &mut Graph,
    models: &Models,
    b: &Bindings,
    batch: &Batch,
    objective: &Objective,
    iteration: u64,
) -> Result<TotalLosses> {
    let d = objective.discriminator_loss(g, models, b, batch)?;
    let c = objective.classifier_loss(g, models, b, batch)?;
    let gt = objective.generator_loss(g, models, b, batch, iteration)?;
    let v = |var: Option<Var>| var.map_or(0.0, |v| g.value(v).item());
    let record = LossRecord {
        l_d: v(Some(d.loss)),
        l_c: v(c.map(|c| c.0)),
        l_g: v(Some(gt.loss)),
        d_adv: v(Some(d.loss)),
        g_adv: v(Some(gt.adv)),
        cls_real: v(c.map(|c| c.1)),
        cls_fake: v(gt.cls_fake),
        cyc: v(Some(gt.cyc)),
        id: v(gt.id),
    };
    Ok(TotalLosses {
        l_d: d.loss,
        l_c: c.map(|c| c.0),
        l_g: gt.loss,
        record,
    })
}
