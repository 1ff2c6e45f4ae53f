//! Optimization loop, checkpoints and the variant comparison harness.

mod ablation;
mod adam;
mod checkpoint;

pub use ablation::{ablation_run, AblationAxis, AblationReport, AblationRow, ABLATION_SEEDS};
pub use adam::{Adam, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::DomainCode;
use crate::error::{Error, Result};
use crate::features::{compute_speaker_stats, crop_segment, normalize, FeatureSequence, SpeakerStats};
use crate::models::{ArchConfig, ConditioningMode, ModelParams, Models};
use crate::objectives::{
    sample_target_codes, Batch, Bindings, LossRecord, LossWeights, Objective, ObjectiveVariant, Player,
    DEFAULT_ID_CUTOFF,
};
use crate::pipeline::ModelConverter;
use crate::tensor::Tensor;

/// Channel widths of the three networks; `Q` and `N` come from the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Widths {
    pub g_channels: [usize; 2],
    pub g_bottleneck: usize,
    pub g_blocks: usize,
    pub d_channels: [usize; 2],
    pub c_channels: usize,
}

impl Widths {
    pub fn desk() -> Self {
        Self::from_arch(&ArchConfig::desk(1, 2))
    }

    pub fn full() -> Self {
        Self::from_arch(&ArchConfig::full_scale(1, 2))
    }

    fn from_arch(a: &ArchConfig) -> Self {
        Self {
            g_channels: a.g_channels,
            g_bottleneck: a.g_bottleneck,
            g_blocks: a.g_blocks,
            d_channels: a.d_channels,
            c_channels: a.c_channels,
        }
    }

    pub fn arch(&self, q: usize, n_domains: usize) -> ArchConfig {
        ArchConfig {
            q,
            n_domains,
            g_channels: self.g_channels,
            g_bottleneck: self.g_bottleneck,
            g_blocks: self.g_blocks,
            d_channels: self.d_channels,
            c_channels: self.c_channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub segment_len: usize,
    pub iterations: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub weights: LossWeights,
    pub variant: ObjectiveVariant,
    pub conditioning_mode: ConditioningMode,
    pub seed: u64,
    pub id_cutoff: u64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: u64,
    pub widths: Widths,
}

impl TrainingConfig {
    /// Small networks and short runs that finish in minutes on one core.
    pub fn desk() -> Self {
        Self {
            batch_size: 4,
            segment_len: 64,
            iterations: 2000,
            lr_g: 1e-3,
            lr_d: 5e-4,
            adam_beta1: 0.5,
            weights: LossWeights::default(),
            variant: ObjectiveVariant::StAdv,
            conditioning_mode: ConditioningMode::ModulationBased,
            seed: 0,
            id_cutoff: DEFAULT_ID_CUTOFF,
            checkpoint_every: 1000,
            widths: Widths {
                g_channels: [8, 16],
                g_bottleneck: 16,
                g_blocks: 2,
                d_channels: [8, 16],
                c_channels: 8,
            },
        }
    }

    /// The full-scale recipe: batch 8, 128-frame crops, 3·10⁵ iterations,
    /// Adam(β₁ = 0.5) with rates 2·10⁻⁴ / 10⁻⁴, λ = (1, 10, 5), identity
    /// loss for the first 10⁴ iterations.
    pub fn full() -> Self {
        Self {
            batch_size: 8,
            segment_len: 128,
            iterations: 300_000,
            lr_g: 2e-4,
            lr_d: 1e-4,
            adam_beta1: 0.5,
            weights: LossWeights::default(),
            variant: ObjectiveVariant::StAdv,
            conditioning_mode: ConditioningMode::ModulationBased,
            seed: 0,
            id_cutoff: DEFAULT_ID_CUTOFF,
            checkpoint_every: 10_000,
            widths: Widths::full(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            _ => Err(Error::InvalidArgument(format!("unknown preset `{name}` (expected desk or full)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.segment_len == 0 || !self.segment_len.is_multiple_of(crate::models::STRIDE_PRODUCT) {
            return bad(format!(
                "segment_len must be a positive multiple of {}, got {}",
                crate::models::STRIDE_PRODUCT,
                self.segment_len
            ));
        }
        if !(self.lr_g.is_finite() && self.lr_g >= 0.0 && self.lr_d.is_finite() && self.lr_d >= 0.0) {
            return bad("learning rates must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return bad(format!("adam_beta1 must lie in [0, 1), got {}", self.adam_beta1));
        }
        self.weights.validate()
    }

    pub fn objective(&self) -> Objective {
        Objective {
            variant: self.variant,
            weights: self.weights,
            id_cutoff: self.id_cutoff,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Reproducible position of a ChaCha8 generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed iterations.
    pub iteration: u64,
    pub params: ModelParams,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub opt_c: Option<Adam>,
    pub rng: ChaCha8Rng,
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    pub losses: LossRecord,
}

/// Writes the loss log as CSV with a header row.
pub fn write_loss_log(rows: &[LogRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iteration"];
    header.extend(LossRecord::COLUMNS);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.iteration.to_string()];
        rec.extend(r.losses.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a log written by [`write_loss_log`].
pub fn read_loss_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("bad loss log field {i}")))
        };
        let v: Vec<f64> = (1..=9).map(parse).collect::<Result<_>>()?;
        rows.push(LogRow {
            iteration: parse(0)? as u64,
            losses: LossRecord {
                l_d: v[0],
                l_c: v[1],
                l_g: v[2],
                d_adv: v[3],
                g_adv: v[4],
                cls_real: v[5],
                cls_fake: v[6],
                cyc: v[7],
                id: v[8],
            },
        });
    }
    Ok(rows)
}

/// Networks, normalized training data and statistics for one run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainingConfig,
    pub arch: ArchConfig,
    pub models: Models,
    pub stats: Vec<SpeakerStats>,
    data: Vec<Vec<FeatureSequence>>,
}

impl Trainer {
    /// `train[d]` holds the (non-parallel) utterances of domain `d`.
    pub fn new(train: &[Vec<FeatureSequence>], config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        if train.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "training needs at least 2 domains, got {}",
                train.len()
            )));
        }
        let q = train
            .iter()
            .flatten()
            .next()
            .ok_or(Error::EmptyCorpus)?
            .q();
        let mut stats = Vec::with_capacity(train.len());
        let mut data = Vec::with_capacity(train.len());
        for (d, utts) in train.iter().enumerate() {
            if utts.is_empty() {
                return Err(Error::EmptyCorpus);
            }
            if let Some(u) = utts.iter().find(|u| u.frames() < config.segment_len) {
                return Err(Error::TooShort {
                    len: u.frames(),
                    required: config.segment_len,
                });
            }
            let s = compute_speaker_stats(utts)?;
            data.push(utts.iter().map(|u| normalize(u, &s)).collect::<Result<Vec<_>>>()?);
            log::debug!("domain {}: {} utterances", DomainCode::from_index(d), utts.len());
            stats.push(s);
        }
        let arch = config.widths.arch(q, train.len());
        let v = config.variant;
        let models = Models::new(
            &arch,
            config.conditioning_mode,
            v.scope(),
            v.projection(),
            v.uses_classifier(),
        )?;
        Ok(Self {
            config,
            arch,
            models,
            stats,
            data,
        })
    }

    pub fn n_domains(&self) -> usize {
        self.data.len()
    }

    /// Fresh parameters (init stream 0) and a data stream (stream 1), both
    /// derived from the configured seed.
    pub fn init_state(&self) -> Result<TrainState> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let params = self.models.init_params(&mut init_rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1);
        Ok(TrainState {
            iteration: 0,
            opt_g: Adam::new(&params.g),
            opt_d: Adam::new(&params.d),
            opt_c: params.c.as_ref().map(Adam::new),
            params,
            rng,
        })
    }

    /// Samples domain, utterance and crop per instance, then a target code.
    pub fn sample_batch(&self, rng: &mut ChaCha8Rng) -> Result<Batch> {
        let (b, len) = (self.config.batch_size, self.config.segment_len);
        let q = self.arch.q;
        let mut x = Vec::with_capacity(b * q * len);
        let mut source = Vec::with_capacity(b);
        for _ in 0..b {
            let d = rng.random_range(0..self.n_domains());
            let utts = &self.data[d];
            let u = rng.random_range(0..utts.len());
            let seg = crop_segment(&utts[u], len, rng)?;
            x.extend_from_slice(seg.mcep());
            source.push(DomainCode::from_index(d));
        }
        let target = sample_target_codes(rng, self.n_domains(), b);
        Batch::new(Tensor::new(vec![b, q, len], x)?, source, target)
    }

    /// One discriminator update, one classifier update (when present) and
    /// one generator update on the same batch.
    pub fn step(&self, state: &mut TrainState) -> Result<LossRecord> {
        let cfg = &self.config;
        let obj = cfg.objective();
        let batch = self.sample_batch(&mut state.rng)?;
        let it = state.iteration;
        let mut rec = LossRecord::default();

        let mut g = crate::autograd::Graph::new();
        let b = Bindings::new(&mut g, &state.params, &[Player::Discriminator]);
        let d = obj.discriminator_loss(&mut g, &self.models, &b, &batch)?;
        rec.l_d = g.value(d.loss).item();
        rec.d_adv = rec.l_d;
        self.check_finite(it, &rec)?;
        let grads = g.backward(d.loss)?;
        let gd = b.d.collect_grads(&g, &grads);
        state.opt_d.update(&mut state.params.d, &gd, cfg.lr_d, cfg.adam_beta1)?;

        if self.models.classifier.is_some() {
            let mut g = crate::autograd::Graph::new();
            let b = Bindings::new(&mut g, &state.params, &[Player::Classifier]);
            if let Some((lc, raw)) = obj.classifier_loss(&mut g, &self.models, &b, &batch)? {
                rec.l_c = g.value(lc).item();
                rec.cls_real = g.value(raw).item();
                self.check_finite(it, &rec)?;
                let grads = g.backward(lc)?;
                let bound = b.c.as_ref().ok_or_else(|| Error::MissingModel("classifier".into()))?;
                let gc = bound.collect_grads(&g, &grads);
                if let (Some(cp), Some(opt)) = (state.params.c.as_mut(), state.opt_c.as_mut()) {
                    opt.update(cp, &gc, cfg.lr_d, cfg.adam_beta1)?;
                }
            }
        }

        let mut g = crate::autograd::Graph::new();
        let b = Bindings::new(&mut g, &state.params, &[Player::Generator]);
        let t = obj.generator_loss(&mut g, &self.models, &b, &batch, it)?;
        let val = |v: Option<crate::autograd::Var>| v.map_or(0.0, |v| g.value(v).item());
        rec.l_g = val(Some(t.loss));
        rec.g_adv = val(Some(t.adv));
        rec.cls_fake = val(t.cls_fake);
        rec.cyc = val(Some(t.cyc));
        rec.id = val(t.id);
        self.check_finite(it, &rec)?;
        let grads = g.backward(t.loss)?;
        let gg = b.g.collect_grads(&g, &grads);
        state.opt_g.update(&mut state.params.g, &gg, cfg.lr_g, cfg.adam_beta1)?;

        state.iteration += 1;
        Ok(rec)
    }

    fn check_finite(&self, iteration: u64, rec: &LossRecord) -> Result<()> {
        if rec.all_finite() {
            return Ok(());
        }
        let snapshot = serde_json::to_string(rec).unwrap_or_else(|_| format!("{rec:?}"));
        log::error!("non-finite loss at iteration {iteration}: {snapshot}");
        Err(Error::NumericalAbort { iteration, snapshot })
    }

    /// Runs until `state.iteration == config.iterations`, writing periodic
    /// checkpoints into `checkpoint_dir` when given.
    pub fn run(&self, state: &mut TrainState, checkpoint_dir: Option<&Path>) -> Result<Vec<LogRow>> {
        let mut log = Vec::new();
        while state.iteration < self.config.iterations {
            let iteration = state.iteration;
            let losses = self.step(state)?;
            log.push(LogRow { iteration, losses });
            if iteration.is_multiple_of(100) {
                log::info!(
                    "iter {iteration}: L_D {:.4} L_G {:.4} cyc {:.4} id {:.4}",
                    losses.l_d,
                    losses.l_g,
                    losses.cyc,
                    losses.id
                );
            }
            let every = self.config.checkpoint_every;
            if let Some(dir) = checkpoint_dir {
                if every > 0 && state.iteration.is_multiple_of(every) {
                    save_checkpoint(&self.checkpoint(state), &checkpoint_path(dir, state.iteration))?;
                }
            }
        }
        Ok(log)
    }

    pub fn checkpoint(&self, state: &TrainState) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            arch: self.arch.clone(),
            stats: self.stats.clone(),
            state: state.clone(),
        }
    }

    /// Rebuilds a trainer for a checkpoint's configuration and checks that
    /// it matches the corpus.
    pub fn resume(train: &[Vec<FeatureSequence>], ckpt: &Checkpoint) -> Result<Self> {
        let t = Self::new(train, ckpt.config.clone())?;
        if t.arch != ckpt.arch {
            return Err(Error::BadManifest(format!(
                "checkpoint built for {:?}, corpus gives {:?}",
                ckpt.arch, t.arch
            )));
        }
        let fresh = t.models.init_params(&mut ChaCha8Rng::seed_from_u64(0))?;
        let layout = |p: &ModelParams| {
            let mut v: Vec<(String, Vec<usize>)> = Vec::new();
            for store in [Some(&p.g), Some(&p.d), p.c.as_ref()].into_iter().flatten() {
                v.extend(store.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())));
            }
            v
        };
        if layout(&fresh) != layout(&ckpt.state.params) {
            return Err(Error::BadManifest(
                "checkpoint tensors do not match the configured networks".into(),
            ));
        }
        Ok(t)
    }

    pub fn converter(&self, state: &TrainState) -> Result<ModelConverter> {
        ModelConverter::new(self.models.generator.clone(), state.params.g.clone(), self.stats.clone())
    }
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("ckpt_{iteration:08}.vck"))
}

/// Trains from scratch for `config.iterations` iterations.
pub fn train_loop(train: &[Vec<FeatureSequence>], config: &TrainingConfig) -> Result<(Trainer, TrainState, Vec<LogRow>)> {
    let trainer = Trainer::new(train, config.clone())?;
    let mut state = trainer.init_state()?;
    let log = trainer.run(&mut state, None)?;
    Ok((trainer, state, log))
}

/// Writes a JSON value followed by a newline.
pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests;
