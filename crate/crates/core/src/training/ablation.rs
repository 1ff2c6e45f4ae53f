//! Variant comparison: one model per variant and seed, scored on a
//! parallel evaluation set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_json, Trainer, TrainingConfig};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::metrics::evaluate_corpus;
use crate::models::ConditioningMode;
use crate::objectives::{LossWeights, ObjectiveVariant};

/// Models trained per variant, with seeds `base, base + 1, base + 2`.
pub const ABLATION_SEEDS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// The four objective variants with the configured conditioning.
    Objective,
    /// Channel-wise versus modulation-based conditioning under ST_ADV.
    Conditioning,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "objective" => Ok(Self::Objective),
            "conditioning" => Ok(Self::Conditioning),
            _ => Err(Error::InvalidArgument(format!(
                "unknown ablation axis `{s}` (expected objective or conditioning)"
            ))),
        }
    }
}

impl AblationAxis {
    /// `(label, variant, conditioning)` for every row.
    pub fn variants(self, base: &TrainingConfig) -> Vec<(String, ObjectiveVariant, ConditioningMode)> {
        match self {
            Self::Objective => ObjectiveVariant::ALL
                .into_iter()
                .map(|v| (v.label().to_string(), v, base.conditioning_mode))
                .collect(),
            Self::Conditioning => [ConditioningMode::ChannelWise, ConditioningMode::ModulationBased]
                .into_iter()
                .map(|m| {
                    let label = match m {
                        ConditioningMode::ChannelWise => "channel_wise",
                        ConditioningMode::ModulationBased => "modulation_based",
                    };
                    (label.to_string(), ObjectiveVariant::StAdv, m)
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub objective: ObjectiveVariant,
    pub conditioning: ConditioningMode,
    pub seeds: Vec<u64>,
    pub mcd_db: Vec<f64>,
    pub msd_db: Vec<f64>,
    pub mcd_mean: f64,
    pub mcd_std: f64,
    pub msd_mean: f64,
    pub msd_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub iterations: u64,
    pub weights: LossWeights,
    /// Standard deviations use the `n − 1` denominator.
    pub std_convention: String,
    pub rows: Vec<AblationRow>,
}

/// Mean and sample standard deviation.
pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "variant", "objective", "conditioning", "n_seeds", "mcd_mean", "mcd_std", "msd_mean", "msd_std",
        ])?;
        for r in &self.rows {
            let cond = serde_json::to_value(r.conditioning)?;
            w.write_record([
                r.variant.clone(),
                r.objective.label().to_string(),
                cond.as_str().unwrap_or_default().to_string(),
                r.seeds.len().to_string(),
                r.mcd_mean.to_string(),
                r.mcd_std.to_string(),
                r.msd_mean.to_string(),
                r.msd_std.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }
}

/// Trains every variant of `axis` under [`ABLATION_SEEDS`] seeds and
/// reports mean ± std of corpus MCD and MSD on the parallel `eval` set.
pub fn ablation_run(
    train: &[Vec<FeatureSequence>],
    eval: &[Vec<FeatureSequence>],
    base: &TrainingConfig,
    axis: AblationAxis,
) -> Result<AblationReport> {
    if eval.len() != train.len() || eval.iter().any(|d| d.is_empty()) {
        return Err(Error::MissingGroundTruth(
            "ablation needs a parallel evaluation set covering every domain".into(),
        ));
    }
    let n_utts = eval[0].len();
    if eval.iter().any(|d| d.len() != n_utts) {
        return Err(Error::MissingGroundTruth("evaluation domains are not parallel".into()));
    }
    let mut rows = Vec::new();
    for (label, variant, mode) in axis.variants(base) {
        let mut seeds = Vec::with_capacity(ABLATION_SEEDS);
        let (mut mcd, mut msd) = (Vec::new(), Vec::new());
        for k in 0..ABLATION_SEEDS as u64 {
            let cfg = TrainingConfig {
                variant,
                conditioning_mode: mode,
                seed: base.seed + k,
                ..base.clone()
            };
            let trainer = Trainer::new(train, cfg)?;
            let mut state = trainer.init_state()?;
            trainer.run(&mut state, None)?;
            let report = evaluate_corpus(&trainer.converter(&state)?, eval)?;
            log::info!(
                "{label} seed {}: MCD {:.3} dB, MSD {:.3} dB",
                base.seed + k,
                report.overall.mcd_db,
                report.overall.msd_db
            );
            seeds.push(base.seed + k);
            mcd.push(report.overall.mcd_db);
            msd.push(report.overall.msd_db);
        }
        let (mcd_mean, mcd_std) = mean_std(&mcd);
        let (msd_mean, msd_std) = mean_std(&msd);
        rows.push(AblationRow {
            variant: label,
            objective: variant,
            conditioning: mode,
            seeds,
            mcd_db: mcd,
            msd_db: msd,
            mcd_mean,
            mcd_std,
            msd_mean,
            msd_std,
        });
    }
    Ok(AblationReport {
        axis,
        iterations: base.iterations,
        weights: base.weights,
        std_convention: "sample (n - 1)".into(),
        rows,
    })
}
