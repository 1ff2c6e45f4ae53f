//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcstar_core::features::{synth_corpus, SynthConfig, SynthCorpus};
use vcstar_core::models::{ArchConfig, ConditionScope, ConditioningMode, ModelParams, Models, ProjectionKind};
use vcstar_core::objectives::ObjectiveVariant;
use vcstar_core::tensor::Tensor;
use vcstar_core::training::{Trainer, TrainingConfig};
use vcstar_core::{DomainCode, DomainPair};

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Random `q × t` MCEP matrix, dimension-major.
pub fn random_mcep(q: usize, t: usize, seed: u64) -> Vec<f64> {
    random_tensor(&[q * t], seed).into_data()
}

/// Networks for the ST_ADV + modulation configuration at the given widths.
pub fn st_adv_models(arch: &ArchConfig) -> (Models, ModelParams) {
    let v = ObjectiveVariant::StAdv;
    let models = Models::new(
        arch,
        ConditioningMode::ModulationBased,
        ConditionScope::SourceTarget,
        ProjectionKind::SourceTarget,
        v.uses_classifier(),
    )
    .expect("valid arch");
    let params = models.init_params(&mut ChaCha8Rng::seed_from_u64(0)).expect("init");
    (models, params)
}

/// Alternating `(1→2)`, `(2→1)` pairs.
pub fn pairs(batch: usize) -> Vec<DomainPair> {
    (0..batch)
        .map(|i| DomainPair::new(DomainCode::from_index(i % 2), DomainCode::from_index((i + 1) % 2)))
        .collect()
}

pub fn smoke_corpus() -> SynthCorpus {
    synth_corpus(&SynthConfig {
        n_domains: 2,
        n_utterances: 8,
        frames: 256,
        q: 8,
        seed: 0,
    })
    .expect("corpus")
}

pub fn desk_trainer(corpus: &SynthCorpus) -> Trainer {
    let cfg = TrainingConfig {
        variant: ObjectiveVariant::StAdv,
        ..TrainingConfig::desk()
    };
    Trainer::new(&corpus.train, cfg).expect("trainer")
}
