//! Conversion of whole feature sequences between domains.
//!
//! A model conversion normalizes MCEPs with the source domain's statistics,
//! runs the generator on `(source, target)`, denormalizes with the target
//! statistics, maps log F0 by the Gaussian transform and passes the
//! aperiodicity reference through unchanged.

use crate::domain::DomainPair;
use crate::error::{Error, Result};
use crate::features::{convert_log_f0, denormalize, normalize, FeatureSequence, SpeakerStats};
use crate::models::{Generator, STRIDE_PRODUCT};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Anything that maps a sequence from one domain to another.
pub trait Converter {
    fn name(&self) -> String;
    fn convert(&self, x: &FeatureSequence, pair: DomainPair) -> Result<FeatureSequence>;
}

/// Returns the input unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityConverter;

impl Converter for IdentityConverter {
    fn name(&self) -> String {
        "identity".into()
    }

    fn convert(&self, x: &FeatureSequence, _pair: DomainPair) -> Result<FeatureSequence> {
        Ok(x.clone())
    }
}

/// Looks the input up in a parallel evaluation set (`eval[domain][utt]`)
/// and returns the matching utterance of the target domain.
#[derive(Clone, Copy, Debug)]
pub struct OracleConverter<'a> {
    eval: &'a [Vec<FeatureSequence>],
}

impl<'a> OracleConverter<'a> {
    pub fn new(eval: &'a [Vec<FeatureSequence>]) -> Self {
        Self { eval }
    }
}

impl Converter for OracleConverter<'_> {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn convert(&self, x: &FeatureSequence, pair: DomainPair) -> Result<FeatureSequence> {
        let n = self.eval.len();
        let src = pair.source.check(n)?.index();
        let tgt = pair.target.check(n)?.index();
        let u = self.eval[src]
            .iter()
            .position(|s| s == x)
            .ok_or_else(|| Error::MissingGroundTruth(format!("input is not an utterance of domain {}", pair.source)))?;
        self.eval[tgt].get(u).cloned().ok_or_else(|| {
            Error::MissingGroundTruth(format!("domain {} has no utterance {u}", pair.target))
        })
    }
}

/// Appends mirrored frames (excluding the edge frame) until `new_t`.
/// Sequences too short to mirror repeat their first frame.
pub fn reflect_pad_frames(mcep: &[f64], q: usize, t: usize, new_t: usize) -> Vec<f64> {
    let src = |i: usize| -> usize {
        if i < t {
            i
        } else {
            (2 * (t - 1)).saturating_sub(i)
        }
    };
    let mut out = Vec::with_capacity(q * new_t);
    for d in 0..q {
        let row = &mcep[d * t..(d + 1) * t];
        out.extend((0..new_t).map(|i| row[src(i)]));
    }
    out
}

/// A trained generator plus the per-domain statistics it was trained with.
#[derive(Clone, Debug)]
pub struct ModelConverter {
    pub generator: Generator,
    pub params: ParamStore,
    pub stats: Vec<SpeakerStats>,
}

impl ModelConverter {
    pub fn new(generator: Generator, params: ParamStore, stats: Vec<SpeakerStats>) -> Result<Self> {
        let c = &generator.config;
        if stats.len() != c.n_domains {
            return Err(Error::InvalidArgument(format!(
                "{} statistics for {} domains",
                stats.len(),
                c.n_domains
            )));
        }
        if let Some(s) = stats.iter().find(|s| s.q() != c.q) {
            return Err(Error::Shape(format!("statistics for Q = {}, model has Q = {}", s.q(), c.q)));
        }
        Ok(Self {
            generator,
            params,
            stats,
        })
    }

    /// Runs the generator on normalized MCEPs of any length.
    pub fn convert_normalized(&self, x: &FeatureSequence, pair: DomainPair) -> Result<Vec<f64>> {
        let (q, t) = (x.q(), x.frames());
        let padded_t = t.div_ceil(STRIDE_PRODUCT) * STRIDE_PRODUCT;
        let input = Tensor::new(vec![1, q, padded_t], reflect_pad_frames(x.mcep(), q, t, padded_t))?;
        let y = self.generator.convert(&self.params, &input, &[pair])?;
        let mut out = Vec::with_capacity(q * t);
        for row in y.data().chunks(padded_t) {
            out.extend_from_slice(&row[..t]);
        }
        Ok(out)
    }
}

impl Converter for ModelConverter {
    fn name(&self) -> String {
        "model".into()
    }

    fn convert(&self, x: &FeatureSequence, pair: DomainPair) -> Result<FeatureSequence> {
        let n = self.stats.len();
        let src = &self.stats[pair.source.check(n)?.index()];
        let tgt = &self.stats[pair.target.check(n)?.index()];
        let norm = normalize(x, src)?;
        let y = norm.with_mcep(self.convert_normalized(&norm, pair)?)?;
        let y = denormalize(&y, tgt)?;
        let f0 = convert_log_f0(x.log_f0(), x.voiced(), src, tgt)?;
        y.with_log_f0(f0)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::domain::DomainCode;
    use crate::features::{compute_speaker_stats, synth_corpus, SynthConfig};
    use crate::models::{ArchConfig, ConditionScope, ConditioningMode, GeneratorConfig};

    fn pair(s: usize, t: usize) -> DomainPair {
        DomainPair::new(DomainCode::from_index(s), DomainCode::from_index(t))
    }

    #[test]
    fn reflect_padding_mirrors_tail() {
        let x = [1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        assert_eq!(
            reflect_pad_frames(&x, 2, 3, 5),
            vec![1.0, 2.0, 3.0, 2.0, 1.0, 10.0, 20.0, 30.0, 20.0, 10.0]
        );
        assert_eq!(reflect_pad_frames(&[5.0], 1, 1, 4), vec![5.0; 4]);
    }

    fn corpus() -> crate::features::SynthCorpus {
        synth_corpus(&SynthConfig {
            n_domains: 3,
            n_utterances: 2,
            frames: 130,
            q: 6,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn oracle_returns_parallel_target() {
        let c = corpus();
        let o = OracleConverter::new(&c.eval);
        let y = o.convert(&c.eval[0][1], pair(0, 2)).unwrap();
        assert_eq!(&y, &c.eval[2][1]);
        assert!(matches!(
            o.convert(&c.eval[1][0], pair(0, 2)),
            Err(Error::MissingGroundTruth(_))
        ));
    }

    #[test]
    fn model_conversion_handles_any_length_and_side_channels() {
        let c = corpus();
        let stats: Vec<_> = c.train.iter().map(|d| compute_speaker_stats(d).unwrap()).collect();
        let arch = ArchConfig::desk(6, 3);
        let gen = Generator::new(GeneratorConfig::from_arch(
            &arch,
            ConditioningMode::ModulationBased,
            ConditionScope::SourceTarget,
        ));
        let params = gen.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let conv = ModelConverter::new(gen, params, stats.clone()).unwrap();
        let x = &c.eval[0][0];
        assert_eq!(x.frames(), 130);
        let y = conv.convert(x, pair(0, 1)).unwrap();
        assert_eq!((y.q(), y.frames()), (6, 130));
        assert_eq!(y.ap_ref, x.ap_ref);
        assert_eq!(y.voiced(), x.voiced());
        let expect = convert_log_f0(x.log_f0(), x.voiced(), &stats[0], &stats[1]).unwrap();
        assert_eq!(y.log_f0(), expect.as_slice());
        assert!(y.mcep().iter().all(|v| v.is_finite()));
        assert!(conv.convert(x, pair(0, 3)).is_err());
    }
}
