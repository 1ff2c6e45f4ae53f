//! Training checkpoints.
//!
//! Layout: magic `VCK1`, little-endian `u32` manifest length, the JSON
//! manifest, then every tensor listed in the manifest as raw little-endian
//! `f64` values in manifest order. Storing 64-bit values keeps resumed runs
//! bitwise identical to uninterrupted ones.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, RngState, TrainState, TrainingConfig};
use crate::error::{Error, Result};
use crate::features::SpeakerStats;
use crate::models::{ArchConfig, ModelParams, Models};
use crate::params::ParamStore;
use crate::pipeline::ModelConverter;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A resumable snapshot of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    pub arch: ArchConfig,
    /// Per-domain statistics used to normalize training data.
    pub stats: Vec<SpeakerStats>,
    pub state: TrainState,
}

impl Checkpoint {
    /// Rebuilds the networks described by the checkpoint.
    pub fn models(&self) -> Result<Models> {
        let v = self.config.variant;
        Models::new(
            &self.arch,
            self.config.conditioning_mode,
            v.scope(),
            v.projection(),
            v.uses_classifier(),
        )
    }

    /// Converter using the stored generator and training statistics.
    pub fn converter(&self) -> Result<ModelConverter> {
        ModelConverter::new(
            self.models()?.generator,
            self.state.params.g.clone(),
            self.stats.clone(),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdamSteps {
    g: u64,
    d: u64,
    c: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: TrainingConfig,
    arch: ArchConfig,
    iteration: u64,
    rng: RngState,
    adam_steps: AdamSteps,
    stats: Vec<SpeakerStats>,
    tensors: Vec<TensorEntry>,
}

fn collect<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, store: &'a ParamStore) {
    for (name, t) in store.iter() {
        out.push((format!("{prefix}{name}"), t));
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let s = &ckpt.state;
    let mut tensors = Vec::new();
    collect(&mut tensors, "", &s.params.g);
    collect(&mut tensors, "", &s.params.d);
    if let Some(c) = &s.params.c {
        collect(&mut tensors, "", c);
    }
    for opt in [Some(&s.opt_g), Some(&s.opt_d), s.opt_c.as_ref()].into_iter().flatten() {
        collect(&mut tensors, "adam.m.", &opt.m);
        collect(&mut tensors, "adam.v.", &opt.v);
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        config: ckpt.config.clone(),
        arch: ckpt.arch.clone(),
        iteration: s.iteration,
        rng: RngState::capture(&s.rng),
        adam_steps: AdamSteps {
            g: s.opt_g.steps,
            d: s.opt_d.steps,
            c: s.opt_c.as_ref().map(|o| o.steps),
        },
        stats: ckpt.stats.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let payload: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
    let mut out = Vec::with_capacity(8 + json.len() + payload);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(8..8 + len)
        .ok_or_else(|| Error::BadManifest(format!("manifest length {len} exceeds file")))?;
    let value: serde_json::Value =
        serde_json::from_slice(json).map_err(|e| Error::BadManifest(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::BadManifest("missing version".into()))? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let m: Manifest = serde_json::from_value(value).map_err(|e| Error::BadManifest(e.to_string()))?;

    let payload = &bytes[8 + len..];
    let expected: usize = m.tensors.iter().map(|e| e.shape.iter().product::<usize>() * 8).sum();
    if payload.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            found: payload.len(),
        });
    }
    let mut stores: [ParamStore; 9] = Default::default();
    let [g, d, c, mg, vg, md, vd, mc, vc] = &mut stores;
    let mut offset = 0;
    for e in &m.tensors {
        let n: usize = e.shape.iter().product();
        let data = payload[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        offset += n * 8;
        let t = Tensor::new(e.shape.clone(), data)?;
        let (store, name) = if let Some(rest) = e.name.strip_prefix("adam.m.") {
            (route(rest, mg, md, mc)?, rest)
        } else if let Some(rest) = e.name.strip_prefix("adam.v.") {
            (route(rest, vg, vd, vc)?, rest)
        } else {
            (route(&e.name, g, d, c)?, e.name.as_str())
        };
        store.insert(name, t);
    }
    let [g, d, c, mg, vg, md, vd, mc, vc] = stores;
    if g.is_empty() || d.is_empty() {
        return Err(Error::BadManifest("checkpoint lacks generator or discriminator".into()));
    }
    let has_c = !c.is_empty();
    if has_c != m.adam_steps.c.is_some() {
        return Err(Error::BadManifest("classifier tensors and optimizer disagree".into()));
    }
    for (p, mm, vv) in [(&g, &mg, &vg), (&d, &md, &vd), (&c, &mc, &vc)] {
        if p.len() != mm.len() || p.len() != vv.len() {
            return Err(Error::BadManifest("optimizer moments do not match parameters".into()));
        }
    }
    let state = TrainState {
        iteration: m.iteration,
        params: ModelParams {
            g,
            d,
            c: has_c.then_some(c),
        },
        opt_g: Adam {
            m: mg,
            v: vg,
            steps: m.adam_steps.g,
        },
        opt_d: Adam {
            m: md,
            v: vd,
            steps: m.adam_steps.d,
        },
        opt_c: m.adam_steps.c.map(|steps| Adam { m: mc, v: vc, steps }),
        rng: m.rng.restore(),
    };
    Ok(Checkpoint {
        config: m.config,
        arch: m.arch,
        stats: m.stats,
        state,
    })
}

fn route<'a>(
    name: &str,
    g: &'a mut ParamStore,
    d: &'a mut ParamStore,
    c: &'a mut ParamStore,
) -> Result<&'a mut ParamStore> {
    match name.split('.').next() {
        Some("g") => Ok(g),
        Some("d") => Ok(d),
        Some("c") => Ok(c),
        _ => Err(Error::BadManifest(format!("unknown tensor `{name}`"))),
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
