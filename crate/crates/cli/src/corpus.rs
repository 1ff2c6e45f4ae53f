//! On-disk corpus layout.
//!
//! ```text
//! <dir>/corpus.json            index: domains, Q, relative feature paths
//! <dir>/ground_truth.json      parallel evaluation groups (synthetic corpora)
//! <dir>/train/d<k>/u<nnn>.vcf  non-parallel training utterances
//! <dir>/eval/d<k>/u<nnn>.vcf   evaluation utterance u rendered in domain k
//! ```
//!
//! Domain directories use the 1-based domain id. Every feature file has a
//! `.meta.json` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vcstar_core::features::{
    load_features, save_features, write_meta, DomainTransform, FeatureMeta, FeatureSequence,
    SynthCorpus,
};
use vcstar_core::DomainCode;

pub const INDEX_FILE: &str = "corpus.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub n_domains: usize,
    pub q: usize,
    /// `train[k]`: training files of domain `k + 1`, relative to the corpus dir.
    pub train: Vec<Vec<String>>,
    /// `eval[k][u]`: utterance `u` in domain `k + 1`; parallel across domains.
    #[serde(default)]
    pub eval: Vec<Vec<String>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruthGroup {
    pub utterance: usize,
    /// One rendering per domain, in domain order.
    pub renderings: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    pub description: String,
    pub groups: Vec<GroundTruthGroup>,
    pub transforms: Vec<DomainTransform>,
}

pub struct LoadedCorpus {
    pub train: Vec<Vec<FeatureSequence>>,
    pub eval: Vec<Vec<FeatureSequence>>,
}

fn rel(split: &str, k: usize, u: usize) -> String {
    format!("{split}/d{}/u{u:03}.vcf", DomainCode::from_index(k).id())
}

fn write_split(
    dir: &Path,
    split: &str,
    seqs: &[Vec<FeatureSequence>],
    provenance: &str,
) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::with_capacity(seqs.len());
    for (k, utts) in seqs.iter().enumerate() {
        let mut names = Vec::with_capacity(utts.len());
        for (u, x) in utts.iter().enumerate() {
            let name = rel(split, k, u);
            let path = dir.join(&name);
            fs::create_dir_all(path.parent().expect("file has a parent"))?;
            save_features(x, &path).with_context(|| format!("writing {}", path.display()))?;
            let meta = FeatureMeta {
                speaker: format!("d{}", DomainCode::from_index(k).id()),
                domain: Some(DomainCode::from_index(k).id()),
                provenance: format!("{provenance}; {split} utterance {u}"),
            };
            write_meta(&path, &meta)?;
            names.push(name);
        }
        out.push(names);
    }
    Ok(out)
}

/// Writes a synthetic corpus and returns every file written, relative to `dir`.
pub fn write_synth_corpus(dir: &Path, corpus: &SynthCorpus) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let cfg = &corpus.config;
    let provenance = format!(
        "synthetic corpus, seed {}, {} domains, Q {}, {} frames",
        cfg.seed, cfg.n_domains, cfg.q, cfg.frames
    );
    let train = write_split(dir, "train", &corpus.train, &provenance)?;
    let eval = write_split(dir, "eval", &corpus.eval, &provenance)?;
    let index = CorpusIndex {
        n_domains: corpus.n_domains(),
        q: cfg.q,
        train,
        eval,
    };
    let groups = (0..cfg.n_utterances)
        .map(|u| GroundTruthGroup {
            utterance: u,
            renderings: index.eval.iter().map(|d| d[u].clone()).collect(),
        })
        .collect();
    let truth = GroundTruth {
        description: "each group renders one latent utterance in every domain; \
                      the rendering in the target domain is the conversion reference"
            .into(),
        groups,
        transforms: corpus.transforms.clone(),
    };
    crate::write_json(&dir.join(INDEX_FILE), &index)?;
    crate::write_json(&dir.join(GROUND_TRUTH_FILE), &truth)?;

    let mut files = vec![PathBuf::from(INDEX_FILE), PathBuf::from(GROUND_TRUTH_FILE)];
    for name in index.train.iter().chain(&index.eval).flatten() {
        files.push(PathBuf::from(name));
        files.push(PathBuf::from(name).with_extension("meta.json"));
    }
    Ok(files)
}

pub fn load_corpus(dir: &Path) -> Result<LoadedCorpus> {
    let index_path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path)
        .with_context(|| format!("reading corpus index {}", index_path.display()))?;
    let index: CorpusIndex = serde_json::from_str(&text)
        .with_context(|| format!("parsing corpus index {}", index_path.display()))?;
    if index.train.len() != index.n_domains {
        bail!(vcstar_core::Error::BadManifest(format!(
            "index lists {} training domains but declares {}",
            index.train.len(),
            index.n_domains
        )));
    }
    let load = |names: &[Vec<String>]| -> Result<Vec<Vec<FeatureSequence>>> {
        names
            .iter()
            .map(|d| {
                d.iter()
                    .map(|n| {
                        let p = dir.join(n);
                        load_features(&p).with_context(|| format!("loading {}", p.display()))
                    })
                    .collect()
            })
            .collect()
    };
    let train = load(&index.train)?;
    let eval = load(&index.eval)?;
    if let Some(x) = train.iter().chain(&eval).flatten().find(|x| x.q() != index.q) {
        bail!(vcstar_core::Error::Shape(format!(
            "index declares Q = {} but a feature file has Q = {}",
            index.q,
            x.q()
        )));
    }
    Ok(LoadedCorpus { train, eval })
}
