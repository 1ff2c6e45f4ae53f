//! Corpus-level evaluation over every ordered pair of distinct domains.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mcd_detail, msd, McepView, MS_FLOOR, MS_HOP, MS_WINDOW};
use crate::domain::{DomainCode, DomainPair};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::pipeline::Converter;

/// Metric conventions recorded with every report so numbers stay comparable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConventions {
    pub mcd_dims: String,
    pub mcd_alignment: String,
    pub ms_window: usize,
    pub ms_hop: usize,
    pub ms_window_fn: String,
    pub ms_quantity: String,
    pub ms_floor: f64,
}

impl Default for MetricConventions {
    fn default() -> Self {
        Self {
            mcd_dims: "all stored dimensions, including 0".into(),
            mcd_alignment: "DTW, Euclidean frame distance, steps (1,0) (0,1) (1,1), endpoints pinned".into(),
            ms_window: MS_WINDOW,
            ms_hop: MS_HOP,
            ms_window_fn: "periodic Hann".into(),
            ms_quantity: "log10 of window-averaged DFT power".into(),
            ms_floor: MS_FLOOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub source: DomainCode,
    pub target: DomainCode,
    pub utterance: usize,
    pub mcd_db: f64,
    pub msd_db: f64,
    pub path_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub source: DomainCode,
    pub target: DomainCode,
    pub count: usize,
    pub mcd_db: f64,
    pub msd_db: f64,
    pub mean_path_len: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverallSummary {
    pub count: usize,
    pub mcd_db: f64,
    pub msd_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub conventions: MetricConventions,
    pub utterances: Vec<UtteranceScore>,
    pub pairs: Vec<PairSummary>,
    pub overall: OverallSummary,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl EvalReport {
    /// One row per conversion pair.
    pub fn write_pairs_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["source", "target", "count", "mcd_db", "msd_db", "mean_path_len"])?;
        for p in &self.pairs {
            w.write_record([
                p.source.to_string(),
                p.target.to_string(),
                p.count.to_string(),
                p.mcd_db.to_string(),
                p.msd_db.to_string(),
                p.mean_path_len.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per converted utterance.
    pub fn write_utterances_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["source", "target", "utterance", "mcd_db", "msd_db", "path_len"])?;
        for u in &self.utterances {
            w.write_record([
                u.source.to_string(),
                u.target.to_string(),
                u.utterance.to_string(),
                u.mcd_db.to_string(),
                u.msd_db.to_string(),
                u.path_len.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

/// Converts every utterance of every domain into every other domain and
/// scores it against the parallel reference `eval[target][utterance]`.
pub fn evaluate_corpus(converter: &dyn Converter, eval: &[Vec<FeatureSequence>]) -> Result<EvalReport> {
    let n = eval.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("evaluation needs at least 2 domains, got {n}")));
    }
    let mut utterances = Vec::new();
    let mut pairs = Vec::new();
    for s in 0..n {
        for t in (0..n).filter(|&t| t != s) {
            let pair = DomainPair::new(DomainCode::from_index(s), DomainCode::from_index(t));
            let start = utterances.len();
            for (u, x) in eval[s].iter().enumerate() {
                let reference = eval[t].get(u).ok_or_else(|| {
                    Error::MissingGroundTruth(format!("no reference for utterance {u} in domain {}", pair.target))
                })?;
                let y = converter.convert(x, pair)?;
                let m = mcd_detail(McepView::from(reference), McepView::from(&y), true)?;
                let d = msd(McepView::from(reference), McepView::from(&y))?;
                utterances.push(UtteranceScore {
                    source: pair.source,
                    target: pair.target,
                    utterance: u,
                    mcd_db: m.db,
                    msd_db: d,
                    path_len: m.path_len,
                });
            }
            let rows = &utterances[start..];
            pairs.push(PairSummary {
                source: pair.source,
                target: pair.target,
                count: rows.len(),
                mcd_db: mean(rows.iter().map(|r| r.mcd_db)),
                msd_db: mean(rows.iter().map(|r| r.msd_db)),
                mean_path_len: mean(rows.iter().map(|r| r.path_len as f64)),
            });
        }
    }
    let overall = OverallSummary {
        count: utterances.len(),
        mcd_db: mean(utterances.iter().map(|r| r.mcd_db)),
        msd_db: mean(utterances.iter().map(|r| r.msd_db)),
    };
    Ok(EvalReport {
        model: converter.name(),
        conventions: MetricConventions::default(),
        utterances,
        pairs,
        overall,
    })
}
