use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use serde::Serialize;
use vcstar_core::features::{
    load_features, read_meta, save_features, synth_corpus, write_meta, FeatureMeta, SynthConfig,
};
use vcstar_core::metrics::{evaluate_corpus, EvalReport};
use vcstar_core::pipeline::{Converter, IdentityConverter, OracleConverter};
use vcstar_core::training::{
    ablation_run, load_checkpoint, read_loss_log, save_checkpoint, write_loss_log, AblationReport,
    Checkpoint, LogRow, Trainer, TrainingConfig,
};
use vcstar_core::{DomainCode, DomainPair, Error};

use crate::corpus::{load_corpus, write_synth_corpus, INDEX_FILE};
use crate::manifest::{ManifestBuilder, MANIFEST_FILE};
use crate::{
    write_json, AblateArgs, Cli, Command, ConfigArgs, ConvertArgs, EvaluateArgs, SynthArgs,
    TrainArgs, UsageError,
};

pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.vck";
pub const LOSS_FILE: &str = "losses.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const ABORT_FILE: &str = "abort.json";

pub fn run(cli: &Cli, args: &[String]) -> Result<()> {
    match &cli.command {
        Command::Synthdata(a) => synthdata(cli, args, a),
        Command::Train(a) => train(cli, args, a),
        Command::Convert(a) => convert(cli, args, a),
        Command::Evaluate(a) => evaluate(cli, args, a),
        Command::Ablate(a) => ablate(cli, args, a),
    }
}

fn out_dir(cli: &Cli, default: &str) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn synthdata(cli: &Cli, args: &[String], a: &SynthArgs) -> Result<()> {
    if cli.config.is_some() {
        return Err(UsageError("synthdata takes no --config".into()).into());
    }
    let cfg = SynthConfig {
        n_domains: a.domains,
        n_utterances: a.utterances,
        frames: a.frames,
        q: a.q,
        seed: cli.seed.unwrap_or(0),
    };
    let corpus = synth_corpus(&cfg).map_err(|e| match e {
        Error::InvalidArgument(m) => UsageError(m).into(),
        e => anyhow::Error::from(e),
    })?;
    let dir = out_dir(cli, "corpus")?;
    let files = write_synth_corpus(&dir, &corpus)?;
    let mut m = ManifestBuilder::new("synthdata", args, Some(cfg.seed), &cfg)?;
    m.outputs(&dir, &files)?;
    m.write(&dir.join(MANIFEST_FILE))?;
    info!(
        "wrote {} domains x {} utterances (train and eval) to {}",
        cfg.n_domains,
        cfg.n_utterances,
        dir.display()
    );
    Ok(())
}

/// Preset or `--config` file, then flag overrides.
fn resolve_config(cli: &Cli, c: &ConfigArgs) -> Result<TrainingConfig> {
    let mut cfg = match &cli.config {
        Some(path) => TrainingConfig::load(path)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?,
        None => TrainingConfig::preset(c.preset.name())?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.iterations {
        cfg.iterations = n;
    }
    if let Some(v) = c.variant {
        cfg.variant = v;
    }
    if let Some(m) = c.conditioning {
        cfg.conditioning_mode = m.into();
    }
    Ok(cfg)
}

fn validated(cfg: TrainingConfig) -> Result<TrainingConfig> {
    cfg.validate().map_err(|e| UsageError(format!("invalid configuration: {e}")))?;
    Ok(cfg)
}

/// Writes the abort snapshot before passing the error on.
fn record_abort(dir: &Path, err: Error) -> anyhow::Error {
    if let Error::NumericalAbort { iteration, snapshot } = &err {
        #[derive(Serialize)]
        struct Abort<'a> {
            iteration: u64,
            losses: serde_json::Value,
            raw: &'a str,
        }
        let losses = serde_json::from_str(snapshot).unwrap_or(serde_json::Value::Null);
        let abort = Abort {
            iteration: *iteration,
            losses,
            raw: snapshot,
        };
        if let Err(e) = write_json(&dir.join(ABORT_FILE), &abort) {
            warn!("could not write abort snapshot: {e}");
        }
    }
    err.into()
}

fn train(cli: &Cli, args: &[String], a: &TrainArgs) -> Result<()> {
    let dir = out_dir(cli, "run")?;
    let mut cfg = resolve_config(cli, &a.cfg)?;
    if let Some(every) = a.checkpoint_every {
        cfg.checkpoint_every = every;
    }

    let resumed = match &a.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            if cli.config.is_some() || a.cfg.variant.is_some() || a.cfg.conditioning.is_some() || cli.seed.is_some() {
                return Err(UsageError(
                    "--resume keeps the checkpoint's configuration; only --iterations and \
                     --checkpoint-every may change"
                        .into(),
                )
                .into());
            }
            let mut resumed_cfg = ckpt.config.clone();
            if let Some(n) = a.cfg.iterations {
                resumed_cfg.iterations = n;
            }
            if let Some(every) = a.checkpoint_every {
                resumed_cfg.checkpoint_every = every;
            }
            if resumed_cfg.iterations < ckpt.state.iteration {
                return Err(UsageError(format!(
                    "checkpoint is at iteration {}, beyond --iterations {}",
                    ckpt.state.iteration, resumed_cfg.iterations
                ))
                .into());
            }
            cfg = resumed_cfg;
            Some(ckpt)
        }
        None => None,
    };
    let cfg = validated(cfg)?;
    write_json(&dir.join(CONFIG_FILE), &cfg)?;
    let mut manifest = ManifestBuilder::new("train", args, Some(cfg.seed), &cfg)?;
    let mut outputs = vec![PathBuf::from(CONFIG_FILE)];
    if a.dry_run {
        manifest.outputs(&dir, &outputs)?;
        manifest.write(&dir.join(MANIFEST_FILE))?;
        info!("dry run: configuration written to {}", dir.join(CONFIG_FILE).display());
        return Ok(());
    }

    let corpus = load_corpus(&a.data)?;
    manifest.input(&a.data.join(INDEX_FILE))?;
    let (trainer, mut state, mut log) = match resumed {
        Some(ckpt) => {
            manifest.input(a.resume.as_deref().expect("resume path"))?;
            let ckpt = Checkpoint {
                config: cfg.clone(),
                ..ckpt
            };
            let trainer = Trainer::resume(&corpus.train, &ckpt)?;
            let earlier = previous_log(&dir.join(LOSS_FILE), ckpt.state.iteration)?;
            info!("resuming at iteration {}", ckpt.state.iteration);
            (trainer, ckpt.state, earlier)
        }
        None => {
            let trainer = Trainer::new(&corpus.train, cfg.clone())?;
            let state = trainer.init_state()?;
            (trainer, state, Vec::new())
        }
    };

    let start = state.iteration;
    if start < cfg.iterations {
        let ckpt_dir = dir.join(CHECKPOINT_DIR);
        let rows = trainer
            .run(&mut state, (cfg.checkpoint_every > 0).then_some(ckpt_dir.as_path()))
            .map_err(|e| record_abort(&dir, e))?;
        log.extend(rows);
        write_loss_log(&log, &dir.join(LOSS_FILE))?;
        outputs.push(PathBuf::from(LOSS_FILE));
        info!("trained iterations {start}..{}", state.iteration);
    }
    save_checkpoint(&trainer.checkpoint(&state), &dir.join(MODEL_FILE))?;
    outputs.push(PathBuf::from(MODEL_FILE));
    manifest.outputs(&dir, &outputs)?;
    manifest.write(&dir.join(MANIFEST_FILE))?;
    info!("checkpoint at iteration {} written to {}", state.iteration, dir.join(MODEL_FILE).display());
    Ok(())
}

/// Loss rows logged before `iteration` by an earlier run into the same directory.
fn previous_log(path: &Path, iteration: u64) -> Result<Vec<LogRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rows = read_loss_log(path)?;
    rows.retain(|r| r.iteration < iteration);
    Ok(rows)
}

fn domain(id: usize, n: usize, flag: &str) -> Result<DomainCode> {
    DomainCode::new(id, n).with_context(|| format!("--{flag} {id}"))
}

fn convert(cli: &Cli, args: &[String], a: &ConvertArgs) -> Result<()> {
    let out = cli
        .out
        .clone()
        .ok_or_else(|| UsageError("convert needs --out <FILE>".into()))?;
    let ckpt = load_checkpoint(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let n = ckpt.arch.n_domains;
    let pair = DomainPair::new(domain(a.source, n, "source")?, domain(a.target, n, "target")?);
    let x = load_features(&a.input).with_context(|| format!("loading {}", a.input.display()))?;
    let y = ckpt.converter()?.convert(&x, pair)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_features(&y, &out)?;
    let speaker = read_meta(&a.input).map(|m| m.speaker).unwrap_or_else(|_| "unknown".into());
    write_meta(
        &out,
        &FeatureMeta {
            speaker: format!("d{}", pair.target.id()),
            domain: Some(pair.target.id()),
            provenance: format!(
                "converted from {} ({speaker}, domain {}) by {} at iteration {}",
                a.input.display(),
                pair.source.id(),
                a.model.display(),
                ckpt.state.iteration
            ),
        },
    )?;
    if pair.source == pair.target {
        let diff = x
            .mcep()
            .iter()
            .zip(y.mcep())
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
            / x.mcep().len() as f64;
        info!("same-domain conversion: mean |output - input| = {diff:.4}");
    }

    #[derive(Serialize)]
    struct ConvertConfig<'a> {
        model_config: &'a TrainingConfig,
        iteration: u64,
        source: usize,
        target: usize,
    }
    let config = ConvertConfig {
        model_config: &ckpt.config,
        iteration: ckpt.state.iteration,
        source: pair.source.id(),
        target: pair.target.id(),
    };
    let mut m = ManifestBuilder::new("convert", args, None, &config)?;
    m.input(&a.model)?.input(&a.input)?;
    let name = out.file_name().map(PathBuf::from).unwrap_or_else(|| out.clone());
    let root = out.parent().unwrap_or(Path::new("."));
    m.outputs(root, &[name.clone(), name.with_extension("meta.json")])?;
    m.write(&out.with_extension("manifest.json"))?;
    info!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct BarRow<'a> {
    label: &'a str,
    metric: &'a str,
    value: f64,
    error: f64,
}

fn write_bars(path: &Path, rows: &[BarRow<'_>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn evaluate(cli: &Cli, args: &[String], a: &EvaluateArgs) -> Result<()> {
    if cli.config.is_some() {
        return Err(UsageError("evaluate takes no --config".into()).into());
    }
    let corpus = load_corpus(&a.data)?;
    if corpus.eval.is_empty() {
        return Err(Error::MissingGroundTruth(format!(
            "{} lists no parallel evaluation set",
            a.data.join(INDEX_FILE).display()
        ))
        .into());
    }
    let report: EvalReport = match a.model.as_str() {
        "oracle" => evaluate_corpus(&OracleConverter::new(&corpus.eval), &corpus.eval)?,
        "identity" => evaluate_corpus(&IdentityConverter, &corpus.eval)?,
        path => {
            let path = Path::new(path);
            if !path.exists() {
                return Err(Error::MissingModel(path.display().to_string()).into());
            }
            let ckpt = load_checkpoint(path)?;
            evaluate_corpus(&ckpt.converter()?, &corpus.eval)?
        }
    };
    let dir = out_dir(cli, "eval")?;
    report.write_pairs_csv(&dir.join("pairs.csv"))?;
    report.write_utterances_csv(&dir.join("utterances.csv"))?;
    report.write_json(&dir.join("report.json"))?;
    let labels: Vec<String> = report
        .pairs
        .iter()
        .map(|p| format!("{}->{}", p.source.id(), p.target.id()))
        .collect();
    let mut bars = Vec::new();
    for (p, label) in report.pairs.iter().zip(&labels) {
        bars.push(BarRow { label, metric: "mcd_db", value: p.mcd_db, error: 0.0 });
        bars.push(BarRow { label, metric: "msd_db", value: p.msd_db, error: 0.0 });
    }
    write_bars(&dir.join("plot_pairs.csv"), &bars)?;

    #[derive(Serialize)]
    struct EvalConfig<'a> {
        model: &'a str,
        data: String,
    }
    let cfg = EvalConfig {
        model: &a.model,
        data: a.data.display().to_string(),
    };
    let mut m = ManifestBuilder::new("evaluate", args, None, &cfg)?;
    m.input(&a.data.join(INDEX_FILE))?;
    if !matches!(a.model.as_str(), "oracle" | "identity") {
        m.input(Path::new(&a.model))?;
    }
    let outputs: Vec<PathBuf> = ["pairs.csv", "utterances.csv", "report.json", "plot_pairs.csv"]
        .into_iter()
        .map(PathBuf::from)
        .collect();
    m.outputs(&dir, &outputs)?;
    m.write(&dir.join(MANIFEST_FILE))?;
    info!(
        "{}: MCD {:.3} dB, MSD {:.3} dB over {} conversions",
        report.model, report.overall.mcd_db, report.overall.msd_db, report.overall.count
    );
    Ok(())
}

fn ablate(cli: &Cli, args: &[String], a: &AblateArgs) -> Result<()> {
    let mut cfg = validated(resolve_config(cli, &a.cfg)?)?;
    cfg.checkpoint_every = 0;
    let corpus = load_corpus(&a.data)?;
    let report: AblationReport = ablation_run(&corpus.train, &corpus.eval, &cfg, a.axis.into())?;
    let dir = out_dir(cli, "ablation")?;
    report.write_csv(&dir.join("ablation.csv"))?;
    report.write_json(&dir.join("ablation.json"))?;
    let mut bars = Vec::new();
    for r in &report.rows {
        bars.push(BarRow { label: &r.variant, metric: "mcd_db", value: r.mcd_mean, error: r.mcd_std });
        bars.push(BarRow { label: &r.variant, metric: "msd_db", value: r.msd_mean, error: r.msd_std });
    }
    write_bars(&dir.join("plot_ablation.csv"), &bars)?;
    for r in &report.rows {
        info!(
            "{}: MCD {:.3} ± {:.3} dB, MSD {:.3} ± {:.3} dB",
            r.variant, r.mcd_mean, r.mcd_std, r.msd_mean, r.msd_std
        );
    }
    let mut m = ManifestBuilder::new("ablate", args, Some(cfg.seed), &cfg)?;
    m.input(&a.data.join(INDEX_FILE))?;
    let outputs: Vec<PathBuf> = ["ablation.csv", "ablation.json", "plot_ablation.csv"]
        .into_iter()
        .map(PathBuf::from)
        .collect();
    m.outputs(&dir, &outputs)?;
    m.write(&dir.join(MANIFEST_FILE))?;
    Ok(())
}
