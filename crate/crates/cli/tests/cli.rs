use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use vcstar_core::features::{compute_speaker_stats, load_features, read_meta};
use vcstar_core::training::{load_checkpoint, read_loss_log, TrainingConfig, Widths};

fn vcstar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcstar"))
        .args(args)
        .env("VCSTAR_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str]) {
    let out = vcstar(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small three-domain corpus.
fn small_corpus(dir: &Path) -> PathBuf {
    let c = dir.join("corpus");
    ok(&["--out", s(&c), "--seed", "2", "synthdata", "--domains", "3", "--utterances", "2", "--frames", "128", "--q", "4"]);
    c
}

fn tiny_config(dir: &Path, iterations: u64) -> PathBuf {
    let cfg = TrainingConfig {
        batch_size: 2,
        segment_len: 32,
        iterations,
        checkpoint_every: 0,
        widths: Widths {
            g_channels: [2, 4],
            g_bottleneck: 4,
            g_blocks: 1,
            d_channels: [2, 4],
            c_channels: 2,
        },
        ..TrainingConfig::desk()
    };
    let path = dir.join(format!("tiny_{iterations}.json"));
    cfg.save(&path).unwrap();
    path
}

fn tree_digest(root: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, hex::encode(Sha256::digest(fs::read(&p).unwrap())));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synthdata_defaults_to_four_domains() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("nested/new/corpus");
    ok(&["--out", s(&c), "synthdata"]);
    let index = json(&c.join("corpus.json"));
    assert_eq!(index["n_domains"], 4);
    assert_eq!(index["q"], 34);
    assert_eq!(index["train"].as_array().unwrap().len(), 4);
    let truth = json(&c.join("ground_truth.json"));
    assert_eq!(truth["groups"].as_array().unwrap().len(), 8);
    let meta = read_meta(c.join("train/d3/u001.vcf")).unwrap();
    assert_eq!(meta.domain, Some(3));
}

#[test]
fn synthdata_is_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        ok(&["--out", s(&p), "--seed", seed, "synthdata", "--domains", "2", "--utterances", "2", "--q", "6"]);
        p
    };
    let (a, b, c) = (run("a", "9"), run("b", "9"), run("c", "10"));
    // Manifests record the output path, so compare them without it.
    let strip = |mut t: BTreeMap<String, String>| {
        t.remove("manifest.json");
        t
    };
    assert_eq!(strip(tree_digest(&a)), strip(tree_digest(&b)));
    assert_ne!(strip(tree_digest(&a)), strip(tree_digest(&c)));
    let (ma, mb) = (json(&a.join("manifest.json")), json(&b.join("manifest.json")));
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(ma["outputs"], mb["outputs"]);
}

#[test]
fn manifest_hash_covers_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let m = json(&c.join("manifest.json"));
    let compact = serde_json::to_vec(&m["config"]).unwrap();
    assert_eq!(m["config_hash"].as_str().unwrap(), hex::encode(Sha256::digest(compact)));
    assert_eq!(m["seed"], 2);
    assert!(m["versions"]["vcstar"].is_string());
    let listed: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap()).collect();
    assert!(listed.contains(&"corpus.json") && listed.contains(&"eval/d3/u001.vcf"));
}

#[test]
fn unwritable_output_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain_file");
    fs::write(&file, b"x").unwrap();
    let out = vcstar(&["--out", s(&file.join("corpus")), "synthdata", "--domains", "2"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&vcstar(&["synthdata", "--no-such-flag"])), 1);
    assert_eq!(code(&vcstar(&["frobnicate"])), 1);
    assert_eq!(code(&vcstar(&["train"])), 1);
    assert_eq!(code(&vcstar(&["synthdata", "--domains", "1"])), 1);
    assert_eq!(code(&vcstar(&["ablate", "--data", "x", "--axis", "sideways"])), 1);
    assert_eq!(code(&vcstar(&["--help"])), 0);
}

#[test]
fn zero_iterations_write_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let cfg = tiny_config(dir.path(), 50);
    let run = dir.path().join("run");
    ok(&["--config", s(&cfg), "--out", s(&run), "train", "--data", s(&c), "--iterations", "0"]);
    assert!(!run.join("losses.csv").exists());
    assert!(!run.join("checkpoints").exists());
    let ckpt = load_checkpoint(&run.join("model.vck")).unwrap();
    assert_eq!(ckpt.state.iteration, 0);
    assert_eq!(ckpt.config.iterations, 0);
}

#[test]
fn full_preset_is_loaded_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&["--out", s(&run), "train", "--data", "unused", "--preset", "full", "--dry-run"]);
    let cfg = TrainingConfig::load(&run.join("config.json")).unwrap();
    assert_eq!(cfg, TrainingConfig::full());
    assert_eq!((cfg.lr_g, cfg.lr_d, cfg.batch_size), (0.0002, 0.0001, 8));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"batch_size\": 2}").unwrap();
    let out = vcstar(&["--config", s(&bad), "--out", s(&dir.path().join("r")), "train", "--data", s(&c)]);
    assert_eq!(code(&out), 1);

    let mut cfg = TrainingConfig::load(&tiny_config(dir.path(), 3)).unwrap();
    cfg.segment_len = 30;
    cfg.save(&bad).unwrap();
    let out = vcstar(&["--config", s(&bad), "--out", s(&dir.path().join("r")), "train", "--data", s(&c)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 2);
    let out = vcstar(&["--config", s(&cfg), "--out", s(&dir.path().join("r")), "train", "--data", s(&dir.path().join("none"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn resume_continues_iteration_numbering_and_matches_a_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let cfg = tiny_config(dir.path(), 12);
    let full = dir.path().join("full");
    ok(&["--config", s(&cfg), "--out", s(&full), "train", "--data", s(&c), "--checkpoint-every", "4"]);

    let part = dir.path().join("part");
    ok(&["--config", s(&cfg), "--out", s(&part), "train", "--data", s(&c), "--iterations", "8", "--checkpoint-every", "4"]);
    let mid = part.join("checkpoints/ckpt_00000004.vck");
    ok(&["--out", s(&part), "train", "--data", s(&c), "--resume", s(&mid), "--iterations", "12"]);

    let log = read_loss_log(&part.join("losses.csv")).unwrap();
    assert_eq!(log.iter().map(|r| r.iteration).collect::<Vec<_>>(), (0..12).collect::<Vec<_>>());
    assert_eq!(log, read_loss_log(&full.join("losses.csv")).unwrap());
    assert_eq!(
        load_checkpoint(&part.join("model.vck")).unwrap().state,
        load_checkpoint(&full.join("model.vck")).unwrap().state
    );

    let out = vcstar(&["--out", s(&part), "--seed", "5", "train", "--data", s(&c), "--resume", s(&mid)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn identical_runs_give_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let cfg = tiny_config(dir.path(), 5);
    let mut digests = Vec::new();
    for name in ["a", "b"] {
        let run = dir.path().join(name);
        ok(&["--config", s(&cfg), "--out", s(&run), "train", "--data", s(&c)]);
        let mut t = tree_digest(&run);
        t.remove("manifest.json");
        digests.push(t);
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn convert_writes_a_readable_file_near_target_pitch() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let cfg = tiny_config(dir.path(), 3);
    let run = dir.path().join("run");
    ok(&["--config", s(&cfg), "--out", s(&run), "train", "--data", s(&c)]);
    let input = c.join("eval/d1/u000.vcf");
    let out = dir.path().join("converted/out.vcf");
    ok(&["--out", s(&out), "convert", "--model", s(&run.join("model.vck")), "--input", s(&input), "--source", "1", "--target", "3"]);

    let x = load_features(&input).unwrap();
    let y = load_features(&out).unwrap();
    assert_eq!((y.q(), y.frames()), (x.q(), x.frames()));
    assert_eq!(y.voiced(), x.voiced());
    assert_eq!(y.ap_ref, x.ap_ref);
    assert_eq!(read_meta(&out).unwrap().domain, Some(3));
    assert!(out.with_extension("manifest.json").exists());

    // The parallel rendering in domain 3 carries the reference pitch.
    let reference = load_features(c.join("eval/d3/u000.vcf")).unwrap();
    let got = compute_speaker_stats(std::slice::from_ref(&y)).unwrap().logf0_mean;
    let want = compute_speaker_stats(std::slice::from_ref(&reference)).unwrap().logf0_mean;
    let before = compute_speaker_stats(std::slice::from_ref(&x)).unwrap().logf0_mean;
    assert!((got - want).abs() < 0.25 * (before - want).abs(), "{before} -> {got}, target {want}");

    let bad = vcstar(&["--out", s(&out), "convert", "--model", s(&run.join("model.vck")), "--input", s(&input), "--source", "1", "--target", "4"]);
    assert_eq!(code(&bad), 2);
    let no_out = vcstar(&["convert", "--model", s(&run.join("model.vck")), "--input", s(&input), "--source", "1", "--target", "2"]);
    assert_eq!(code(&no_out), 1);
}

#[test]
fn evaluate_oracle_scores_zero_and_writes_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let e = dir.path().join("eval");
    ok(&["--out", s(&e), "evaluate", "--data", s(&c), "--model", "oracle"]);
    let mut r = csv::Reader::from_path(e.join("pairs.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    for row in &rows {
        assert_eq!(row[3].parse::<f64>().unwrap(), 0.0);
        assert_eq!(row[4].parse::<f64>().unwrap(), 0.0);
    }
    let plot = fs::read_to_string(e.join("plot_pairs.csv")).unwrap();
    assert_eq!(plot.lines().next().unwrap(), "label,metric,value,error");
    assert_eq!(plot.lines().count(), 1 + 2 * 6);

    let ident = dir.path().join("ident");
    ok(&["--out", s(&ident), "evaluate", "--data", s(&c), "--model", "identity"]);
    let report = json(&ident.join("report.json"));
    assert!(report["overall"]["mcd_db"].as_f64().unwrap() > 0.0);
    assert!(report["conventions"]["mcd_alignment"].as_str().unwrap().contains("DTW"));
}

#[test]
fn evaluate_reports_missing_inputs_as_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let out = vcstar(&["--out", s(&dir.path().join("e")), "evaluate", "--data", s(&c), "--model", s(&dir.path().join("none.vck"))]);
    assert_eq!(code(&out), 2);

    let mut index = json(&c.join("corpus.json"));
    index.as_object_mut().unwrap().remove("eval");
    fs::write(c.join("corpus.json"), serde_json::to_vec(&index).unwrap()).unwrap();
    let out = vcstar(&["--out", s(&dir.path().join("e")), "evaluate", "--data", s(&c)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn evaluate_scores_a_trained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let cfg = tiny_config(dir.path(), 2);
    let run = dir.path().join("run");
    ok(&["--config", s(&cfg), "--out", s(&run), "train", "--data", s(&c)]);
    let e = dir.path().join("e");
    ok(&["--out", s(&e), "evaluate", "--data", s(&c), "--model", s(&run.join("model.vck"))]);
    let m = json(&e.join("manifest.json"));
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn ablate_emits_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let cfg = tiny_config(dir.path(), 2);
    for (axis, rows) in [("objective", 4), ("conditioning", 2)] {
        let out = dir.path().join(axis);
        ok(&["--config", s(&cfg), "--out", s(&out), "ablate", "--data", s(&c), "--axis", axis]);
        let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
        assert_eq!(csv.lines().count(), rows + 1, "{axis}");
        assert!(csv.lines().skip(1).all(|l| l.split(',').nth(3) == Some("3")));
        let plot = fs::read_to_string(out.join("plot_ablation.csv")).unwrap();
        assert_eq!(plot.lines().count(), 1 + 2 * rows);
        let report = json(&out.join("ablation.json"));
        assert_eq!(report["rows"].as_array().unwrap().len(), rows);
    }
}

#[test]
fn non_finite_training_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_corpus(dir.path());
    let mut cfg = TrainingConfig::load(&tiny_config(dir.path(), 10)).unwrap();
    cfg.lr_g = 1e300;
    cfg.lr_d = 1e300;
    let path = dir.path().join("huge.json");
    cfg.save(&path).unwrap();
    let run = dir.path().join("run");
    let out = vcstar(&["--config", s(&path), "--out", s(&run), "train", "--data", s(&c)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let abort = json(&run.join("abort.json"));
    assert!(abort["iteration"].is_u64());
    assert!(!run.join("model.vck").exists());
}
