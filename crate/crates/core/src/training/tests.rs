use super::*;
use crate::features::{synth_corpus, SynthConfig, SynthCorpus};
use crate::pipeline::Converter;
use crate::{DomainCode, DomainPair};

fn corpus(n: usize) -> SynthCorpus {
    synth_corpus(&SynthConfig {
        n_domains: n,
        n_utterances: 2,
        frames: 128,
        q: 4,
        seed: 5,
    })
    .unwrap()
}

fn tiny(variant: ObjectiveVariant, iterations: u64) -> TrainingConfig {
    TrainingConfig {
        batch_size: 2,
        segment_len: 16,
        iterations,
        variant,
        checkpoint_every: 0,
        widths: Widths {
            g_channels: [2, 4],
            g_bottleneck: 4,
            g_blocks: 1,
            d_channels: [2, 4],
            c_channels: 2,
        },
        ..TrainingConfig::desk()
    }
}

#[test]
fn full_preset_echoes_the_recipe() {
    let p = TrainingConfig::preset("full").unwrap();
    assert_eq!((p.batch_size, p.segment_len, p.iterations), (8, 128, 300_000));
    assert_eq!((p.lr_g, p.lr_d, p.adam_beta1), (2e-4, 1e-4, 0.5));
    assert_eq!(p.weights, LossWeights::default());
    assert_eq!((p.weights.lambda_cls, p.weights.lambda_cyc, p.weights.lambda_id), (1.0, 10.0, 5.0));
    assert_eq!(p.id_cutoff, 10_000);
    assert!(TrainingConfig::preset("huge").is_err());
}

#[test]
fn config_json_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    let cfg = TrainingConfig::desk();
    cfg.save(&path).unwrap();
    assert_eq!(TrainingConfig::load(&path).unwrap(), cfg);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"variant\": \"ST_ADV\""));
    assert!(text.contains("\"conditioning_mode\": \"modulation_based\""));
    for bad in [
        TrainingConfig { batch_size: 0, ..cfg.clone() },
        TrainingConfig { segment_len: 30, ..cfg.clone() },
        TrainingConfig { lr_g: -1.0, ..cfg.clone() },
        TrainingConfig { adam_beta1: 1.0, ..cfg.clone() },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn rejects_unusable_corpora() {
    let c = corpus(2);
    assert!(Trainer::new(&c.train[..1], tiny(ObjectiveVariant::StAdv, 1)).is_err());
    let cfg = TrainingConfig {
        segment_len: 256,
        ..tiny(ObjectiveVariant::StAdv, 1)
    };
    assert!(matches!(Trainer::new(&c.train, cfg), Err(Error::TooShort { .. })));
}

#[test]
fn zero_learning_rates_freeze_parameters() {
    let c = corpus(3);
    let cfg = TrainingConfig {
        lr_g: 0.0,
        lr_d: 0.0,
        ..tiny(ObjectiveVariant::TAdvPlusCls, 3)
    };
    let t = Trainer::new(&c.train, cfg).unwrap();
    let mut s = t.init_state().unwrap();
    let before = s.params.clone();
    let log = t.run(&mut s, None).unwrap();
    assert_eq!(log.len(), 3);
    assert_eq!(s.params, before);
    assert_eq!(s.iteration, 3);
}

#[test]
fn training_changes_every_player() {
    let c = corpus(3);
    let t = Trainer::new(&c.train, tiny(ObjectiveVariant::ClsOnly, 2)).unwrap();
    let mut s = t.init_state().unwrap();
    let before = s.params.clone();
    t.run(&mut s, None).unwrap();
    assert_ne!(s.params.g, before.g);
    assert_ne!(s.params.d, before.d);
    assert_ne!(s.params.c, before.c);
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let c = corpus(3);
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for k in 0..2 {
        let (_, state, log) = train_loop(&c.train, &tiny(ObjectiveVariant::StAdv, 5)).unwrap();
        let path = dir.path().join(format!("log{k}.csv"));
        write_loss_log(&log, &path).unwrap();
        logs.push((state, std::fs::read(&path).unwrap(), log));
    }
    assert_eq!(logs[0].0, logs[1].0);
    assert_eq!(logs[0].1, logs[1].1);
    assert_eq!(logs[0].2.len(), 5);
    let back = read_loss_log(&dir.path().join("log0.csv")).unwrap();
    assert_eq!(back, logs[0].2);

    let other = TrainingConfig {
        seed: 1,
        ..tiny(ObjectiveVariant::StAdv, 5)
    };
    let (_, state, _) = train_loop(&c.train, &other).unwrap();
    assert_ne!(state.params, logs[0].0.params);
}

#[test]
fn identity_column_is_zero_after_cutoff() {
    let c = corpus(2);
    let cfg = TrainingConfig {
        id_cutoff: 2,
        ..tiny(ObjectiveVariant::StAdv, 4)
    };
    let (_, _, log) = train_loop(&c.train, &cfg).unwrap();
    assert!(log[0].losses.id > 0.0 && log[1].losses.id > 0.0);
    assert_eq!(log[2].losses.id, 0.0);
    assert_eq!(log[3].losses.id, 0.0);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let c = corpus(3);
    let dir = tempfile::tempdir().unwrap();
    for variant in [ObjectiveVariant::StAdv, ObjectiveVariant::TAdvPlusCls] {
        let cfg = TrainingConfig {
            checkpoint_every: 3,
            ..tiny(variant, 6)
        };
        let t = Trainer::new(&c.train, cfg.clone()).unwrap();
        let mut full = t.init_state().unwrap();
        let full_log = t.run(&mut full, Some(dir.path())).unwrap();

        let ckpt = load_checkpoint(&checkpoint_path(dir.path(), 3)).unwrap();
        assert_eq!(ckpt.state.iteration, 3);
        let t2 = Trainer::resume(&c.train, &ckpt).unwrap();
        let mut resumed = ckpt.state.clone();
        let tail = t2.run(&mut resumed, None).unwrap();
        assert_eq!(resumed, full, "{variant}");
        assert_eq!(tail.as_slice(), &full_log[3..]);
        assert_eq!(tail[0].iteration, 3);
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let c = corpus(3);
    let t = Trainer::new(&c.train, tiny(ObjectiveVariant::ClsOnly, 2)).unwrap();
    let mut s = t.init_state().unwrap();
    t.run(&mut s, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.vck"), dir.path().join("b.vck"));
    save_checkpoint(&t.checkpoint(&s), &a).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    assert_eq!(loaded, t.checkpoint(&s));
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn checkpoint_converter_matches_trainer_converter() {
    let c = corpus(2);
    let t = Trainer::new(&c.train, tiny(ObjectiveVariant::StAdv, 2)).unwrap();
    let mut s = t.init_state().unwrap();
    t.run(&mut s, None).unwrap();
    let from_ckpt = t.checkpoint(&s).converter().unwrap();
    let direct = t.converter(&s).unwrap();
    let x = &c.eval[0][0];
    let p = DomainPair::new(DomainCode::from_index(0), DomainCode::from_index(1));
    assert_eq!(from_ckpt.convert(x, p).unwrap(), direct.convert(x, p).unwrap());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let c = corpus(2);
    let t = Trainer::new(&c.train, tiny(ObjectiveVariant::StAdv, 0)).unwrap();
    let s = t.init_state().unwrap();
    let bytes = checkpoint::encode_checkpoint(&t.checkpoint(&s)).unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint::decode_checkpoint(&bad), Err(Error::BadMagic)));

    let mut bad = bytes.clone();
    bad[9] = b'#';
    assert!(matches!(checkpoint::decode_checkpoint(&bad), Err(Error::BadManifest(_))));

    let bad = &bytes[..bytes.len() - 8];
    assert!(matches!(checkpoint::decode_checkpoint(bad), Err(Error::PayloadSize { .. })));

    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let json = std::str::from_utf8(&bytes[8..8 + len]).unwrap();
    let bumped = json.replacen("\"version\":1", "\"version\":7", 1);
    let mut bad = b"VCK1".to_vec();
    bad.extend_from_slice(&(bumped.len() as u32).to_le_bytes());
    bad.extend_from_slice(bumped.as_bytes());
    bad.extend_from_slice(&bytes[8 + len..]);
    assert!(matches!(
        checkpoint::decode_checkpoint(&bad),
        Err(Error::VersionMismatch { expected: 1, found: 7 })
    ));
}

#[test]
fn resume_rejects_a_different_architecture() {
    let c = corpus(2);
    let t = Trainer::new(&c.train, tiny(ObjectiveVariant::StAdv, 0)).unwrap();
    let mut ckpt = t.checkpoint(&t.init_state().unwrap());
    ckpt.config.widths.g_bottleneck = 6;
    assert!(matches!(Trainer::resume(&c.train, &ckpt), Err(Error::BadManifest(_))));
}

#[test]
fn non_finite_loss_aborts() {
    let c = corpus(2);
    let t = Trainer::new(&c.train, tiny(ObjectiveVariant::StAdv, 3)).unwrap();
    let mut s = t.init_state().unwrap();
    s.params.d.get_mut("d.head.b").unwrap().data_mut()[0] = f64::NAN;
    match t.run(&mut s, None) {
        Err(Error::NumericalAbort { iteration, snapshot }) => {
            assert_eq!(iteration, 0);
            assert!(snapshot.contains("l_d"));
        }
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn ablation_reports_have_the_protocol_shape() {
    let c = corpus(2);
    let base = tiny(ObjectiveVariant::StAdv, 2);
    let obj = ablation_run(&c.train, &c.eval, &base, AblationAxis::Objective).unwrap();
    let labels: Vec<_> = obj.rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(labels, ["CLS_ONLY", "T_ADV", "T_ADV_PLUS_CLS", "ST_ADV"]);
    for r in &obj.rows {
        assert_eq!(r.seeds, vec![0, 1, 2]);
        assert_eq!(r.mcd_db.len(), ABLATION_SEEDS);
        let (m, s) = ablation::mean_std(&r.mcd_db);
        assert_eq!((r.mcd_mean, r.mcd_std), (m, s));
        assert!(r.mcd_mean > 0.0 && r.msd_mean > 0.0);
    }
    let cond = ablation_run(&c.train, &c.eval, &base, AblationAxis::Conditioning).unwrap();
    assert_eq!(cond.rows.len(), 2);
    assert!(cond.rows.iter().all(|r| r.objective == ObjectiveVariant::StAdv));
    assert_eq!(cond.rows[1], {
        let again = ablation_run(&c.train, &c.eval, &base, AblationAxis::Conditioning).unwrap();
        again.rows[1].clone()
    });

    let dir = tempfile::tempdir().unwrap();
    obj.write_csv(&dir.path().join("a.csv")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("variant,objective,conditioning,n_seeds,mcd_mean,mcd_std,msd_mean,msd_std"));
}

#[test]
fn ablation_needs_parallel_ground_truth() {
    let c = corpus(2);
    let mut eval = c.eval.clone();
    eval[1].pop();
    let base = tiny(ObjectiveVariant::StAdv, 1);
    assert!(matches!(
        ablation_run(&c.train, &eval, &base, AblationAxis::Objective),
        Err(Error::MissingGroundTruth(_))
    ));
}

#[test]
fn sample_std_convention() {
    let (m, s) = ablation::mean_std(&[1.0, 2.0, 3.0]);
    assert_eq!((m, s), (2.0, 1.0));
}
