use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use super::*;
use crate::features::{synth_corpus, SynthConfig};
use crate::pipeline::{IdentityConverter, OracleConverter};

fn view(data: &[f64], q: usize) -> McepView<'_> {
    McepView::new(data, q, data.len() / q).unwrap()
}

fn random(q: usize, t: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..q * t).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn single_frame_mcd_closed_form() {
    let a = [0.0, 0.0, 0.0];
    let b = [0.0, 1.0, 0.0];
    for align in [false, true] {
        let m = mcd(view(&a, 3), view(&b, 3), align).unwrap();
        assert!((m - 6.1419).abs() < 1e-3);
        assert!((m - MCD_FACTOR * 2f64.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn mcd_basic_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random(4, 10, &mut rng);
    let b = random(4, 10, &mut rng);
    assert_eq!(mcd(view(&a, 4), view(&a, 4), true).unwrap(), 0.0);
    let ab = mcd(view(&a, 4), view(&b, 4), false).unwrap();
    let ba = mcd(view(&b, 4), view(&a, 4), false).unwrap();
    assert_eq!(ab, ba);
    // Pre-aligned equal-length inputs: frame-mean of the closed form.
    let expect = (0..10)
        .map(|t| {
            let s: f64 = (0..4).map(|d| (a[d * 10 + t] - b[d * 10 + t]).powi(2)).sum();
            MCD_FACTOR * (2.0 * s).sqrt()
        })
        .sum::<f64>()
        / 10.0;
    assert!((ab - expect).abs() < 1e-12);
    assert!(mcd(view(&a, 4), view(&b, 2), false).is_err());
    assert!(mcd(view(&a, 4), view(&b[..36], 4), false).is_err());
}

#[test]
fn dtw_identical_is_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(3, 7, &mut rng);
    let al = dtw_align(view(&a, 3), view(&a, 3)).unwrap();
    assert_eq!(al.path, (0..7).map(|i| (i, i)).collect::<Vec<_>>());
    assert_eq!(al.cost, 0.0);
}

#[test]
fn dtw_duplicated_frame_adds_one_horizontal_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (q, t) = (3, 6);
    let a = random(q, t, &mut rng);
    // b = a with frame 2 duplicated.
    let mut b = Vec::new();
    for d in 0..q {
        let row = &a[d * t..(d + 1) * t];
        b.extend_from_slice(&row[..3]);
        b.extend_from_slice(&row[2..]);
    }
    let al = dtw_align(view(&a, q), view(&b, q)).unwrap();
    assert_eq!(al.path.len(), t + 1);
    let horizontal = al.path.windows(2).filter(|w| w[1].0 == w[0].0).count();
    assert_eq!(horizontal, 1);
    assert_eq!(al.cost, 0.0);
}

/// Exhaustive search over every monotone path with unit steps.
fn brute_force(a: McepView<'_>, b: McepView<'_>) -> (f64, Vec<(usize, usize)>) {
    fn go(
        a: &McepView<'_>,
        b: &McepView<'_>,
        path: &mut Vec<(usize, usize)>,
        cost: f64,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        let (i, j) = *path.last().unwrap();
        if (i, j) == (a.frames() - 1, b.frames() - 1) {
            if cost < best.0 {
                *best = (cost, path.clone());
            }
            return;
        }
        for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < a.frames() && nj < b.frames() {
                path.push((ni, nj));
                let c = frame_sq_dist(a, ni, b, nj).sqrt();
                go(a, b, path, cost + c, best);
                path.pop();
            }
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    let c0 = frame_sq_dist(&a, 0, &b, 0).sqrt();
    go(&a, &b, &mut vec![(0, 0)], c0, &mut best);
    best
}

#[test]
fn dtw_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (ta, tb) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let a = random(2, ta, &mut rng);
        let b = random(2, tb, &mut rng);
        let al = dtw_align(view(&a, 2), view(&b, 2)).unwrap();
        let (cost, path) = brute_force(view(&a, 2), view(&b, 2));
        assert!((al.cost - cost).abs() < 1e-12);
        assert_eq!(al.path, path);
    }
}

proptest! {
    #[test]
    fn dtw_path_is_monotone_and_pinned(ta in 1usize..12, tb in 1usize..12, seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(2, ta, &mut rng);
        let b = random(2, tb, &mut rng);
        let p = dtw_align(view(&a, 2), view(&b, 2)).unwrap().path;
        prop_assert_eq!(p[0], (0, 0));
        prop_assert_eq!(*p.last().unwrap(), (ta - 1, tb - 1));
        for w in p.windows(2) {
            let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            prop_assert!(di <= 1 && dj <= 1 && di + dj >= 1);
        }
    }

    #[test]
    fn metrics_are_non_negative_and_symmetric(seed in 0u64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(2, 130, &mut rng);
        let b = random(2, 130, &mut rng);
        let (va, vb) = (view(&a, 2), view(&b, 2));
        let m = mcd(va, vb, false).unwrap();
        prop_assert!(m > 0.0);
        prop_assert_eq!(m, mcd(vb, va, false).unwrap());
        let d = msd(va, vb).unwrap();
        prop_assert!(d > 0.0);
        prop_assert!((d - msd(vb, va).unwrap()).abs() < 1e-9);
    }
}

/// Window-averaged log power by direct summation of the DFT.
fn direct_modspec(x: &[f64], t: usize) -> Vec<f64> {
    let w = modspec::hann(MS_WINDOW);
    let n_win = 1 + (t - MS_WINDOW) / MS_HOP;
    (0..MS_BINS)
        .map(|k| {
            let mut p = 0.0;
            for s in 0..n_win {
                let mut acc = Complex::new(0.0, 0.0);
                for n in 0..MS_WINDOW {
                    let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / MS_WINDOW as f64;
                    acc += Complex::from_polar(x[s * MS_HOP + n] * w[n], ang);
                }
                p += acc.norm_sqr();
            }
            (p / n_win as f64).max(MS_FLOOR).log10()
        })
        .collect()
}

#[test]
fn modulation_spectrum_matches_direct_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = 300;
    let x = random(2, t, &mut rng);
    let ms = modulation_spectrum(view(&x, 2)).unwrap();
    assert_eq!((ms.q, ms.bins, ms.data.len()), (2, 65, 130));
    for d in 0..2 {
        let oracle = direct_modspec(&x[d * t..(d + 1) * t], t);
        for (a, b) in ms.row(d).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn constant_sequence_has_no_modulation_beyond_window_leakage() {
    let x = vec![3.0; 256];
    let ms = modulation_spectrum(view(&x, 1)).unwrap();
    // Window sum 64 gives power (3·64)²; the Hann window leaks a quarter of
    // that amplitude into bin 1 and nothing further.
    assert!((ms.data[0] - (192.0f64 * 192.0).log10()).abs() < 1e-9);
    assert!((ms.data[1] - (96.0f64 * 96.0).log10()).abs() < 1e-9);
    assert!(ms.data[2..].iter().all(|&v| v == MS_FLOOR.log10()));
}

#[test]
fn sinusoid_peaks_at_its_bin() {
    for k in [2usize, 5, 17, 40, 63] {
        let x: Vec<f64> = (0..256)
            .map(|n| (2.0 * std::f64::consts::PI * (k * n) as f64 / MS_WINDOW as f64).cos())
            .collect();
        let ms = modulation_spectrum(view(&x, 1)).unwrap();
        let argmax = (1..MS_BINS)
            .max_by(|&a, &b| ms.data[a].total_cmp(&ms.data[b]))
            .unwrap();
        assert_eq!(argmax, k);
    }
}

#[test]
fn modulation_spectrum_needs_a_full_window() {
    let x = vec![0.0; 127];
    assert!(matches!(
        modulation_spectrum(view(&x, 1)),
        Err(Error::TooShort { len: 127, required: 128 })
    ));
}

#[test]
fn msd_hand_computed_for_constants() {
    let a = vec![2.0; 128];
    let b = vec![1.0; 128];
    // Bins 0 and 1 both differ by log10(2²); all other bins sit at the floor.
    let diff = 2.0 * 2f64.log10();
    let expect = 10.0 * (2.0 * diff * diff / 65.0).sqrt();
    let got = msd(view(&a, 1), view(&b, 1)).unwrap();
    assert!((got - expect).abs() < 1e-9);
    assert_eq!(msd(view(&a, 1), view(&a, 1)).unwrap(), 0.0);
}

fn small_corpus() -> crate::features::SynthCorpus {
    synth_corpus(&SynthConfig {
        n_domains: 3,
        n_utterances: 2,
        frames: 160,
        q: 4,
        seed: 9,
    })
    .unwrap()
}

#[test]
fn oracle_scores_zero_and_identity_scores_worse() {
    let c = small_corpus();
    let oracle = evaluate_corpus(&OracleConverter::new(&c.eval), &c.eval).unwrap();
    assert_eq!(oracle.utterances.len(), 3 * 2 * 2);
    assert_eq!(oracle.pairs.len(), 6);
    assert!(oracle.utterances.iter().all(|u| u.mcd_db == 0.0 && u.msd_db == 0.0));
    let ident = evaluate_corpus(&IdentityConverter, &c.eval).unwrap();
    assert!(ident.overall.mcd_db > 0.0 && ident.overall.msd_db > 0.0);
    assert!(ident.pairs.iter().all(|p| p.mcd_db > 0.0));
    assert_eq!(ident.model, "identity");
}

#[test]
fn missing_reference_is_reported() {
    let c = small_corpus();
    let mut eval = c.eval.clone();
    eval[2].pop();
    assert!(matches!(
        evaluate_corpus(&IdentityConverter, &eval),
        Err(Error::MissingGroundTruth(_))
    ));
}

#[test]
fn reports_serialize() {
    let c = small_corpus();
    let r = evaluate_corpus(&IdentityConverter, &c.eval).unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.write_pairs_csv(&dir.path().join("pairs.csv")).unwrap();
    r.write_utterances_csv(&dir.path().join("utts.csv")).unwrap();
    r.write_json(&dir.path().join("r.json")).unwrap();
    let pairs = std::fs::read_to_string(dir.path().join("pairs.csv")).unwrap();
    assert_eq!(pairs.lines().count(), 1 + 6);
    let utts = std::fs::read_to_string(dir.path().join("utts.csv")).unwrap();
    assert_eq!(utts.lines().count(), 1 + 12);
    let back: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(back, r);
}
