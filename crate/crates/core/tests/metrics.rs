use jova_core::metrics::{concordance_index, pearson, r2, rmse, MetricsError, MetricsReport, MetricsRow};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pair(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let b = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    (a, b)
}

#[test]
fn rmse_matches_one_line_oracle() {
    let (p, t) = random_pair(1, 100);
    let oracle = (p.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 100.0).sqrt();
    assert!((rmse(&p, &t).unwrap() - oracle).abs() < 1e-12);
}

#[test]
fn r2_matches_covariance_oracle() {
    let (p, t) = random_pair(2, 80);
    let n = p.len() as f64;
    let (mp, mt) = (p.iter().sum::<f64>() / n, t.iter().sum::<f64>() / n);
    let cov: f64 = p.iter().zip(&t).map(|(a, b)| (a - mp) * (b - mt)).sum::<f64>() / n;
    let vp: f64 = p.iter().map(|a| (a - mp).powi(2)).sum::<f64>() / n;
    let vt: f64 = t.iter().map(|b| (b - mt).powi(2)).sum::<f64>() / n;
    let oracle = cov * cov / (vp * vt);
    assert!((r2(&p, &t).unwrap() - oracle).abs() < 1e-10);
    assert!((pearson(&p, &t).unwrap().powi(2) - oracle).abs() < 1e-10);
}

#[test]
fn ci_needs_two_samples() {
    assert!(matches!(concordance_index(&[1.0], &[1.0]), Err(MetricsError::EmptyInput { .. })));
}

#[test]
fn table_has_mean_and_std_cells() {
    let rows = [(0, 0.2), (1, 0.3)]
        .into_iter()
        .map(|(fold, rmse)| MetricsRow {
            scheme: "warm".into(),
            fold,
            seed: 1,
            rmse,
            ci: 0.8,
            r2: 0.6,
        })
        .collect();
    let table = MetricsReport { rows }.table();
    assert!(table.contains("0.250 (0.050)"), "{table}");
    assert!(table.contains("0.800 (0.000)"), "{table}");
}

proptest! {
    #[test]
    fn ci_is_invariant_under_monotone_maps(
        pairs in proptest::collection::vec((-100i32..100, -100i32..100), 2..60),
        scale in 0.01f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 10.0).collect();
        let truth: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let mapped: Vec<f64> = pred.iter().map(|x| (x * scale + shift).exp2().ln_1p() + x.powi(3)).collect();
        match concordance_index(&pred, &truth) {
            Ok(ci) => {
                prop_assert!((0.0..=1.0).contains(&ci));
                prop_assert_eq!(concordance_index(&mapped, &truth).unwrap(), ci);
            }
            Err(e) => prop_assert_eq!(e, MetricsError::NoComparablePairs),
        }
    }

    #[test]
    fn r2_is_affine_invariant(
        seed in any::<u64>(),
        a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        b in -10.0f64..10.0,
    ) {
        let (p, t) = random_pair(seed, 30);
        let base = r2(&p, &t).unwrap();
        let moved: Vec<f64> = p.iter().map(|x| a * x + b).collect();
        prop_assert!((r2(&moved, &t).unwrap() - base).abs() < 1e-9);
        let moved_t: Vec<f64> = t.iter().map(|x| a * x + b).collect();
        prop_assert!((r2(&p, &moved_t).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn rmse_is_zero_only_on_equality(v in proptest::collection::vec(-1e3f64..1e3, 1..40), i in any::<prop::sample::Index>(), d in 1e-3f64..10.0) {
        prop_assert_eq!(rmse(&v, &v).unwrap(), 0.0);
        let mut w = v.clone();
        let k = i.index(w.len());
        w[k] += d;
        prop_assert!(rmse(&w, &v).unwrap() > 0.0);
    }
}
