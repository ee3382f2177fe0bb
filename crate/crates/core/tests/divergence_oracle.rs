mod common;

use common::{to_f64, Hp};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigmap::divergence::{
    contrast, js_divergence, kl_divergence, signature_map, softmax, ProbabilityRow,
};
use sigmap::DivergenceKind;

fn random_row(rng: &mut ChaCha8Rng, d: usize) -> ProbabilityRow {
    let scale = [0.1, 1.0, 5.0][rng.random_range(0..3)];
    let h: Vec<f64> = (0..d).map(|_| scale * rng.random_range(-3.0..3.0)).collect();
    softmax(&h, 1.0).unwrap()
}

#[test]
fn kl_and_js_match_high_precision_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut hp = Hp::new();
    let mut worst = 0.0f64;
    for i in 0..150 {
        let d = [2, 8, 512][i % 3];
        let (p, q) = (random_row(&mut rng, d), random_row(&mut rng, d));
        let kl_ref = to_f64(&hp.kl(p.values(), q.values()));
        let js_ref = to_f64(&hp.js(p.values(), q.values()));
        worst = worst
            .max((kl_divergence(&p, &q).unwrap() - kl_ref).abs())
            .max((js_divergence(&p, &q).unwrap() - js_ref).abs());
    }
    assert!(worst <= 1e-10, "max abs error {worst:e}");
}

#[test]
fn softmax_matches_high_precision_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut hp = Hp::new();
    for _ in 0..50 {
        let tau = rng.random_range(0.2..5.0);
        let h: Vec<f64> = (0..16).map(|_| rng.random_range(-20.0..20.0)).collect();
        let p = softmax(&h, tau).unwrap();
        let exps: Vec<_> = h.iter().map(|&x| hp.exp(&hp.num(x / tau))).collect();
        let z = hp.sum(&exps);
        for (e, &pi) in exps.iter().zip(p.values()) {
            let r = to_f64(&hp.div(e, &z));
            assert!((pi - r).abs() <= 1e-15 + 1e-13 * r, "{pi} vs {r}");
        }
    }
}

#[test]
fn three_layer_map_matches_all_pairs_reference() {
    let h = [[0.3f32, -1.2], [2.0, 0.5], [-0.7, -0.7]];
    let rows: Vec<ProbabilityRow> = h.iter().map(|r| softmax(r, 1.0).unwrap()).collect();
    let mut hp = Hp::new();
    for kind in [DivergenceKind::Kl, DivergenceKind::Js] {
        let map = signature_map(&rows, kind).unwrap();
        for i in 0..3 {
            assert_eq!(map.get(i, i), 0.0);
            for j in (0..3).filter(|&j| j != i) {
                let (p, q) = (rows[i].values(), rows[j].values());
                let r = to_f64(&match kind {
                    DivergenceKind::Kl => hp.kl(p, q),
                    DivergenceKind::Js => hp.js(p, q),
                });
                assert!((map.get(i, j) - r).abs() <= 1e-12, "({i},{j}) {} vs {r}", map.get(i, j));
            }
        }
    }
}

#[test]
fn contrast_fixed_point_and_half() {
    assert_eq!(contrast(0.0, 1.0), 0.0);
    assert!((contrast(std::f64::consts::LN_2, 1.0) - 0.5).abs() <= 1e-15);
    assert!(contrast(1e3, 1.0) < 1.0);
}

fn logits(d: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    d.prop_flat_map(|n| proptest::collection::vec(-30.0f64..30.0, n))
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| {
        (proptest::collection::vec(-30.0f64..30.0, n), proptest::collection::vec(-30.0f64..30.0, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn gibbs_and_js_bounds((a, b) in pair()) {
        let (p, q) = (softmax(&a, 1.0).unwrap(), softmax(&b, 1.0).unwrap());
        prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        let js = js_divergence(&p, &q).unwrap();
        prop_assert!((0.0..=std::f64::consts::LN_2).contains(&js));
        prop_assert_eq!(js.to_bits(), js_divergence(&q, &p).unwrap().to_bits());
    }

    #[test]
    fn identical_rows_have_zero_divergence(a in logits(2..64)) {
        let p = softmax(&a, 1.0).unwrap();
        prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        prop_assert_eq!(js_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(a in logits(1..128), shift in -1e3f64..1e3, tau in 0.05f64..20.0) {
        let p = softmax(&a, tau).unwrap();
        let s: f64 = p.values().iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = a.iter().map(|x| x + shift).collect();
        let ps = softmax(&shifted, tau).unwrap();
        for (x, y) in p.values().iter().zip(ps.values()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn huge_temperature_is_uniform(a in proptest::collection::vec(-1.0f64..1.0, 1..64)) {
        let p = softmax(&a, 1e6).unwrap();
        let u = 1.0 / a.len() as f64;
        prop_assert!(p.values().iter().all(|v| (v - u).abs() <= 1e-6));
    }

    #[test]
    fn map_diagonal_is_exact_zero(rows in (2usize..6, 2usize..10).prop_flat_map(|(l, d)| {
        proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, d), l)
    })) {
        let rows: Vec<ProbabilityRow> = rows.iter().map(|r| softmax(r, 1.0).unwrap()).collect();
        for kind in [DivergenceKind::Kl, DivergenceKind::Js] {
            let map = signature_map(&rows, kind).unwrap();
            for i in 0..rows.len() {
                prop_assert_eq!(map.get(i, i).to_bits(), 0.0f64.to_bits());
            }
        }
    }

    #[test]
    fn contrast_is_monotone_and_bounded(x in 0.0f64..10.0, step in 1e-6f64..1.0, alpha in 0.1f64..2.0) {
        let y = x + step;
        let (cx, cy) = (contrast(x, alpha), contrast(y, alpha));
        prop_assert!(cx < cy);
        prop_assert!((0.0..1.0).contains(&cx) && (0.0..1.0).contains(&cy));
    }
}
