use dpsan::doppelganger::{
    closed_form_effectiveness, estimate_reidentification, evaluate, generate_doppelganger,
    DoppelgangerParams,
};
use dpsan::heatmap::{render_heatmap, Bounds};
use dpsan::{GeoPoint, RandomSource};

#[test]
fn effectiveness_peaks_beyond_two_copies() {
    for re in [5.0, 10.0, 15.0] {
        let best = (2..=10)
            .max_by(|&a, &b| {
                let fa = closed_form_effectiveness(a, re, 1.0).unwrap();
                let fb = closed_form_effectiveness(b, re, 1.0).unwrap();
                fa.total_cmp(&fb)
            })
            .unwrap();
        assert!(best >= 3, "rε={re}: best K {best}");
    }
}

#[test]
fn effectiveness_within_three_se_small_grid() {
    for (i, (k, re)) in [(2, 2.5), (5, 5.0), (8, 10.0), (10, 15.0)].into_iter().enumerate() {
        let params = DoppelgangerParams::new(k, 1.0, 1.0, re).unwrap();
        let est = evaluate(&params, 1.0, 100_000, RandomSource::new(31, i as u64)).unwrap();
        let exact = closed_form_effectiveness(k, re, 1.0).unwrap();
        let se = (exact * (1.0 - exact) / 1e5).sqrt();
        assert!((est.effectiveness.value - exact).abs() <= 3.0 * se, "K={k} rε={re}");
    }
}

#[test]
fn reidentification_rises_with_r_eps() {
    let low = DoppelgangerParams::new(4, 2.5, 2.5, 1.0).unwrap();
    let high = DoppelgangerParams::new(4, 15.0, 15.0, 1.0).unwrap();
    let a = estimate_reidentification(&low, 2.5, 50_000, RandomSource::new(32, 0)).unwrap();
    let b = estimate_reidentification(&high, 15.0, 50_000, RandomSource::new(32, 1)).unwrap();
    let tol = 3.0 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!(a.value + tol < b.value);
}

#[test]
fn product_invariance_for_scaled_pairs() {
    for c in [2.0, 4.0] {
        let base = DoppelgangerParams::new(4, 5.0, 5.0, 1.0).unwrap();
        let scaled = DoppelgangerParams::new(4, 5.0 * c, 5.0 * c, 1.0 / c).unwrap();
        let a = evaluate(&base, 5.0, 100_000, RandomSource::new(33, 0)).unwrap();
        let b = evaluate(&scaled, 5.0 * c, 100_000, RandomSource::new(33, 1)).unwrap();
        for (x, y) in [(a.effectiveness, b.effectiveness), (a.reid_rate, b.reid_rate)] {
            let tol = 3.0 * (x.std_error.powi(2) + y.std_error.powi(2)).sqrt();
            assert!((x.value - y.value).abs() <= tol, "c={c}");
        }
    }
}

#[test]
fn large_k_small_r_eps_has_positive_gap() {
    let params = DoppelgangerParams::new(10, 5.0, 5.0, 1.0).unwrap();
    let res = evaluate(&params, 5.0, 100_000, RandomSource::new(34, 0)).unwrap();
    assert!(res.gap() > 0.0, "gap {}", res.gap());
}

#[test]
fn hot_spot_survives_release() {
    // ten cases around one hot spot, each released as five copies at ε = 0.5
    let mut rng = RandomSource::new(35, 0).rng();
    let center = GeoPoint::new(150.0, 150.0);
    let truth: Vec<GeoPoint> = (0..10)
        .map(|i| {
            let a = i as f64 * 0.63;
            GeoPoint::new(center.x + 4.0 * a.cos(), center.y + 4.0 * a.sin())
        })
        .collect();
    let params = DoppelgangerParams::new(5, 10.0, 10.0, 0.5).unwrap();
    let released: Vec<GeoPoint> = truth
        .iter()
        .enumerate()
        .flat_map(|(i, &p)| generate_doppelganger(i.to_string(), p, &params, &mut rng).unwrap().points)
        .collect();
    let bandwidth = 20.0;
    let bounds = Bounds::new(0.0, 300.0, 0.0, 300.0).unwrap();
    let a = render_heatmap(&truth, bandwidth, bounds, (150, 150)).unwrap();
    let b = render_heatmap(&released, bandwidth, bounds, (150, 150)).unwrap();
    let (pa, pb) = (a.argmax(), b.argmax());
    let d = a.cell_center(pa.0, pa.1).distance(&b.cell_center(pb.0, pb.1));
    assert!(d <= bandwidth, "argmax moved {d}");
}
