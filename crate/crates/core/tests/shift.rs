use iupm_core::shift::{
    apply_rotation, apply_scaling, apply_translation, derive_seed, make_circles, make_clusters,
    make_moons, shifted, Dataset, GeneratedStream, ShiftKind, ShiftStream,
};
use iupm_core::Matrix;
use proptest::prelude::*;

fn points(raw: &[(f64, f64)]) -> Matrix {
    let rows: Vec<[f64; 2]> = raw.iter().map(|&(a, b)| [a, b]).collect();
    Matrix::from_rows(&rows).unwrap()
}

#[test]
fn fifty_small_rotations_equal_one_large() {
    let x = make_moons(100, 0.2, 1).unwrap().features;
    let c = [0.3, -0.1];
    let mut step = x.clone();
    for _ in 0..50 {
        step = apply_rotation(&step, 2.0, c).unwrap();
    }
    let once = apply_rotation(&x, 100.0, c).unwrap();
    assert!(step.max_abs_diff(&once) < 1e-7);
}

#[test]
fn rotation_stream_reaches_two_hundred_degrees() {
    let mut cfg = ShiftStream::new(Dataset::Moons, ShiftKind::Rotation, 2.0);
    cfg.seed = 11;
    let s = GeneratedStream::generate(&cfg).unwrap();
    assert_eq!(s.steps.len(), 100);
    let fresh = make_moons(200, 0.2, derive_seed(11, 100)).unwrap();
    // Streams turn clockwise: step k is a rotation by -k * magnitude.
    let expected = apply_rotation(&fresh.features, -200.0, s.center).unwrap();
    assert!(s.steps[99].features.max_abs_diff(&expected) < 1e-12);
    assert_eq!(s.steps[99].labels, fresh.labels);
}

#[test]
fn translation_stream_moves_only_the_inner_class() {
    let mut cfg = ShiftStream::new(Dataset::Circles, ShiftKind::Translation, 0.02);
    cfg.steps = 50;
    cfg.noise = Some(0.0);
    let s = GeneratedStream::generate(&cfg).unwrap();
    let fresh = make_circles(200, 0.0, 0.3, derive_seed(0, 50)).unwrap();
    let last = &s.steps[49];
    let y = last.labels.as_ref().unwrap();
    for i in 0..last.len() {
        let dx = last.features[(i, 0)] - fresh.features[(i, 0)];
        let want = if y[i] == 1 { 50.0 * 0.02 } else { 0.0 };
        assert!((dx - want).abs() < 1e-12);
        assert_eq!(last.features[(i, 1)], fresh.features[(i, 1)]);
    }
}

#[test]
fn cluster_covariance_is_near_identity() {
    let b = make_clusters(2000, 1.0, 6).unwrap();
    let y = b.labels.unwrap();
    for class in 0..2 {
        let rows: Vec<&[f64]> = b
            .features
            .iter_rows()
            .zip(&y)
            .filter(|(_, &c)| c == class)
            .map(|(r, _)| r)
            .collect();
        let n = rows.len() as f64;
        let mean = [0, 1].map(|d| rows.iter().map(|r| r[d]).sum::<f64>() / n);
        for a in 0..2 {
            for c in 0..2 {
                let cov = rows
                    .iter()
                    .map(|r| (r[a] - mean[a]) * (r[c] - mean[c]))
                    .sum::<f64>()
                    / (n - 1.0);
                let want = if a == c { 1.0 } else { 0.0 };
                assert!((cov - want).abs() < 0.1, "class {class} cov[{a}][{c}] = {cov}");
            }
        }
    }
}

#[test]
fn zero_step_batch_is_unshifted() {
    let cfg = ShiftStream::new(Dataset::Moons, ShiftKind::Scaling, 0.05);
    let b = make_moons(50, 0.2, 4).unwrap();
    let s = shifted(&cfg, &b, 0, [0.2, 0.1]).unwrap();
    assert!(s.features.max_abs_diff(&b.features) < 1e-15);
    assert_eq!(s.labels, b.labels);
}

proptest! {
    #[test]
    fn generated_classes_are_balanced(n in 2usize..300, seed in any::<u64>()) {
        for b in [
            make_moons(n, 0.2, seed).unwrap(),
            make_circles(n, 0.2, 0.3, seed).unwrap(),
            make_clusters(n, 1.0, seed).unwrap(),
        ] {
            let ones = b.labels.unwrap().iter().filter(|&&y| y == 1).count();
            let zeros = n - ones;
            prop_assert!(zeros.abs_diff(ones) <= 1);
        }
    }

    #[test]
    fn cumulative_transforms_match_one_shot(
        raw in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..20),
        per_step in -5.0f64..5.0,
        k in 0usize..40,
    ) {
        let x = points(&raw);
        let labels: Vec<usize> = (0..x.rows()).map(|i| i % 2).collect();
        let c = [0.4, -0.7];

        let mut rot = x.clone();
        let mut tr = x.clone();
        let mut sc = x.clone();
        let log_step = per_step / 100.0;
        for _ in 0..k {
            rot = apply_rotation(&rot, per_step, c).unwrap();
            tr = apply_translation(&tr, &labels, &[1], per_step / 100.0).unwrap();
            sc = apply_scaling(&sc, log_step.exp(), c).unwrap();
        }
        let kf = k as f64;
        prop_assert!(rot.max_abs_diff(&apply_rotation(&x, kf * per_step, c).unwrap()) < 1e-7);
        prop_assert!(tr.max_abs_diff(&apply_translation(&x, &labels, &[1], kf * per_step / 100.0).unwrap()) < 1e-7);
        prop_assert!(sc.max_abs_diff(&apply_scaling(&x, (kf * log_step).exp(), c).unwrap()) < 1e-7);
    }

    #[test]
    fn rotation_preserves_distance_to_center(raw in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..20), deg in -720.0f64..720.0) {
        let x = points(&raw);
        let c = [1.0, 2.0];
        let r = apply_rotation(&x, deg, c).unwrap();
        for i in 0..x.rows() {
            let before = (x[(i, 0)] - c[0]).hypot(x[(i, 1)] - c[1]);
            let after = (r[(i, 0)] - c[0]).hypot(r[(i, 1)] - c[1]);
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
