use groupdeconv::bandwidth::{adaptive_cap, adaptive_cutoff, adaptive_threshold};
use groupdeconv::charfn::{ecf_at, evaluate_grid, UGrid};
use groupdeconv::experiments::{replication_seed, run_cell, run_replication, EstimatorSettings};
use groupdeconv::inversion::{invert, l2_distance, XGrid};
use groupdeconv::rootlog::distinguished_root;
use groupdeconv::samples::{generate_grouped, TestLaw};
use num_complex::Complex64;

fn laws() -> [TestLaw; 4] {
    TestLaw::study_laws()
}

#[test]
fn scan_agrees_with_brute_force() {
    for i in 0..50u64 {
        let law = laws()[(i % 4) as usize];
        let k = [2, 5, 10][(i % 3) as usize];
        let s = generate_grouped(&law, 500, k, 100 + i).unwrap();
        let rec = adaptive_cutoff(&s, 1.1, 0.01).unwrap();
        let t = adaptive_threshold(500, k as f64, 1.1);
        let cap = adaptive_cap(500, k as f64, 1e3);
        let mut u = 0.0;
        while u < cap && ecf_at(&s, u).norm() > t {
            u += 1e-4;
        }
        let brute = u.min(cap);
        assert!(
            (rec.value - brute).abs() <= 2e-4,
            "sample {i}: {} vs {brute}",
            rec.value
        );
        assert!(rec.value <= cap);
    }
}

#[test]
fn cutoff_nonincreasing_in_eta() {
    for i in 0..50u64 {
        let law = laws()[(i % 4) as usize];
        let s = generate_grouped(&law, 1000, 5, 200 + i).unwrap();
        let mut last = f64::INFINITY;
        for eta in [1.05, 1.1, 1.5, 2.0, 4.0] {
            let m = adaptive_cutoff(&s, eta, 0.01).unwrap().value;
            assert!(m <= last + 0.01, "sample {i}, eta {eta}: {m} > {last}");
            last = m;
        }
    }
}

#[test]
fn median_cutoff_grows_with_n() {
    let law = laws()[0];
    let median = |n: usize| {
        let mut m: Vec<f64> = (0..50)
            .map(|r| {
                let s = generate_grouped(&law, n, 5, replication_seed(7, &law, n, 5, r)).unwrap();
                adaptive_cutoff(&s, 1.1, 0.01).unwrap().value
            })
            .collect();
        m.sort_by(f64::total_cmp);
        0.5 * (m[24] + m[25])
    };
    assert!(median(10_000) > median(1000));
}

#[test]
fn unit_group_matches_direct_inversion() {
    let law = laws()[1];
    let s = generate_grouped(&law, 1000, 1, 41).unwrap();
    let m = 3.0;
    let step = 0.005;
    let cf = evaluate_grid(&s, UGrid::nonnegative(m, step).unwrap());
    let root = distinguished_root(&cf, m, 1.0).unwrap();
    let xg = XGrid::new(-2.0, 10.0, 64).unwrap();
    let est = invert(&root, m, &xg).unwrap();
    let count = (m / step).round() as usize;
    for (i, x) in xg.points().into_iter().enumerate() {
        let mut acc = 0.0;
        for j in 0..=count {
            let u = j as f64 * step;
            let w = if j == 0 || j == count { 0.5 } else { 1.0 };
            acc += w * (Complex64::from_polar(1.0, -u * x) * ecf_at(&s, u)).re;
        }
        let direct = acc * step / std::f64::consts::PI;
        assert!((est.values[i] - direct).abs() < 1e-8, "x = {x}");
    }
}

#[test]
fn oracle_never_loses_on_shared_sample() {
    for law in laws() {
        for rep in 0..5 {
            let o = run_replication(&law, 1000, 5, 1.1, replication_seed(3, &law, 1000, 5, rep))
                .unwrap();
            assert!(o.risk_oracle <= o.risk_adaptive + 1e-6, "{law}: {o:?}");
        }
    }
}

#[test]
fn replications_do_not_depend_on_batching() {
    let law = laws()[2];
    let s = EstimatorSettings::default();
    let all = run_cell(&law, 500, 5, &s, 9, 0..6);
    let tail = run_cell(&law, 500, 5, &s, 9, 3..6);
    for (a, b) in all[3..].iter().zip(&tail) {
        assert_eq!(a.as_ref().unwrap(), b.as_ref().unwrap());
    }
}

#[test]
fn adaptive_estimate_is_close_to_truth() {
    let law = laws()[0];
    let s = generate_grouped(&law, 10_000, 5, 51).unwrap();
    let rec = adaptive_cutoff(&s, 1.1, 0.01).unwrap();
    let step = rec.value / 1024.0;
    let cf = evaluate_grid(&s, UGrid::with_half_count(step, 1025, false).unwrap());
    let root = distinguished_root(&cf, rec.value, 5.0).unwrap();
    let xg = XGrid::for_sample(&s, 8.0, 512).unwrap();
    let est = invert(&root, rec.value, &xg).unwrap();
    assert!(l2_distance(&law, &est, &xg) < 0.05);
}

#[test]
fn mean_adaptive_cutoff_falls_with_k() {
    let law = laws()[0];
    let s = EstimatorSettings::default();
    let mean_cut = |k| {
        let out = run_cell(&law, 1000, k, &s, 1, 0..10);
        out.iter()
            .map(|o| o.as_ref().unwrap().m_adaptive)
            .sum::<f64>()
            / 10.0
    };
    // At K = 50 the threshold lies below the n^{-1/2} noise level of the
    // ECF and the crossing is noise-driven, so compare K up to 20 only.
    let cuts: Vec<f64> = [5, 10, 20].into_iter().map(mean_cut).collect();
    assert!(cuts.windows(2).all(|w| w[1] < w[0]), "{cuts:?}");
}
