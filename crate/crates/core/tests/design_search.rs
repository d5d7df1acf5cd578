//! Design searches checked against exhaustive or random references.

use cdclab::channel::{apply_cd_analytic, Direction};
use cdclab::design::{
    cluster_count_search, cluster_taps, cluster_taps_with, generate_taps, max_filter_size,
    truncation_search, truncation_search_from, DispersionParams, KMeansOptions,
};
use cdclab::experiment::ExperimentConfig;
use cdclab::link::{Capture, Equalizer};
use cdclab::par::Exec;
use cdclab::{CdcError, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 1-span, dispersion-only, noise-free link.
fn noiseless_capture(n_symbols: usize) -> (ExperimentConfig, Capture) {
    let mut cfg = ExperimentConfig::default();
    cfg.run.n_symbols = n_symbols;
    let tx = cfg.transmission().unwrap();
    let rx = apply_cd_analytic(&tx.frame, &cfg.fiber_for(1), Direction::Forward);
    let capture = tx.capture(rx, cfg.skip_symbols(1).unwrap());
    (cfg, capture)
}

fn partition_distortion(points: &[Complex64], assignment: &[usize], k: usize) -> f64 {
    let mut sums = vec![Complex64::default(); k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        sums[c] += p;
        counts[c] += 1;
    }
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| (p - sums[c] / counts[c] as f64).norm_sqr())
        .sum()
}

#[test]
fn clustering_beats_ten_thousand_random_partitions() {
    let params = DispersionParams::new(16.8, 1550e-9, 80e3, 1.0 / 64e9);
    let taps = generate_taps(&params, max_filter_size(&params).unwrap()).unwrap();
    let k = 9;
    let filter = cluster_taps(&taps, k, 300, 11).unwrap();
    let ours = filter.distortion(&taps);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = taps.size();
    for trial in 0..10_000 {
        let mut assignment: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        // Force every cluster to be non-empty.
        let mut slots: Vec<usize> = (0..n).collect();
        for c in 0..k {
            let j = rng.gen_range(c..n);
            slots.swap(c, j);
            assignment[slots[c]] = c;
        }
        let random = partition_distortion(&taps.taps, &assignment, k);
        assert!(ours <= random + 1e-12, "trial {trial}: {ours} > {random}");
    }
}

#[test]
fn clustering_extremes() {
    let params = DispersionParams::new(16.8, 1550e-9, 80e3, 1.0 / 64e9);
    let taps = generate_taps(&params, 21).unwrap();
    let all = cluster_taps(&taps, 21, 3, 0).unwrap();
    assert_eq!(all.expanded_taps().taps, taps.taps);

    let one = cluster_taps(&taps, 1, 3, 0).unwrap();
    let mean: Complex64 = taps.taps.iter().sum::<Complex64>() / 21.0;
    assert!((one.expanded_taps().taps[0] - mean).norm() < 1e-15);

    assert!(matches!(
        cluster_taps(&taps, 22, 3, 0),
        Err(CdcError::Parameter(_))
    ));
    assert!(matches!(
        cluster_taps(&taps, 0, 3, 0),
        Err(CdcError::Parameter(_))
    ));
}

#[test]
fn clustering_is_deterministic_and_policy_independent() {
    let params = DispersionParams::new(16.8, 1550e-9, 320e3, 1.0 / 64e9);
    let taps = generate_taps(&params, 93).unwrap();
    let opts = |exec| KMeansOptions {
        trials: 40,
        seed: 3,
        max_iterations: 500,
        exec,
    };
    let a = cluster_taps_with(&taps, 10, &opts(Exec::Sequential)).unwrap();
    let b = cluster_taps_with(&taps, 10, &opts(Exec::Parallel)).unwrap();
    let c = cluster_taps_with(&taps, 10, &opts(Exec::Parallel)).unwrap();
    assert_eq!(a, b);
    assert_eq!(b, c);
}

#[test]
fn truncation_search_stops_at_first_failure_and_larger_sizes_pass() {
    let (cfg, capture) = noiseless_capture(1 << 13);
    let params = cfg.dispersion_for(1);
    let max = max_filter_size(&params).unwrap();
    let target = 1e-2;
    let ber = |n: usize| {
        capture
            .evaluate(
                &Equalizer::Tde(generate_taps(&params, n).unwrap()),
                Exec::default(),
            )
            .unwrap()
            .ber
    };
    let report = truncation_search(&params, target, |t| Ok(ber(t.size()))).unwrap();
    assert!(
        report.chosen + 10 < max,
        "chosen {} of {max}",
        report.chosen
    );
    // The table descends from the maximum and ends at the first failure.
    assert_eq!(report.table[0].candidate, max);
    assert_eq!(report.table.len(), (max - report.chosen) / 2 + 2);
    assert!(!report.table.last().unwrap().report.passes(target));
    // Exhaustive sweep: every size at or above the choice meets the target.
    for n in (report.chosen..=max).step_by(2) {
        assert!(ber(n).passes(target), "size {n} fails");
    }
    assert!(!ber(report.chosen - 2).passes(target));
}

#[test]
fn truncation_search_degenerate_target_probes_down_to_one_tap() {
    let params = DispersionParams::new(16.8, 1550e-9, 80e3, 1.0 / 64e9);
    let report = truncation_search_from(&params, 11, 1.0, |_| {
        Ok(cdclab::signal::BerReport {
            errors: 500,
            total: 1000,
            ber: 0.5,
        })
    })
    .unwrap();
    assert_eq!(report.chosen, 1);
    assert_eq!(report.trials, 6);
}

#[test]
fn truncation_search_reports_best_ber_when_infeasible() {
    let params = DispersionParams::new(16.8, 1550e-9, 80e3, 1.0 / 64e9);
    let err = truncation_search(&params, 1e-3, |t| {
        Ok(cdclab::signal::BerReport {
            errors: 100 + t.size() as u64,
            total: 1000,
            ber: (100 + t.size()) as f64 / 1000.0,
        })
    })
    .unwrap_err();
    match err {
        CdcError::NoFeasibleSize { best_ber, target } => {
            assert_eq!(best_ber, 0.145);
            assert_eq!(target, 1e-3);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn cluster_count_search_on_noiseless_link() {
    let (cfg, capture) = noiseless_capture(1 << 13);
    let params = cfg.dispersion_for(1);
    let taps = generate_taps(&params, max_filter_size(&params).unwrap()).unwrap();
    let opts = KMeansOptions {
        trials: 50,
        seed: 9,
        ..Default::default()
    };
    let ber = |f: &cdclab::design::ClusteredFilter| {
        capture
            .evaluate(&Equalizer::Tdce(f.clone()), Exec::default())
            .map(|r| r.ber)
    };
    let target = 1e-2;
    let (report, filter) = cluster_count_search(&taps, target, &opts, ber).unwrap();
    assert!(report.chosen <= taps.size() / 3, "N_C = {}", report.chosen);
    assert_eq!(filter.n_clusters(), report.chosen);
    assert!(report
        .table
        .iter()
        .rev()
        .skip(1)
        .all(|p| !p.report.passes(target)));

    // Sweep past the choice: BER does not grow with the cluster count until it
    // reaches the floor set by the taps (one error of slack for measurement
    // noise).
    let mut prev = u64::MAX;
    for nc in 1..=2 * report.chosen {
        let r = ber(&cluster_taps_with(&taps, nc, &opts).unwrap()).unwrap();
        assert!(
            r.errors <= prev.saturating_add(1),
            "N_C = {nc}: {} errors after {prev}",
            r.errors
        );
        prev = prev.min(r.errors);
    }

    // The exact filter is always a feasible fallback: it reproduces the
    // direct filter's result.
    let exact = cluster_taps_with(&taps, taps.size(), &opts).unwrap();
    let direct = capture
        .evaluate(&Equalizer::Tde(taps.clone()), Exec::default())
        .unwrap()
        .ber;
    assert_eq!(ber(&exact).unwrap(), direct);
    assert!(direct.passes(target));
}
