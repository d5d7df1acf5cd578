//! Randomized equivalence checks between each fast path and a direct
//! reference computation.

use cdclab::channel::{
    apply_cd_analytic, apply_cd_length, propagate_manakov, Direction, FiberParams,
    PropagationConfig,
};
use cdclab::design::{generate_taps, ClusteredFilter, DispersionParams, TapSet};
use cdclab::equalizers::{tdce_fir, tde_fir};
use cdclab::fde::{fde_complexity, fde_overlap_save, optimize_fft_size, FdeConfig, Radix};
use cdclab::signal::SampleFrame;
use cdclab::Complex64;
use proptest::prelude::*;

const CASES: u32 = 200;

fn complex() -> impl Strategy<Value = Complex64> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(re, im)| Complex64::new(re, im))
}

fn frame(len: std::ops::Range<usize>) -> impl Strategy<Value = SampleFrame> {
    len.prop_flat_map(|n| {
        (
            prop::collection::vec(complex(), n),
            prop::collection::vec(complex(), n),
        )
    })
    .prop_map(|(x, y)| SampleFrame::new(x, y, 2, 32e9).unwrap())
}

fn odd(range: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = usize> {
    range.prop_map(|h| 2 * h + 1)
}

fn params() -> DispersionParams {
    DispersionParams::new(16.8, 1550e-9, 80e3, 1.0 / 64e9)
}

fn rms_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum();
    (s / a.len().max(1) as f64).sqrt()
}

fn frame_rms_diff(a: &SampleFrame, b: &SampleFrame) -> f64 {
    let sx = rms_diff(&a.x, &b.x);
    let sy = rms_diff(&a.y, &b.y);
    ((sx * sx + sy * sy) / 2.0).sqrt()
}

/// `y[n] = Σ_k g_k·x[n − k]` for centred k, zero outside the frame.
fn direct_convolution(x: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    let h = (taps.len() / 2) as isize;
    (0..x.len() as isize)
        .map(|n| {
            (-h..=h)
                .filter_map(|k| {
                    let i = n - k;
                    (0..x.len() as isize)
                        .contains(&i)
                        .then(|| taps[(k + h) as usize] * x[i as usize])
                })
                .sum()
        })
        .collect()
}

/// Random partition of `size` taps into `nc` non-empty clusters.
fn clustered(size: usize) -> impl Strategy<Value = ClusteredFilter> {
    (1..=size)
        .prop_flat_map(move |nc| {
            (
                prop::collection::vec(complex(), nc),
                prop::collection::vec(0..nc, size),
                Just(nc),
            )
        })
        .prop_map(move |(reps, mut assignment, nc)| {
            // Make every cluster non-empty.
            for c in 0..nc {
                assignment[c] = c;
            }
            ClusteredFilter::new(reps, assignment, params()).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn clustered_filter_equals_direct_filter_on_expanded_taps(
        f in frame(64..400),
        filter in odd(0..=19).prop_flat_map(clustered),
    ) {
        prop_assume!(f.len() >= filter.size());
        let a = tdce_fir(&f, &filter).unwrap();
        let b = tde_fir(&f, &filter.expanded_taps()).unwrap();
        prop_assert!(frame_rms_diff(&a.frame, &b.frame) < 1e-12);
        prop_assert_eq!(a.group_delay, b.group_delay);
    }

    #[test]
    fn singleton_clusters_reproduce_direct_filter_bit_for_bit(
        f in frame(64..300),
        taps in odd(0..=14).prop_flat_map(|n| prop::collection::vec(complex(), n)),
    ) {
        let taps = TapSet::from_taps(taps, params()).unwrap();
        prop_assume!(f.len() >= taps.size());
        let a = tdce_fir(&f, &ClusteredFilter::singletons(&taps)).unwrap();
        let b = tde_fir(&f, &taps).unwrap();
        prop_assert_eq!(a.frame, b.frame);
    }

    #[test]
    fn direct_filter_is_a_centred_convolution(
        f in frame(32..200),
        taps in odd(0..=9).prop_flat_map(|n| prop::collection::vec(complex(), n)),
    ) {
        let set = TapSet::from_taps(taps.clone(), params()).unwrap();
        prop_assume!(f.len() >= set.size());
        let out = tde_fir(&f, &set).unwrap();
        prop_assert!(rms_diff(&out.frame.x, &direct_convolution(&f.x, &taps)) < 1e-12);
        prop_assert!(rms_diff(&out.frame.y, &direct_convolution(&f.y, &taps)) < 1e-12);
    }

    #[test]
    fn overlap_save_equals_direct_convolution_on_interior(
        f in frame(300..1500),
        taps in odd(0..=39).prop_flat_map(|n| prop::collection::vec(complex(), n)),
        extra_log2 in 0u32..4,
        radix4 in any::<bool>(),
    ) {
        let set = TapSet::from_taps(taps.clone(), params()).unwrap();
        let radix = if radix4 { Radix::Radix4 } else { Radix::Radix2 };
        let mut n = set.size().next_power_of_two().max(4) << extra_log2;
        while !radix.admits(n) {
            n <<= 1;
        }
        let cfg = FdeConfig::new(n, set.size(), radix).unwrap();
        prop_assume!(f.len() >= n);
        let out = fde_overlap_save(&f, &set, &cfg).unwrap();
        let h = set.half_width();
        let interior = h..f.len() - h;
        let want_x = direct_convolution(&f.x, &taps);
        let want_y = direct_convolution(&f.y, &taps);
        prop_assert!(rms_diff(&out.frame.x[interior.clone()], &want_x[interior.clone()]) < 1e-9);
        prop_assert!(rms_diff(&out.frame.y[interior.clone()], &want_y[interior]) < 1e-9);
    }

    #[test]
    fn dispersion_inverse_pair_is_identity(
        f in frame(16..600),
        d in 1.0f64..25.0,
        z_km in 0.0f64..2000.0,
    ) {
        let p = DispersionParams::new(d, 1550e-9, z_km * 1e3, f.sampling_period());
        let there = apply_cd_length(&f, &p, Direction::Forward);
        let back = apply_cd_length(&there, &p, Direction::Inverse);
        prop_assert!(frame_rms_diff(&back, &f) < 1e-12);
        let reverse = apply_cd_length(&apply_cd_length(&f, &p, Direction::Inverse), &p, Direction::Forward);
        prop_assert!(frame_rms_diff(&reverse, &f) < 1e-12);
    }

    #[test]
    fn linear_split_step_equals_analytic_dispersion(
        f in frame(64..512),
        spans in 1usize..4,
        steps_per_span in 1usize..40,
        loss in prop_oneof![Just(0.0), Just(0.21)],
    ) {
        let fiber = FiberParams {
            gamma_per_w_km: 0.0,
            attenuation_db_km: loss,
            ..FiberParams::default()
        }
        .with_spans(spans);
        let cfg = PropagationConfig {
            step_km: fiber.span_length_km / steps_per_span as f64,
            ase: false,
            ..PropagationConfig::default()
        };
        let out = propagate_manakov(&f, &fiber, &cfg).unwrap();
        let want = apply_cd_analytic(&f, &fiber, Direction::Forward);
        prop_assert!(frame_rms_diff(&out, &want) < 1e-6);
    }

    #[test]
    fn taps_have_constant_modulus_and_even_symmetry(
        d in 0.5f64..30.0,
        lambda_nm in 1260.0f64..1675.0,
        z_km in 1.0f64..3000.0,
        baud_g in 8.0f64..128.0,
        half in 0usize..200,
    ) {
        let p = DispersionParams::new(d, lambda_nm * 1e-9, z_km * 1e3, 1.0 / (2.0 * baud_g * 1e9));
        let taps = generate_taps(&p, 2 * half + 1).unwrap();
        let g0 = taps.tap(0).norm();
        for k in -(half as isize)..=half as isize {
            prop_assert!((taps.tap(k).norm() - g0).abs() <= 1e-12 * g0);
            prop_assert_eq!(taps.tap(k), taps.tap(-k));
        }
    }
}

/// Exhaustive scan written independently of the library's optimizer: every
/// admissible power of two from 2 up to 2^20, smallest N on ties.
fn brute_force_fft_size(m: usize, radix: Radix) -> usize {
    let beta = match radix {
        Radix::Radix2 => 0.5,
        Radix::Radix4 => 0.375,
    };
    let mut best = (f64::INFINITY, 0usize);
    for log2 in 1..=20u32 {
        if radix == Radix::Radix4 && log2 % 2 == 1 {
            continue;
        }
        let n = 1usize << log2;
        if n < m {
            continue;
        }
        let cost = n as f64 * (8.0 * beta * log2 as f64 + 4.0) / (n - m + 1) as f64;
        if cost < best.0 {
            best = (cost, n);
        }
    }
    best.1
}

#[test]
fn optimizer_agrees_with_brute_force_scan() {
    for radix in [Radix::Radix2, Radix::Radix4] {
        for m in 1..=4096 {
            let got = optimize_fft_size(m, radix).unwrap();
            assert_eq!(
                got.fft_size,
                brute_force_fft_size(m, radix),
                "M = {m}, {radix:?}"
            );
            assert_eq!(got.filter_size, m);
        }
    }
}

#[test]
fn cost_is_unimodal_in_fft_size() {
    for radix in [Radix::Radix2, Radix::Radix4] {
        for m in [2, 3, 17, 33, 100, 196, 353, 1000, 4000] {
            let costs: Vec<f64> = (1..=20u32)
                .map(|l| 1usize << l)
                .filter(|&n| radix.admits(n) && n >= m)
                .map(|n| fde_complexity(&FdeConfig::new(n, m, radix).unwrap()).unwrap())
                .collect();
            let turn = costs
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            // Exact ties are possible for tiny M (radix 2, M = 2: N = 2 and
            // N = 4 both cost 16); the optimizer resolves them to the smaller N.
            for w in costs[..=turn].windows(2) {
                assert!(
                    w[1] < w[0],
                    "M = {m}: not strictly decreasing before the optimum"
                );
            }
            for (i, w) in costs[turn..].windows(2).enumerate() {
                let tie_at_optimum = i == 0 && w[1] == w[0];
                assert!(
                    w[1] > w[0] || tie_at_optimum,
                    "M = {m}: not increasing after the optimum"
                );
            }
        }
    }
}
