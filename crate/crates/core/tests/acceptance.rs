//! Acceptance report: one PASS/FAIL line per criterion, with the measured
//! values and the tolerance each is held to.
//!
//! The full pipeline (2^17 symbols per span count, split-step propagation,
//! launch-power sweep, BER-driven design) takes several minutes on one core.
//! Set `CDCLAB_ACCEPTANCE_QUICK=1` to skip the criteria that need it.
//!
//! Failures are reported, not hidden: the process exits 0 so the rest of the
//! workspace suite still runs, unless `CDCLAB_ACCEPTANCE_STRICT=1`, in which
//! case any FAIL line makes it exit 1.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use cdclab::channel::{
    apply_cd_analytic, apply_cd_length, propagate_manakov, Direction, FiberParams,
    PropagationConfig,
};
use cdclab::design::{
    cluster_taps, generate_taps, max_filter_size, ClusteredFilter, DispersionParams, TapSet,
};
use cdclab::equalizers::{
    tdce_complexity, tdce_fir, tdce_fir_counted, tde_complexity, tde_fir, tde_fir_counted, Mode,
};
use cdclab::experiment::{fde_for_taps, reproduce, ExperimentConfig, ResultRow, SpanOutcome};
use cdclab::fde::{
    fde_complexity, fde_overlap_save, optimize_fft_size, FdeConfig, FdeEqualizer, Radix,
};
use cdclab::link::{Equalizer, Method};
use cdclab::par::Exec;
use cdclab::signal::SampleFrame;
use cdclab::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Reference values.
const MAX_SIZES: [usize; 4] = [45, 89, 177, 353];
const CLUSTERS: [usize; 4] = [9, 10, 10, 12];
const TDCE_COSTS: [usize; 4] = [36, 40, 40, 48];
const TDE_SIZES: [usize; 4] = [29, 49, 93, 181];
const TDE_COSTS: [usize; 4] = [116, 196, 372, 724];
const FDE_COSTS: [f64; 4] = [32.0, 35.0, 38.0, 42.0];
const FFT_SIZES: [usize; 4] = [256, 256, 1024, 4096];

// Pinned tolerances.
const FDE_COST_TOL: f64 = 1.0;
const CLUSTER_TOL: usize = 2;
const CASES: usize = 200;
const TDCE_EQUIV_TOL: f64 = 1e-12;
const OLS_TOL: f64 = 1e-9;
const CD_PAIR_TOL: f64 = 1e-12;
const SPLIT_STEP_TOL: f64 = 1e-6;
const MIN_BITS: u64 = 100_000;
const FINAL_BER: f64 = 3.8e-3;

struct Line {
    id: usize,
    pass: Option<bool>,
    text: String,
}

impl Line {
    fn new(id: usize, pass: bool, text: impl Into<String>) -> Self {
        Self {
            id,
            pass: Some(pass),
            text: text.into(),
        }
    }

    fn skipped(id: usize, why: &str) -> Self {
        Self {
            id,
            pass: None,
            text: why.into(),
        }
    }

    fn print(&self) {
        let tag = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("criterion {}: {tag} — {}", self.id, self.text);
    }
}

fn reference_link(n_spans: usize) -> DispersionParams {
    DispersionParams::new(16.8, 1550e-9, 80e3 * n_spans as f64, 1.0 / 64e9)
}

fn criterion_1() -> Line {
    let got: Vec<usize> = (0..4)
        .map(|i| max_filter_size(&reference_link(1 << i)).unwrap())
        .collect();
    Line::new(
        1,
        got == MAX_SIZES,
        format!("max filter sizes for 1/2/4/8 spans = {got:?}, expected {MAX_SIZES:?} exactly"),
    )
}

fn criterion_2(designed_m: Option<&[usize]>) -> Line {
    let tdce: Vec<usize> = CLUSTERS.iter().map(|&n| tdce_complexity(n)).collect();
    let tde: Vec<usize> = TDE_SIZES.iter().map(|&n| tde_complexity(n)).collect();
    let mut pass = tdce == TDCE_COSTS && tde == TDE_COSTS;
    let mut text =
        format!("TDCE {tdce:?} (exact {TDCE_COSTS:?}); TDE {tde:?} (exact {TDE_COSTS:?}); ");
    match designed_m {
        Some(ms) => {
            let fde: Vec<f64> = ms
                .iter()
                .map(|&m| fde_complexity(&optimize_fft_size(m, Radix::Radix4).unwrap()).unwrap())
                .collect();
            let ok = fde
                .iter()
                .zip(FDE_COSTS)
                .all(|(a, b)| (a - b).abs() <= FDE_COST_TOL);
            pass &= ok;
            let shown: Vec<String> = fde.iter().map(|c| format!("{c:.2}")).collect();
            write!(
                text,
                "FDE at derived M {ms:?} = [{}] (±{FDE_COST_TOL} of {FDE_COSTS:?})",
                shown.join(", ")
            )
            .unwrap();
        }
        None => text.push_str("FDE row skipped (needs the pipeline)"),
    }
    Line::new(2, pass, text)
}

fn criterion_3(designed_m: &[usize]) -> Line {
    let got: Vec<usize> = designed_m
        .iter()
        .map(|&m| optimize_fft_size(m, Radix::Radix4).unwrap().fft_size)
        .collect();
    Line::new(
        3,
        got == FFT_SIZES,
        format!("radix-4 FFT sizes for derived M {designed_m:?} = {got:?}, expected {FFT_SIZES:?} exactly"),
    )
}

fn criterion_4(outcomes: &[SpanOutcome]) -> Line {
    let got: Vec<usize> = outcomes.iter().map(|o| o.design.tdce.chosen).collect();
    let pass = got.len() == 4
        && got
            .iter()
            .zip(CLUSTERS)
            .all(|(&a, b)| a.abs_diff(b) <= CLUSTER_TOL);
    let powers: Vec<f64> = outcomes.iter().map(|o| o.design.launch_power_dbm).collect();
    Line::new(
        4,
        pass,
        format!(
            "cluster counts {got:?} (±{CLUSTER_TOL} of {CLUSTERS:?}); launch powers {powers:?} dBm"
        ),
    )
}

fn complex(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn random_frame(rng: &mut ChaCha8Rng, len: usize) -> SampleFrame {
    let x = (0..len).map(|_| complex(rng)).collect();
    let y = (0..len).map(|_| complex(rng)).collect();
    SampleFrame::new(x, y, 2, 32e9).unwrap()
}

fn rms(a: &[Complex64], b: &[Complex64]) -> f64 {
    (a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).norm_sqr())
        .sum::<f64>()
        / a.len().max(1) as f64)
        .sqrt()
}

fn frame_rms(a: &SampleFrame, b: &SampleFrame) -> f64 {
    let (x, y) = (rms(&a.x, &b.x), rms(&a.y, &b.y));
    ((x * x + y * y) / 2.0).sqrt()
}

fn direct_convolution(x: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    let h = (taps.len() / 2) as isize;
    (0..x.len() as isize)
        .map(|n| {
            (-h..=h)
                .filter(|k| (0..x.len() as isize).contains(&(n - k)))
                .map(|k| taps[(k + h) as usize] * x[(n - k) as usize])
                .sum()
        })
        .collect()
}

fn criterion_5() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let params = reference_link(1);

    // Clustered filter against the direct filter on its expanded taps, and
    // singleton clusters (same summation order) bit for bit.
    let mut tdce_worst = 0.0f64;
    let mut singletons_exact = true;
    for _ in 0..CASES {
        let size: usize = 2 * rng.gen_range(0..20) + 1;
        let nc = rng.gen_range(1..=size);
        let reps = (0..nc).map(|_| complex(&mut rng)).collect();
        let mut assignment: Vec<usize> = (0..size).map(|_| rng.gen_range(0..nc)).collect();
        assignment[..nc]
            .iter_mut()
            .enumerate()
            .for_each(|(c, a)| *a = c);
        let filter = ClusteredFilter::new(reps, assignment, params).unwrap();
        let f = {
            let len = rng.gen_range(64..400);
            random_frame(&mut rng, len)
        };
        let a = tdce_fir(&f, &filter).unwrap();
        let b = tde_fir(&f, &filter.expanded_taps()).unwrap();
        tdce_worst = tdce_worst.max(frame_rms(&a.frame, &b.frame));

        let taps =
            TapSet::from_taps((0..size).map(|_| complex(&mut rng)).collect(), params).unwrap();
        let a = tdce_fir(&f, &ClusteredFilter::singletons(&taps)).unwrap();
        let b = tde_fir(&f, &taps).unwrap();
        singletons_exact &= a.frame == b.frame;
    }

    let mut ols_worst = 0.0f64;
    for _ in 0..CASES {
        let size: usize = 2 * rng.gen_range(0..40) + 1;
        let taps: Vec<Complex64> = (0..size).map(|_| complex(&mut rng)).collect();
        let set = TapSet::from_taps(taps.clone(), params).unwrap();
        let radix = if rng.gen() {
            Radix::Radix4
        } else {
            Radix::Radix2
        };
        let mut n = size.next_power_of_two().max(4) << rng.gen_range(0..3);
        while !radix.admits(n) {
            n <<= 1;
        }
        let f = {
            let len = rng.gen_range(n..n + 1500);
            random_frame(&mut rng, len)
        };
        let out = fde_overlap_save(&f, &set, &FdeConfig::new(n, size, radix).unwrap()).unwrap();
        let h = set.half_width();
        let inner = h..f.len() - h;
        for (got, x) in [(&out.frame.x, &f.x), (&out.frame.y, &f.y)] {
            let want = direct_convolution(x, &taps);
            ols_worst = ols_worst.max(rms(&got[inner.clone()], &want[inner.clone()]));
        }
    }

    let mut pair_worst = 0.0f64;
    for _ in 0..CASES {
        let f = {
            let len = rng.gen_range(16..600);
            random_frame(&mut rng, len)
        };
        let p = DispersionParams::new(
            rng.gen_range(1.0..25.0),
            1550e-9,
            rng.gen_range(0.0..2.0e6),
            f.sampling_period(),
        );
        let there = apply_cd_length(&f, &p, Direction::Forward);
        pair_worst = pair_worst.max(frame_rms(
            &apply_cd_length(&there, &p, Direction::Inverse),
            &f,
        ));
    }

    let mut ssf_worst = 0.0f64;
    for _ in 0..CASES {
        let f = {
            let len = rng.gen_range(64..512);
            random_frame(&mut rng, len)
        };
        let fiber = FiberParams {
            gamma_per_w_km: 0.0,
            ..FiberParams::default()
        }
        .with_spans(rng.gen_range(1..4));
        let cfg = PropagationConfig {
            step_km: fiber.span_length_km / rng.gen_range(1..40) as f64,
            ase: false,
            ..PropagationConfig::default()
        };
        let out = propagate_manakov(&f, &fiber, &cfg).unwrap();
        ssf_worst = ssf_worst.max(frame_rms(
            &out,
            &apply_cd_analytic(&f, &fiber, Direction::Forward),
        ));
    }

    let pass = tdce_worst <= TDCE_EQUIV_TOL
        && singletons_exact
        && ols_worst <= OLS_TOL
        && pair_worst <= CD_PAIR_TOL
        && ssf_worst <= SPLIT_STEP_TOL;
    Line::new(
        5,
        pass,
        format!(
            "{CASES} cases each, worst RMS: clustered vs expanded {tdce_worst:.1e} (≤ {TDCE_EQUIV_TOL:.0e}), \
             singletons exact = {singletons_exact}; overlap-save vs direct {ols_worst:.1e} (≤ {OLS_TOL:.0e}); \
             dispersion ± pair {pair_worst:.1e} (≤ {CD_PAIR_TOL:.0e}); linear split-step vs analytic \
             {ssf_worst:.1e} (≤ {SPLIT_STEP_TOL:.0e})"
        ),
    )
}

fn criterion_6() -> Line {
    let mut cfg = ExperimentConfig::default();
    cfg.run.n_symbols = 1 << 14;
    let tx = cfg.transmission().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for n_spans in [1, 2, 4, 8] {
        let rx = apply_cd_analytic(&tx.frame, &cfg.fiber_for(n_spans), Direction::Forward);
        let capture = tx.capture(rx, cfg.skip_symbols(n_spans).unwrap());
        let params = cfg.dispersion_for(n_spans);
        let taps = generate_taps(&params, max_filter_size(&params).unwrap()).unwrap();
        for eq in [
            Equalizer::Tde(taps.clone()),
            fde_for_taps(&taps, Radix::Radix4).unwrap(),
        ] {
            let r = capture.evaluate(&eq, Exec::default()).unwrap();
            pass &= r.ber.errors == 0 && r.ber.total >= MIN_BITS;
            parts.push(format!(
                "{n_spans}sp {}: {}/{} errors, {:.1} dB",
                eq.method(),
                r.ber.errors,
                r.ber.total,
                r.snr_db
            ));
        }
    }
    Line::new(
        6,
        pass,
        format!("noise-free dispersion-only link, full-size taps, BER = 0 required over ≥ {MIN_BITS} bits: {}", parts.join("; ")),
    )
}

fn criterion_7(outcomes: &[SpanOutcome], cfg: &ExperimentConfig) -> Line {
    let Some(one) = outcomes.iter().find(|o| o.design.n_spans == 1) else {
        return Line::skipped(7, "1-span result missing");
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for method in [Method::Tdce, Method::Fde] {
        let row = one
            .results
            .iter()
            .find(|r| r.row.method == method && r.row.mode == Mode::Fixed);
        match row {
            Some(r) => {
                let ber = r.row.ber.unwrap();
                pass &= ber < FINAL_BER;
                parts.push(format!(
                    "{method} {} BER {ber:.2e}",
                    cfg.fixed_point.format_for(method)
                ));
            }
            None => {
                pass = false;
                parts.push(format!("{method} fixed-point row missing"));
            }
        }
    }
    Line::new(
        7,
        pass,
        format!(
            "1 span, boundary quantization, BER < {FINAL_BER:.1e}: {}",
            parts.join("; ")
        ),
    )
}

fn criterion_8(designed_m: Option<&[usize]>) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frame = random_frame(&mut rng, 1 << 13);
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, n_spans) in [1usize, 2, 4, 8].into_iter().enumerate() {
        let params = reference_link(n_spans);
        let taps = generate_taps(&params, TDE_SIZES[i]).unwrap();
        let (_, c) = tde_fir_counted(&frame, &taps, Exec::default()).unwrap();
        pass &= c.mults_per_output() == TDE_COSTS[i] as f64;
        let filter = cluster_taps(&taps, CLUSTERS[i], 20, 1).unwrap();
        let (_, k) = tdce_fir_counted(&frame, &filter, Exec::default()).unwrap();
        pass &= k.mults_per_output() == TDCE_COSTS[i] as f64;
        let mut part = format!(
            "{n_spans}sp TDE {} mults/{:.0} adds/{:.0} reads, TDCE {} mults/{:.0} adds/{:.0} reads",
            c.mults_per_output(),
            c.adds_per_output(),
            c.reads_per_output(),
            k.mults_per_output(),
            k.adds_per_output(),
            k.reads_per_output()
        );
        if let Some(ms) = designed_m {
            let cfg = optimize_fft_size(ms[i], Radix::Radix4).unwrap();
            let fde_taps = generate_taps(&params, ms[i]).unwrap();
            let (_, f) = FdeEqualizer::new(&fde_taps, cfg)
                .unwrap()
                .process_counted(&frame, Exec::default())
                .unwrap();
            let model = fde_complexity(&cfg).unwrap();
            pass &= (f.mults_per_output() - model).abs() < 1e-9;
            write!(
                part,
                ", FDE {:.2} mults (model {model:.2})",
                f.mults_per_output()
            )
            .unwrap();
        }
        parts.push(part);
    }
    Line::new(
        8,
        pass,
        format!(
            "energy, power, area and FPGA resources are not reproducible here; substituted by operation counters, \
             whose multiplications must equal the complexity formulas: {}",
            parts.join("; ")
        ),
    )
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../golden/results.csv")
}

fn golden_check(outcomes: &[SpanOutcome]) -> (bool, String) {
    let mut ours = ResultRow::HEADER.join(",");
    ours.push('\n');
    for r in outcomes.iter().flat_map(|o| &o.results) {
        ours.push_str(&r.row.fields().join(","));
        ours.push('\n');
    }
    let path = golden_path();
    match std::fs::read_to_string(&path) {
        Ok(golden) if golden == ours => (true, format!("matches {}", path.display())),
        Ok(golden) => {
            let diff: Vec<String> = golden
                .lines()
                .zip(ours.lines())
                .filter(|(a, b)| a != b)
                .take(3)
                .map(|(a, b)| format!("golden `{a}` vs `{b}`"))
                .collect();
            (
                false,
                format!("differs from {}: {}", path.display(), diff.join("; ")),
            )
        }
        Err(e) => (false, format!("cannot read {}: {e}", path.display())),
    }
}

fn main() -> ExitCode {
    let quick = std::env::var_os("CDCLAB_ACCEPTANCE_QUICK").is_some_and(|v| v == "1");
    let strict = std::env::var_os("CDCLAB_ACCEPTANCE_STRICT").is_some_and(|v| v == "1");

    let cfg = ExperimentConfig::default();
    let outcomes = if quick {
        None
    } else {
        let start = Instant::now();
        eprintln!(
            "acceptance: running the full pipeline on spans {:?} ...",
            cfg.run.spans
        );
        let out =
            reproduce(&cfg, &[Mode::Float, Mode::Fixed], Exec::default()).expect("pipeline runs");
        eprintln!(
            "acceptance: pipeline finished in {:.0} s",
            start.elapsed().as_secs_f64()
        );
        Some(out)
    };
    let designed_m: Option<Vec<usize>> = outcomes
        .as_ref()
        .map(|o| o.iter().map(|s| s.design.fde.chosen).collect());
    let skip = "needs the full pipeline (CDCLAB_ACCEPTANCE_QUICK=1)";

    let lines = [
        criterion_1(),
        criterion_2(designed_m.as_deref()),
        match &designed_m {
            Some(m) => criterion_3(m),
            None => Line::skipped(3, skip),
        },
        match &outcomes {
            Some(o) => criterion_4(o),
            None => Line::skipped(4, skip),
        },
        criterion_5(),
        criterion_6(),
        match &outcomes {
            Some(o) => criterion_7(o, &cfg),
            None => Line::skipped(7, skip),
        },
        criterion_8(designed_m.as_deref()),
    ];
    println!("acceptance report");
    for line in &lines {
        line.print();
    }
    if let Some(o) = &outcomes {
        let (ok, text) = golden_check(o);
        println!(
            "golden table: {} — {text}",
            if ok { "PASS" } else { "FAIL" }
        );
    }
    let failed: Vec<usize> = lines
        .iter()
        .filter(|l| l.pass == Some(false))
        .map(|l| l.id)
        .collect();
    println!(
        "summary: {} passed, {} failed {:?}, {} skipped",
        lines.iter().filter(|l| l.pass == Some(true)).count(),
        failed.len(),
        failed,
        lines.iter().filter(|l| l.pass.is_none()).count()
    );
    if strict && !failed.is_empty() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
