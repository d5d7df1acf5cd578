//! The end-to-end reproduction pipeline: simulate the link for each span
//! count, pick the launch power, design the three equalizers by measured BER,
//! and tabulate size, complexity and BER.
//!
//! Every random draw derives from [`RunSettings::seed`]: transmitted bits use
//! the seed itself, amplifier noise a value mixed from the seed, span count
//! and launch-power index, and clustering its own mixed value per span. Runs
//! with equal configuration are therefore bit-identical.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::{
    apply_cd_analytic, propagate_manakov_with, Direction, FiberParams, PropagationConfig,
};
use crate::design::{
    cluster_count_search, max_filter_size, truncation_search, ClusteredFilter, DesignSearchReport,
    DispersionParams, KMeansOptions, TapSet,
};
use crate::equalizers::{self, Mode, OpCounters};
use crate::fde::{fde_complexity, optimize_fft_size, FdeConfig, Radix};
use crate::fixed_point::FixedPointFormat;
use crate::link::{
    default_skip_symbols, transmit, Capture, Equalizer, LinkReport, Method, Transmission,
};
use crate::par::Exec;
use crate::signal::{BerReport, BitStream, RootRaisedCosine, SampleFrame};
use crate::{CdcError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    /// Span counts to reproduce.
    pub spans: Vec<usize>,
    pub seed: u64,
    /// Transmitted symbols per polarization.
    pub n_symbols: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            spans: vec![1, 2, 4, 8],
            seed: 1,
            n_symbols: 1 << 17,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSettings {
    /// Symbol rate, Bd.
    pub baud_rate: f64,
    pub samples_per_symbol: usize,
    pub rolloff: f64,
    pub rrc_span_symbols: usize,
}

impl Default for SignalSettings {
    fn default() -> Self {
        Self {
            baud_rate: 32e9,
            samples_per_symbol: 2,
            rolloff: 0.1,
            rrc_span_symbols: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationSettings {
    pub step_km: f64,
    /// Candidate launch powers; the one with the best post-compensation SNR
    /// is used for design.
    pub launch_powers_dbm: Vec<f64>,
    pub ase: bool,
}

impl Default for PropagationSettings {
    fn default() -> Self {
        Self {
            step_km: 0.1,
            launch_powers_dbm: vec![-1.0, 1.0, 3.0],
            ase: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSettings {
    /// BER the truncated time-domain filter must meet.
    pub ber_truncation: f64,
    /// BER the clustered and frequency-domain equalizers must meet.
    pub ber_final: f64,
    pub cluster_trials: usize,
    pub kmeans_max_iterations: usize,
    pub radix: Radix,
}

impl Default for DesignSettings {
    fn default() -> Self {
        Self {
            ber_truncation: 1e-3,
            ber_final: 3.8e-3,
            cluster_trials: 300,
            kmeans_max_iterations: 500,
            radix: Radix::Radix4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointSettings {
    pub tdce: FixedPointFormat,
    pub fde: FixedPointFormat,
    /// Time-domain filters run on the TDCE format, so this applies to TDE too.
    pub tde: FixedPointFormat,
    /// RMS per complex sample the input is scaled to before quantization.
    pub input_rms: f64,
}

impl Default for FixedPointSettings {
    fn default() -> Self {
        Self {
            tdce: FixedPointFormat::TDCE,
            fde: FixedPointFormat::FDE,
            tde: FixedPointFormat::TDCE,
            input_rms: 0.25,
        }
    }
}

impl FixedPointSettings {
    pub fn format_for(&self, method: Method) -> FixedPointFormat {
        match method {
            Method::Tde => self.tde,
            Method::Tdce => self.tdce,
            Method::Fde => self.fde,
        }
    }
}

/// Everything that determines a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSettings,
    pub signal: SignalSettings,
    /// `n_spans` here is ignored; span counts come from `run.spans`.
    pub fiber: FiberParams,
    pub propagation: PropagationSettings,
    pub design: DesignSettings,
    pub fixed_point: FixedPointSettings,
}

/// SplitMix64 finalizer over a seed and a list of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut z = base;
    for &t in tags {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(t);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const TAG_ASE: u64 = 1;
const TAG_KMEANS: u64 = 2;

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CdcError::Config(m));
        if self.run.spans.is_empty() {
            return bad("no span counts given".into());
        }
        if self.signal.samples_per_symbol != 2 {
            return bad(format!(
                "equalizers run at 2 samples per symbol, not {}",
                self.signal.samples_per_symbol
            ));
        }
        if !(self.signal.baud_rate > 0.0) {
            return bad("baud rate must be positive".into());
        }
        if self.propagation.launch_powers_dbm.is_empty() {
            return bad("no launch powers given".into());
        }
        if self.design.cluster_trials == 0 {
            return bad("cluster trials must be at least 1".into());
        }
        for (name, t) in [
            ("ber_truncation", self.design.ber_truncation),
            ("ber_final", self.design.ber_final),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("{name} = {t} outside [0, 1]"));
            }
        }
        if !(self.fixed_point.input_rms > 0.0) {
            return bad("input_rms must be positive".into());
        }
        self.rrc()?;
        self.fiber.validate()
    }

    pub fn rrc(&self) -> Result<RootRaisedCosine> {
        RootRaisedCosine::new(
            self.signal.rolloff,
            self.signal.rrc_span_symbols,
            self.signal.samples_per_symbol,
        )
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / (self.signal.samples_per_symbol as f64 * self.signal.baud_rate)
    }

    pub fn fiber_for(&self, n_spans: usize) -> FiberParams {
        self.fiber.with_spans(n_spans)
    }

    pub fn dispersion_for(&self, n_spans: usize) -> DispersionParams {
        self.fiber_for(n_spans)
            .dispersion_params(self.sample_period())
    }

    /// Symbols trimmed at each end before scoring a frame that crossed
    /// `n_spans` spans: twice the longest useful filter plus the shaping span.
    pub fn skip_symbols(&self, n_spans: usize) -> Result<usize> {
        let max_size = if n_spans == 0 {
            1
        } else {
            max_filter_size(&self.dispersion_for(n_spans))?
        };
        Ok(default_skip_symbols(max_size, &self.rrc()?))
    }

    pub fn transmission(&self) -> Result<Transmission> {
        transmit(
            self.run.n_symbols,
            self.run.seed,
            &self.rrc()?,
            self.signal.baud_rate,
        )
    }

    pub fn kmeans_options(&self, n_spans: usize, exec: Exec) -> KMeansOptions {
        KMeansOptions {
            trials: self.design.cluster_trials,
            seed: derive_seed(self.run.seed, &[TAG_KMEANS, n_spans as u64]),
            max_iterations: self.design.kmeans_max_iterations,
            exec,
        }
    }

    pub fn propagation_for(&self, n_spans: usize, power_index: usize) -> PropagationConfig {
        PropagationConfig {
            step_km: self.propagation.step_km,
            launch_power_dbm: self.propagation.launch_powers_dbm[power_index],
            seed: derive_seed(
                self.run.seed,
                &[TAG_ASE, n_spans as u64, power_index as u64],
            ),
            ase: self.propagation.ase,
        }
    }
}

/// One launch power tried for one span count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaunchPoint {
    pub launch_power_dbm: f64,
    /// Link quality after ideal dispersion compensation.
    pub report: LinkReport,
}

/// The received frame chosen for one span count.
#[derive(Clone, Debug)]
pub struct SpanData {
    pub n_spans: usize,
    pub launch_power_dbm: f64,
    pub received: SampleFrame,
    pub sweep: Vec<LaunchPoint>,
}

/// Scores a frame after exact (frequency-domain, full-length) dispersion
/// removal.
pub fn ideal_compensation(capture: &Capture, fiber: &FiberParams) -> Result<LinkReport> {
    let eq = apply_cd_analytic(&capture.received, fiber, Direction::Inverse);
    capture.score(&eq)
}

/// Propagates the transmission over `n_spans` at every configured launch
/// power and keeps the one with the highest post-compensation SNR (the
/// lowest power wins ties).
pub fn simulate_span(
    cfg: &ExperimentConfig,
    tx: &Transmission,
    n_spans: usize,
    exec: Exec,
) -> Result<SpanData> {
    let fiber = cfg.fiber_for(n_spans);
    let skip = cfg.skip_symbols(n_spans)?;
    let powers = &cfg.propagation.launch_powers_dbm;
    let runs = exec.map_range(powers.len(), |i| -> Result<(SampleFrame, LaunchPoint)> {
        let rx = propagate_manakov_with(&tx.frame, &fiber, &cfg.propagation_for(n_spans, i), exec)?;
        let report = ideal_compensation(&tx.capture(rx.clone(), skip), &fiber)?;
        Ok((
            rx,
            LaunchPoint {
                launch_power_dbm: powers[i],
                report,
            },
        ))
    });
    let mut best: Option<(SampleFrame, LaunchPoint)> = None;
    let mut sweep = Vec::with_capacity(runs.len());
    for run in runs {
        let (rx, point) = run?;
        sweep.push(point);
        if best
            .as_ref()
            .is_none_or(|(_, b)| point.report.snr_db > b.report.snr_db)
        {
            best = Some((rx, point));
        }
    }
    let (received, point) = best.expect("at least one launch power");
    Ok(SpanData {
        n_spans,
        launch_power_dbm: point.launch_power_dbm,
        received,
        sweep,
    })
}

/// The designed equalizers for one span count.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpanDesign {
    pub n_spans: usize,
    pub launch_power_dbm: f64,
    pub max_size: usize,
    /// Truncated direct filter at the strict BER target.
    pub tde: DesignSearchReport,
    /// Cluster count of the clustered filter built from the truncated taps.
    pub tdce: DesignSearchReport,
    pub filter: ClusteredFilter,
    /// Frequency-domain filter length at the final BER target.
    pub fde: DesignSearchReport,
    pub fde_config: FdeConfig,
}

impl SpanDesign {
    pub fn equalizer(&self, method: Method, params: &DispersionParams) -> Result<Equalizer> {
        Ok(match method {
            Method::Tde => Equalizer::Tde(crate::design::generate_taps(params, self.tde.chosen)?),
            Method::Tdce => Equalizer::Tdce(self.filter.clone()),
            Method::Fde => Equalizer::Fde {
                taps: crate::design::generate_taps(params, self.fde_config.filter_size)?,
                config: self.fde_config,
            },
        })
    }
}

/// Frequency-domain equalizer at the cost-optimal FFT size for `taps`.
pub fn fde_for_taps(taps: &TapSet, radix: Radix) -> Result<Equalizer> {
    Ok(Equalizer::Fde {
        taps: taps.clone(),
        config: optimize_fft_size(taps.size(), radix)?,
    })
}

/// Runs the three BER-driven searches on one span's received frame.
pub fn design_span(
    cfg: &ExperimentConfig,
    tx: &Transmission,
    data: &SpanData,
    exec: Exec,
) -> Result<SpanDesign> {
    let params = cfg.dispersion_for(data.n_spans);
    let max_size = max_filter_size(&params)?;
    let capture = tx.capture(data.received.clone(), cfg.skip_symbols(data.n_spans)?);
    let ber = |eq: Equalizer| -> Result<BerReport> { Ok(capture.evaluate(&eq, exec)?.ber) };

    let tde = truncation_search(&params, cfg.design.ber_truncation, |taps| {
        ber(Equalizer::Tde(taps.clone()))
    })?;
    let taps = crate::design::generate_taps(&params, tde.chosen)?;
    let (tdce, filter) = cluster_count_search(
        &taps,
        cfg.design.ber_final,
        &cfg.kmeans_options(data.n_spans, exec),
        |f| ber(Equalizer::Tdce(f.clone())),
    )?;
    let fde = truncation_search(&params, cfg.design.ber_final, |taps| {
        ber(fde_for_taps(taps, cfg.design.radix)?)
    })?;
    let fde_config = optimize_fft_size(fde.chosen, cfg.design.radix)?;
    Ok(SpanDesign {
        n_spans: data.n_spans,
        launch_power_dbm: data.launch_power_dbm,
        max_size,
        tde,
        tdce,
        filter,
        fde,
        fde_config,
    })
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub span: usize,
    pub method: Method,
    pub size_or_clusters: usize,
    pub fft_size: Option<usize>,
    pub real_mults_per_symbol: f64,
    pub ber: Option<f64>,
    pub errors: Option<u64>,
    pub total_bits: Option<u64>,
    pub mode: Mode,
    pub seed: u64,
}

impl ResultRow {
    pub const HEADER: [&'static str; 10] = [
        "span",
        "method",
        "size_or_clusters",
        "fft_size",
        "real_mults_per_symbol",
        "ber",
        "errors",
        "total_bits",
        "mode",
        "seed",
    ];

    /// Row without a BER measurement.
    pub fn design_only(span: usize, eq: &Equalizer, seed: u64) -> Self {
        Self {
            span,
            method: eq.method(),
            size_or_clusters: eq.size_or_clusters(),
            fft_size: eq.fft_size(),
            real_mults_per_symbol: eq.complexity(),
            ber: None,
            errors: None,
            total_bits: None,
            mode: Mode::Float,
            seed,
        }
    }

    pub fn measured(
        span: usize,
        eq: &Equalizer,
        report: &BerReport,
        mode: Mode,
        seed: u64,
    ) -> Self {
        Self {
            ber: Some(report.ber),
            errors: Some(report.errors),
            total_bits: Some(report.total),
            mode,
            ..Self::design_only(span, eq, seed)
        }
    }

    /// Fields in header order, formatted for CSV.
    pub fn fields(&self) -> [String; 10] {
        let opt = |v: Option<String>| v.unwrap_or_default();
        [
            self.span.to_string(),
            self.method.to_string(),
            self.size_or_clusters.to_string(),
            opt(self.fft_size.map(|n| n.to_string())),
            format_number(self.real_mults_per_symbol),
            opt(self.ber.map(|b| format!("{b:.6e}"))),
            opt(self.errors.map(|e| e.to_string())),
            opt(self.total_bits.map(|t| t.to_string())),
            self.mode.to_string(),
            self.seed.to_string(),
        ]
    }
}

/// Integers print without a fractional part, everything else with four
/// decimals.
fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.4}")
    }
}

/// Result of running one designed equalizer on one frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EqualizeResult {
    pub row: ResultRow,
    pub snr_db: f64,
    pub counters: OpCounters,
    pub seconds: f64,
}

pub fn equalize(
    cfg: &ExperimentConfig,
    capture: &Capture,
    n_spans: usize,
    eq: &Equalizer,
    mode: Mode,
    exec: Exec,
) -> Result<EqualizeResult> {
    let start = Instant::now();
    let fmt = cfg.fixed_point.format_for(eq.method());
    let (report, counters) = match mode {
        Mode::Float => capture.evaluate_counted(eq, exec)?,
        Mode::Fixed => {
            // Counters do not depend on the coefficient values.
            let report = capture.evaluate_fixed(eq, &fmt, cfg.fixed_point.input_rms, exec)?;
            let (_, counters) = eq.apply_counted(&capture.received, exec)?;
            (report, counters)
        }
    };
    Ok(EqualizeResult {
        row: ResultRow::measured(n_spans, eq, &report.ber, mode, cfg.run.seed),
        snr_db: report.snr_db,
        counters,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Real multiplications per symbol for explicit sizes, one row per method
/// and span. `fde_sizes` are filter lengths; FFT sizes are optimized. Any
/// list may be empty to omit that method.
pub fn complexity_table(
    spans: &[usize],
    tde_sizes: &[usize],
    cluster_counts: &[usize],
    fde_sizes: &[usize],
    radix: Radix,
    seed: u64,
) -> Result<Vec<ResultRow>> {
    for (name, v) in [
        ("TDE sizes", tde_sizes),
        ("cluster counts", cluster_counts),
        ("FDE sizes", fde_sizes),
    ] {
        if !v.is_empty() && v.len() != spans.len() {
            return Err(CdcError::Config(format!(
                "{} {name} given for {} span counts",
                v.len(),
                spans.len()
            )));
        }
        if v.contains(&0) {
            return Err(CdcError::Config(format!("{name} must be positive")));
        }
    }
    let row = |span, method, size, fft_size, mults| ResultRow {
        span,
        method,
        size_or_clusters: size,
        fft_size,
        real_mults_per_symbol: mults,
        ber: None,
        errors: None,
        total_bits: None,
        mode: Mode::Float,
        seed,
    };
    let mut rows = Vec::new();
    for (i, &span) in spans.iter().enumerate() {
        if let Some(&n) = tde_sizes.get(i) {
            rows.push(row(
                span,
                Method::Tde,
                n,
                None,
                equalizers::tde_complexity(n) as f64,
            ));
        }
        if let Some(&nc) = cluster_counts.get(i) {
            rows.push(row(
                span,
                Method::Tdce,
                nc,
                None,
                equalizers::tdce_complexity(nc) as f64,
            ));
        }
        if let Some(&m) = fde_sizes.get(i) {
            let c = optimize_fft_size(m, radix)?;
            rows.push(row(
                span,
                Method::Fde,
                m,
                Some(c.fft_size),
                fde_complexity(&c)?,
            ));
        }
    }
    Ok(rows)
}

/// Everything produced for one span count by [`reproduce`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpanOutcome {
    pub design: SpanDesign,
    pub sweep: Vec<LaunchPoint>,
    pub results: Vec<EqualizeResult>,
}

/// Full reproduction: simulate, design and evaluate every method in the
/// given modes for each configured span count.
pub fn reproduce(cfg: &ExperimentConfig, modes: &[Mode], exec: Exec) -> Result<Vec<SpanOutcome>> {
    cfg.validate()?;
    let tx = cfg.transmission()?;
    cfg.run
        .spans
        .iter()
        .map(|&n| {
            let data = simulate_span(cfg, &tx, n, exec)?;
            let design = design_span(cfg, &tx, &data, exec)?;
            let params = cfg.dispersion_for(n);
            let capture = tx.capture(data.received, cfg.skip_symbols(n)?);
            let mut results = Vec::new();
            for method in [Method::Tde, Method::Tdce, Method::Fde] {
                let eq = design.equalizer(method, &params)?;
                for &mode in modes {
                    results.push(equalize(cfg, &capture, n, &eq, mode, exec)?);
                }
            }
            Ok(SpanOutcome {
                design,
                sweep: data.sweep,
                results,
            })
        })
        .collect()
}

/// Rebuilds the transmit-side record from cached bits.
pub fn transmission_from_bits(cfg: &ExperimentConfig, bits: BitStream) -> Result<Transmission> {
    let tx = cfg.transmission()?;
    if tx.bits != bits {
        return Err(CdcError::Config(
            "cached bits do not match the configured seed and frame length".into(),
        ));
    }
    Ok(tx)
}
