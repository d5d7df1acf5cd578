use std::fs;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use cdclab::design::{ClusteredFilter, DesignSearchReport};
use cdclab::equalizers::Mode;
use cdclab::experiment::{
    complexity_table, design_span, equalize, simulate_span, transmission_from_bits,
    ExperimentConfig, LaunchPoint, ResultRow, SpanData, SpanDesign,
};
use cdclab::frame_io::{load_bits, load_frame, save_bits, save_frame};
use cdclab::link::{Equalizer, Method, Transmission};
use cdclab::par::Exec;
use cdclab::signal::BerReport;

use crate::args::{Cli, Command, GlobalArgs};
use crate::error::{CliError, CliResult};
use crate::store::{self, channel_hash, config_hash, config_toml, rows_to_csv, Store};

const METHODS: [Method; 3] = [Method::Tde, Method::Tdce, Method::Fde];

struct Context {
    cfg: ExperimentConfig,
    store: Store,
    exec: Exec,
    mode: Option<Mode>,
}

fn load_config(global: &GlobalArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Missing {
                    what: "configuration file",
                    path: path.clone(),
                });
            }
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.run.seed = seed;
    }
    if let Some(spans) = &global.spans {
        cfg.run.spans = spans.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli.global)?;
    let store = Store::open(&cli.global.out)?;
    store.write_text(store::CONFIG, &config_toml(&cfg)?)?;
    let ctx = Context {
        cfg,
        store,
        exec: if cli.global.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        },
        mode: cli.global.mode.map(Mode::from),
    };
    match cli.command {
        Command::Simulate => simulate(&ctx).map(drop),
        Command::Design => {
            let (tx, data) = load_channel(&ctx, true)?;
            design(&ctx, &tx, &data).map(drop)
        }
        Command::Equalize { method } => equalize_cached(&ctx, method.into()),
        Command::Complexity {
            tde_sizes,
            clusters,
            fde_sizes,
            radix,
        } => complexity(&ctx, tde_sizes, clusters, fde_sizes, radix.map(Into::into)),
        Command::Sweep => sweep(&ctx),
    }
}

/// Launch-power sweep and cache index written by `simulate`.
#[derive(Debug, Serialize, Deserialize)]
struct SimulateRecord {
    channel_hash: String,
    seed: u64,
    spans: Vec<SimulatedSpan>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SimulatedSpan {
    n_spans: usize,
    launch_power_dbm: f64,
    frame: String,
    sweep: Vec<LaunchPoint>,
}

#[derive(Serialize)]
struct SweepRow {
    span: usize,
    launch_power_dbm: f64,
    snr_db: String,
    ber: String,
    errors: u64,
    total_bits: u64,
    selected: bool,
}

fn simulate(ctx: &Context) -> CliResult<(Transmission, Vec<SpanData>)> {
    let cfg = &ctx.cfg;
    let tx = cfg.transmission()?;
    let bits_path = ctx.store.path(store::BITS);
    save_bits(&bits_path, &tx.bits).map_err(|e| CliError::at(&bits_path, e))?;

    let spans = &cfg.run.spans;
    let data = ctx
        .exec
        .map_range(spans.len(), |i| simulate_span(cfg, &tx, spans[i], ctx.exec))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut record = SimulateRecord {
        channel_hash: channel_hash(cfg)?,
        seed: cfg.run.seed,
        spans: Vec::new(),
    };
    let mut table = csv::Writer::from_writer(Vec::new());
    for d in &data {
        let name = store::frame_file(d.n_spans);
        let path = ctx.store.path(&name);
        save_frame(&path, &d.received).map_err(|e| CliError::at(&path, e))?;
        for p in &d.sweep {
            table
                .serialize(SweepRow {
                    span: d.n_spans,
                    launch_power_dbm: p.launch_power_dbm,
                    snr_db: format!("{:.3}", p.report.snr_db),
                    ber: format!("{:.6e}", p.report.ber.ber),
                    errors: p.report.ber.errors,
                    total_bits: p.report.ber.total,
                    selected: p.launch_power_dbm == d.launch_power_dbm,
                })
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        eprintln!(
            "simulate: {} span(s), launch power {} dBm -> {}",
            d.n_spans,
            d.launch_power_dbm,
            path.display()
        );
        record.spans.push(SimulatedSpan {
            n_spans: d.n_spans,
            launch_power_dbm: d.launch_power_dbm,
            frame: name,
            sweep: d.sweep.clone(),
        });
    }
    ctx.store.write_json(store::SIMULATE, &record)?;
    let text = String::from_utf8(
        table
            .into_inner()
            .map_err(|e| CliError::Usage(e.to_string()))?,
    )
    .expect("ASCII CSV");
    ctx.store.write_text(store::SIMULATE_CSV, &text)?;
    print!("{text}");
    Ok((tx, data))
}

/// Loads cached frames for every configured span count. When the cache is
/// missing or was produced by a different channel configuration, either
/// simulates afresh (`generate`) or fails naming the problem.
fn load_channel(ctx: &Context, generate: bool) -> CliResult<(Transmission, Vec<SpanData>)> {
    let cfg = &ctx.cfg;
    let hash = channel_hash(cfg)?;
    let record: Option<SimulateRecord> = if ctx.store.path(store::SIMULATE).is_file() {
        Some(ctx.store.read_json(store::SIMULATE, "simulation record")?)
    } else {
        None
    };
    let usable = record.as_ref().is_some_and(|r| {
        r.channel_hash == hash
            && cfg.run.spans.iter().all(|n| {
                r.spans
                    .iter()
                    .any(|s| s.n_spans == *n && ctx.store.path(&s.frame).is_file())
            })
    });
    if !usable {
        if generate {
            return simulate(ctx);
        }
        return match record {
            None => Err(CliError::Missing {
                what: "simulation record",
                path: ctx.store.path(store::SIMULATE),
            }),
            Some(_) => Err(CliError::Usage(format!(
                "cached frames in {} do not match the configuration or span list; run `cdclab simulate` first",
                ctx.store.path("").display()
            ))),
        };
    }
    let record = record.expect("usable record");
    let bits_path = ctx.store.require(store::BITS, "transmitted bits")?;
    let bits = load_bits(&bits_path).map_err(|e| CliError::at(&bits_path, e))?;
    let tx = transmission_from_bits(cfg, bits)?;
    let mut data = Vec::new();
    for &n in &cfg.run.spans {
        let s = record
            .spans
            .iter()
            .find(|s| s.n_spans == n)
            .expect("checked above");
        let path = ctx.store.require(&s.frame, "received frame")?;
        data.push(SpanData {
            n_spans: n,
            launch_power_dbm: s.launch_power_dbm,
            received: load_frame(&path).map_err(|e| CliError::at(&path, e))?,
            sweep: s.sweep.clone(),
        });
    }
    Ok((tx, data))
}

#[derive(Debug, Serialize, Deserialize)]
struct DesignFailure {
    span: usize,
    error: String,
}

/// Search tables and chosen sizes written by `design`.
#[derive(Debug, Serialize, Deserialize)]
struct DesignRecord {
    config_hash: String,
    channel_hash: String,
    designs: Vec<SpanDesign>,
    failures: Vec<DesignFailure>,
}

fn report_at_choice(search: &DesignSearchReport) -> BerReport {
    search
        .table
        .iter()
        .find(|p| p.candidate == search.chosen)
        .map(|p| p.report)
        .expect("the chosen candidate is in the table")
}

fn design_rows(cfg: &ExperimentConfig, d: &SpanDesign) -> CliResult<Vec<ResultRow>> {
    let params = cfg.dispersion_for(d.n_spans);
    let searches = [&d.tde, &d.tdce, &d.fde];
    METHODS
        .iter()
        .zip(searches)
        .map(|(&m, s)| {
            let eq = d.equalizer(m, &params)?;
            Ok(ResultRow::measured(
                d.n_spans,
                &eq,
                &report_at_choice(s),
                Mode::Float,
                cfg.run.seed,
            ))
        })
        .collect()
}

fn design(ctx: &Context, tx: &Transmission, data: &[SpanData]) -> CliResult<Vec<SpanDesign>> {
    let cfg = &ctx.cfg;
    let mut record = DesignRecord {
        config_hash: config_hash(cfg)?,
        channel_hash: channel_hash(cfg)?,
        designs: Vec::new(),
        failures: Vec::new(),
    };
    let mut rows = Vec::new();
    for d in data {
        match design_span(cfg, tx, d, ctx.exec) {
            Ok(design) => {
                ctx.store
                    .write_text(&store::filter_file(d.n_spans), &design.filter.to_text())?;
                eprintln!(
                    "design: {} span(s): TDE {} taps, TDCE {} clusters, FDE {} taps with N = {}",
                    d.n_spans,
                    design.tde.chosen,
                    design.tdce.chosen,
                    design.fde.chosen,
                    design.fde_config.fft_size
                );
                rows.extend(design_rows(cfg, &design)?);
                record.designs.push(design);
            }
            Err(e) => {
                eprintln!("design: {} span(s) failed: {e}", d.n_spans);
                record.failures.push(DesignFailure {
                    span: d.n_spans,
                    error: e.to_string(),
                });
            }
        }
    }
    ctx.store.write_json(store::DESIGN, &record)?;
    ctx.store.write_rows(store::DESIGN_CSV, &rows)?;
    print!("{}", rows_to_csv(&rows)?);
    if !record.failures.is_empty() {
        let spans: Vec<String> = record
            .failures
            .iter()
            .map(|f| format!("{} span(s)", f.span))
            .collect();
        return Err(CliError::Infeasible(spans.join(", ")));
    }
    Ok(record.designs)
}

fn load_designs(ctx: &Context) -> CliResult<DesignRecord> {
    let record: DesignRecord = ctx.store.read_json(store::DESIGN, "design record")?;
    if record.channel_hash != channel_hash(&ctx.cfg)? {
        return Err(CliError::Usage(format!(
            "{} was designed for a different channel configuration; run `cdclab design` first",
            ctx.store.path(store::DESIGN).display()
        )));
    }
    Ok(record)
}

fn find_design(record: &DesignRecord, n_spans: usize) -> CliResult<&SpanDesign> {
    record
        .designs
        .iter()
        .find(|d| d.n_spans == n_spans)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "no design for {n_spans} span(s); run `cdclab design --spans {n_spans}` first"
            ))
        })
}

fn run_equalizers(
    ctx: &Context,
    tx: &Transmission,
    data: &[SpanData],
    methods: &[Method],
    modes: &[Mode],
    equalizer: impl Fn(usize, Method) -> CliResult<Equalizer>,
) -> CliResult<Vec<ResultRow>> {
    let cfg = &ctx.cfg;
    let mut rows = Vec::new();
    for d in data {
        let capture = tx.capture(d.received.clone(), cfg.skip_symbols(d.n_spans)?);
        for &method in methods {
            let eq = equalizer(d.n_spans, method)?;
            for &mode in modes {
                let r = equalize(cfg, &capture, d.n_spans, &eq, mode, ctx.exec)?;
                eprintln!(
                    "equalize: {} span(s) {method} {mode}: BER {:.3e} ({} errors), SNR {:.2} dB, \
                     {:.2} real mults/output, {:.2} real adds/output, {:.2} reads/output, {:.2} s",
                    d.n_spans,
                    r.row.ber.unwrap_or(f64::NAN),
                    r.row.errors.unwrap_or(0),
                    r.snr_db,
                    r.counters.mults_per_output(),
                    r.counters.adds_per_output(),
                    r.counters.reads_per_output(),
                    r.seconds
                );
                rows.push(r.row);
            }
        }
    }
    Ok(rows)
}

fn equalize_cached(ctx: &Context, method: Method) -> CliResult<()> {
    let (tx, data) = load_channel(ctx, false)?;
    let record = load_designs(ctx)?;
    let rows = run_equalizers(
        ctx,
        &tx,
        &data,
        &[method],
        &[ctx.mode.unwrap_or(Mode::Float)],
        |n, m| {
            let design = find_design(&record, n)?;
            if m == Method::Tdce {
                let name = store::filter_file(n);
                let text = ctx.store.read_text(&name, "clustered filter")?;
                let filter: ClusteredFilter = text
                    .parse()
                    .map_err(|e| CliError::at(&ctx.store.path(&name), e))?;
                return Ok(Equalizer::Tdce(filter));
            }
            Ok(design.equalizer(m, &ctx.cfg.dispersion_for(n))?)
        },
    )?;
    ctx.store.upsert_rows(store::RESULTS_CSV, &rows)?;
    print!("{}", rows_to_csv(&rows)?);
    Ok(())
}

fn complexity(
    ctx: &Context,
    tde: Option<Vec<usize>>,
    clusters: Option<Vec<usize>>,
    fde: Option<Vec<usize>>,
    radix: Option<cdclab::fde::Radix>,
) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let radix = radix.unwrap_or(cfg.design.radix);
    let (spans, tde, clusters, fde) = if tde.is_some() || clusters.is_some() || fde.is_some() {
        (
            cfg.run.spans.clone(),
            tde.unwrap_or_default(),
            clusters.unwrap_or_default(),
            fde.unwrap_or_default(),
        )
    } else {
        let record = load_designs(ctx)?;
        let designs = cfg
            .run
            .spans
            .iter()
            .map(|&n| find_design(&record, n))
            .collect::<CliResult<Vec<_>>>()?;
        (
            cfg.run.spans.clone(),
            designs.iter().map(|d| d.tde.chosen).collect(),
            designs.iter().map(|d| d.tdce.chosen).collect(),
            designs.iter().map(|d| d.fde.chosen).collect(),
        )
    };
    let rows = complexity_table(&spans, &tde, &clusters, &fde, radix, cfg.run.seed)?;
    ctx.store.write_rows(store::COMPLEXITY_CSV, &rows)?;
    print!("{}", rows_to_csv(&rows)?);
    Ok(())
}

#[derive(Serialize)]
struct SpanSummary {
    n_spans: usize,
    launch_power_dbm: f64,
    max_size: usize,
    tde_size: usize,
    clusters: usize,
    fde_size: usize,
    fft_size: usize,
}

/// Summary written by `sweep`.
#[derive(Serialize)]
struct RunArtifact<'a> {
    config_hash: String,
    config: &'a ExperimentConfig,
    spans: Vec<SpanSummary>,
    tables: [&'static str; 4],
    seconds: f64,
}

fn sweep(ctx: &Context) -> CliResult<()> {
    let start = Instant::now();
    let cfg = &ctx.cfg;
    let (tx, data) = simulate(ctx)?;
    let designs = design(ctx, &tx, &data)?;
    let modes = match ctx.mode {
        Some(m) => vec![m],
        None => vec![Mode::Float, Mode::Fixed],
    };
    let rows = run_equalizers(ctx, &tx, &data, &METHODS, &modes, |n, m| {
        let d = designs
            .iter()
            .find(|d| d.n_spans == n)
            .expect("every span designed");
        Ok(d.equalizer(m, &cfg.dispersion_for(n))?)
    })?;
    ctx.store.write_rows(store::RESULTS_CSV, &rows)?;
    let complexity = complexity_table(
        &cfg.run.spans,
        &designs.iter().map(|d| d.tde.chosen).collect::<Vec<_>>(),
        &designs.iter().map(|d| d.tdce.chosen).collect::<Vec<_>>(),
        &designs.iter().map(|d| d.fde.chosen).collect::<Vec<_>>(),
        cfg.design.radix,
        cfg.run.seed,
    )?;
    ctx.store.write_rows(store::COMPLEXITY_CSV, &complexity)?;
    ctx.store.write_json(
        store::RUN,
        &RunArtifact {
            config_hash: config_hash(cfg)?,
            config: cfg,
            spans: designs
                .iter()
                .map(|d| SpanSummary {
                    n_spans: d.n_spans,
                    launch_power_dbm: d.launch_power_dbm,
                    max_size: d.max_size,
                    tde_size: d.tde.chosen,
                    clusters: d.tdce.chosen,
                    fde_size: d.fde.chosen,
                    fft_size: d.fde_config.fft_size,
                })
                .collect(),
            tables: [
                store::DESIGN_CSV,
                store::RESULTS_CSV,
                store::COMPLEXITY_CSV,
                store::SIMULATE_CSV,
            ],
            seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    print!("{}", rows_to_csv(&rows)?);
    Ok(())
}
