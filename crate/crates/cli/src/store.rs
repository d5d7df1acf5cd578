//! Layout of the output directory and the file formats inside it.
//!
//! ```text
//! config.toml        effective configuration of the last command
//! bits.bin           transmitted bits
//! span<n>.frame      received frame after n spans at the chosen launch power
//! simulate.json      launch-power sweep and channel fingerprint
//! span<n>.tdce       clustered filter in its text format
//! design.json        search tables and chosen sizes per span count
//! design.csv         one row per method and span count at the chosen size
//! results.csv        equalizer runs, one row per (span, method, mode)
//! complexity.csv     multiplications per symbol
//! run.json           summary and wall-clock time of the last sweep
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cdclab::channel::FiberParams;
use cdclab::experiment::{ExperimentConfig, PropagationSettings, ResultRow, SignalSettings};
use cdclab::frame_io::write_atomic;

use crate::error::{CliError, CliResult};

pub const BITS: &str = "bits.bin";
pub const SIMULATE: &str = "simulate.json";
pub const DESIGN: &str = "design.json";
pub const DESIGN_CSV: &str = "design.csv";
pub const RESULTS_CSV: &str = "results.csv";
pub const COMPLEXITY_CSV: &str = "complexity.csv";
pub const RUN: &str = "run.json";
pub const CONFIG: &str = "config.toml";
pub const SIMULATE_CSV: &str = "simulate.csv";

pub fn frame_file(n_spans: usize) -> String {
    format!("span{n_spans}.frame")
}

pub fn filter_file(n_spans: usize) -> String {
    format!("span{n_spans}.tdce")
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn config_toml(cfg: &ExperimentConfig) -> CliResult<String> {
    toml::to_string(cfg)
        .map_err(|e| CliError::Usage(format!("cannot serialize configuration: {e}")))
}

/// Fingerprint of the configuration as a whole.
pub fn config_hash(cfg: &ExperimentConfig) -> CliResult<String> {
    Ok(sha256_hex(config_toml(cfg)?.as_bytes()))
}

/// The configuration fields that determine the received frames.
#[derive(Serialize)]
struct ChannelKey<'a> {
    seed: u64,
    n_symbols: usize,
    signal: &'a SignalSettings,
    fiber: &'a FiberParams,
    propagation: &'a PropagationSettings,
}

/// Fingerprint of the fields that determine the received frames; the span
/// list is excluded because each span count is cached separately.
pub fn channel_hash(cfg: &ExperimentConfig) -> CliResult<String> {
    let key = ChannelKey {
        seed: cfg.run.seed,
        n_symbols: cfg.run.n_symbols,
        signal: &cfg.signal,
        fiber: &cfg.fiber,
        propagation: &cfg.propagation,
    };
    let text = serde_json::to_string(&key).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(sha256_hex(text.as_bytes()))
}

pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn open(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Fails with a usage error naming the file when it does not exist.
    pub fn require(&self, name: &str, what: &'static str) -> CliResult<PathBuf> {
        let path = self.path(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::Missing { what, path })
        }
    }

    pub fn write_text(&self, name: &str, text: &str) -> CliResult<()> {
        let path = self.path(name);
        write_atomic(&path, |f| Ok(io::Write::write_all(f, text.as_bytes())?))
            .map_err(|e| CliError::at(&path, e))
    }

    pub fn read_text(&self, name: &str, what: &'static str) -> CliResult<String> {
        let path = self.require(name, what)?;
        fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str, what: &'static str) -> CliResult<T> {
        let text = self.read_text(name, what)?;
        serde_json::from_str(&text).map_err(|e| CliError::Corrupt {
            path: self.path(name),
            detail: e.to_string(),
        })
    }

    pub fn write_rows(&self, name: &str, rows: &[ResultRow]) -> CliResult<()> {
        self.write_text(name, &rows_to_csv(rows)?)
    }

    /// Replaces rows with the same (span, method, mode) as a new row, keeps
    /// the rest, and writes the table back in (span, method, mode) order.
    pub fn upsert_rows(&self, name: &str, rows: &[ResultRow]) -> CliResult<Vec<ResultRow>> {
        let path = self.path(name);
        let mut table: Vec<ResultRow> = if path.is_file() {
            read_rows(&path)?
        } else {
            Vec::new()
        };
        let key = |r: &ResultRow| (r.span, r.method as u8, r.mode as u8);
        table.retain(|old| rows.iter().all(|new| key(new) != key(old)));
        table.extend(rows.iter().cloned());
        table.sort_by_key(key);
        self.write_rows(name, &table)?;
        Ok(table)
    }
}

pub fn rows_to_csv(rows: &[ResultRow]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Usage(e.to_string());
    w.write_record(ResultRow::HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.fields()).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV of ASCII fields"))
}

#[derive(Deserialize)]
struct CsvRow {
    span: usize,
    method: String,
    size_or_clusters: usize,
    fft_size: Option<usize>,
    real_mults_per_symbol: f64,
    ber: Option<f64>,
    errors: Option<u64>,
    total_bits: Option<u64>,
    mode: String,
    seed: u64,
}

pub fn read_rows(path: &Path) -> CliResult<Vec<ResultRow>> {
    let corrupt = |detail: String| CliError::Corrupt {
        path: path.to_path_buf(),
        detail,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| corrupt(e.to_string()))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| corrupt(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != ResultRow::HEADER {
        return Err(corrupt(format!("unexpected header {header:?}")));
    }
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row.map_err(|e| corrupt(e.to_string()))?;
            Ok(ResultRow {
                span: row.span,
                method: row
                    .method
                    .parse()
                    .map_err(|e: cdclab::CdcError| corrupt(e.to_string()))?,
                size_or_clusters: row.size_or_clusters,
                fft_size: row.fft_size,
                real_mults_per_symbol: row.real_mults_per_symbol,
                ber: row.ber,
                errors: row.errors,
                total_bits: row.total_bits,
                mode: row
                    .mode
                    .parse()
                    .map_err(|e: cdclab::CdcError| corrupt(e.to_string()))?,
                seed: row.seed,
            })
        })
        .collect()
}
