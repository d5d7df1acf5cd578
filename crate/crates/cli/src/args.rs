use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cdclab::equalizers::Mode;
use cdclab::fde::Radix;
use cdclab::link::Method;

/// Chromatic dispersion compensation experiments: simulate a coherent
/// 16-QAM link, design TDE/TDCE/FDE equalizers by BER, and report their
/// complexity.
#[derive(Debug, Parser)]
#[command(name = "cdclab", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Overrides `run.spans`, e.g. `1,2,4,8`.
    #[arg(long, global = true, value_name = "LIST", value_delimiter = ',')]
    pub spans: Option<Vec<usize>>,
    /// Arithmetic of the equalizers; `sweep` runs both when omitted.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Directory for cached frames, designs and tables.
    #[arg(long, global = true, value_name = "DIR", default_value = "cdclab-out")]
    pub out: PathBuf,
    /// Table format written to stdout and to the output directory.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    /// Run every kernel on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propagate the transmitted frame over each span count and cache it.
    Simulate,
    /// Design TDE, TDCE and FDE for each span count from cached frames
    /// (simulating first when the cache is missing or stale).
    Design,
    /// Run one designed equalizer on the cached frames and record its BER.
    Equalize {
        #[arg(long, value_enum)]
        method: MethodArg,
    },
    /// Real multiplications per symbol, from explicit sizes or from the
    /// last design.
    Complexity {
        /// Direct filter sizes, one per span count.
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        tde_sizes: Option<Vec<usize>>,
        /// Cluster counts, one per span count.
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        clusters: Option<Vec<usize>>,
        /// Frequency-domain filter lengths, one per span count.
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        fde_sizes: Option<Vec<usize>>,
        /// Overrides `design.radix` for the FFT cost model.
        #[arg(long, value_enum)]
        radix: Option<RadixArg>,
    },
    /// Simulate, design, and evaluate every method end to end.
    Sweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Float,
    Fixed,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Float => Mode::Float,
            ModeArg::Fixed => Mode::Fixed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Tde,
    Tdce,
    Fde,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Tde => Method::Tde,
            MethodArg::Tdce => Method::Tdce,
            MethodArg::Fde => Method::Fde,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RadixArg {
    Radix2,
    Radix4,
}

impl From<RadixArg> for Radix {
    fn from(r: RadixArg) -> Radix {
        match r {
            RadixArg::Radix2 => Radix::Radix2,
            RadixArg::Radix4 => Radix::Radix4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
}
