//! Time-domain equalizers.
//!
//! Both kernels compute, per polarization and for every input sample,
//!
//! ```text
//! y[n] = Σ_k g_k · x[n − k],   k = −(N−1)/2 ..= (N−1)/2
//! ```
//!
//! with zeros outside the frame, so the output is aligned with the input
//! (group delay `(N−1)/2` already removed). The clustered kernel groups the
//! sum by cluster, `y[n] = Σ_c ĝ_c · Σ_{k∈c} x[n − k]`, which needs one complex
//! multiplication per cluster instead of one per tap.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::design::{ClusteredFilter, TapSet};
use crate::par::Exec;
use crate::signal::SampleFrame;
use crate::{CdcError, Result};

/// Output samples per parallel work item.
const BLOCK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Float,
    Fixed,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Float => "float",
            Mode::Fixed => "fixed",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = CdcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float" => Ok(Mode::Float),
            "fixed" => Ok(Mode::Fixed),
            _ => Err(CdcError::param(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EqualizerOutput {
    pub frame: SampleFrame,
    /// Delay in samples that was compensated to align output with input.
    pub group_delay: usize,
    pub mode: Mode,
}

/// Arithmetic and memory-traffic tallies. A complex multiplication counts as
/// four real multiplications and two real additions; a complex addition as
/// two real additions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub real_mults: u64,
    pub real_adds: u64,
    pub memory_reads: u64,
    /// Output samples produced.
    pub outputs: u64,
}

impl OpCounters {
    pub fn merge(&mut self, other: &OpCounters) {
        self.real_mults += other.real_mults;
        self.real_adds += other.real_adds;
        self.memory_reads += other.memory_reads;
        self.outputs += other.outputs;
    }

    /// Real multiplications per equalizer output, the unit of the
    /// per-recovered-symbol complexity figures.
    pub fn mults_per_output(&self) -> f64 {
        self.real_mults as f64 / self.outputs as f64
    }

    pub fn adds_per_output(&self) -> f64 {
        self.real_adds as f64 / self.outputs as f64
    }

    pub fn reads_per_output(&self) -> f64 {
        self.memory_reads as f64 / self.outputs as f64
    }

    pub const CSV_HEADER: &'static str =
        "method,real_mults,real_adds,memory_reads,outputs,mults_per_output,adds_per_output,reads_per_output";

    pub fn csv_row(&self, method: &str) -> String {
        format!(
            "{method},{},{},{},{},{},{},{}",
            self.real_mults,
            self.real_adds,
            self.memory_reads,
            self.outputs,
            self.mults_per_output(),
            self.adds_per_output(),
            self.reads_per_output()
        )
    }
}

/// Counting hooks compiled into the kernels. `()` counts nothing and
/// optimizes away.
trait Tally: Default + Send {
    fn cmul(&mut self) {}
    fn cadd(&mut self, _n: u64) {}
    fn read(&mut self, _n: u64) {}
    fn output(&mut self) {}
    fn into_counters(self) -> OpCounters {
        OpCounters::default()
    }
}

impl Tally for () {}

impl Tally for OpCounters {
    fn cmul(&mut self) {
        self.real_mults += 4;
        self.real_adds += 2;
    }
    fn cadd(&mut self, n: u64) {
        self.real_adds += 2 * n;
    }
    fn read(&mut self, n: u64) {
        self.memory_reads += n;
    }
    fn output(&mut self) {
        self.outputs += 1;
    }
    fn into_counters(self) -> OpCounters {
        self
    }
}

fn check_length(frame: &SampleFrame, size: usize) -> Result<()> {
    if frame.len() <= size {
        return Err(CdcError::shape(format!(
            "frame of {} samples is not longer than the {size}-tap filter",
            frame.len()
        )));
    }
    Ok(())
}

fn zero_pad(x: &[Complex64], half: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); x.len() + 2 * half];
    out[half..half + x.len()].copy_from_slice(x);
    out
}

/// Runs `kernel(n, padded, tally)` for every output index of one
/// polarization, in blocks.
fn run_blocks<T, K>(
    x: &[Complex64],
    half: usize,
    exec: Exec,
    kernel: K,
) -> (Vec<Complex64>, OpCounters)
where
    T: Tally,
    K: Fn(usize, &[Complex64], &mut T) -> Complex64 + Sync + Send,
{
    let padded = zero_pad(x, half);
    let mut out = vec![Complex64::default(); x.len()];
    let n_blocks = x.len().div_ceil(BLOCK);
    let mut tallies: Vec<T> = (0..n_blocks).map(|_| T::default()).collect();
    {
        // Pair each output block with its own tally so blocks stay independent.
        let mut work: Vec<(&mut [Complex64], &mut T)> =
            out.chunks_mut(BLOCK).zip(tallies.iter_mut()).collect();
        exec.for_each_chunk_mut(&mut work, 1, |bi, item| {
            let (block, tally) = &mut item[0];
            let base = bi * BLOCK;
            for (i, y) in block.iter_mut().enumerate() {
                *y = kernel(base + i, &padded, tally);
                tally.output();
            }
        });
    }
    let mut counters = OpCounters::default();
    for t in tallies {
        counters.merge(&t.into_counters());
    }
    (out, counters)
}

fn tde_kernel<T: Tally>(
    taps: &[Complex64],
    n: usize,
    xp: &[Complex64],
    tally: &mut T,
) -> Complex64 {
    // Position p = k + h reads x[n − k] = xp[n + 2h − p].
    let top = n + taps.len() - 1;
    let mut acc = Complex64::default();
    for (p, &g) in taps.iter().enumerate() {
        acc += g * xp[top - p];
        tally.cmul();
        tally.cadd(1);
    }
    tally.read(2 * taps.len() as u64);
    acc
}

fn run_tde<T: Tally>(
    frame: &SampleFrame,
    taps: &TapSet,
    exec: Exec,
) -> Result<(EqualizerOutput, OpCounters)> {
    check_length(frame, taps.size())?;
    let half = taps.half_width();
    let kernel = |n: usize, xp: &[Complex64], t: &mut T| tde_kernel(&taps.taps, n, xp, t);
    let ((x, cx), (y, cy)) = exec.join(
        || run_blocks::<T, _>(&frame.x, half, exec, kernel),
        || run_blocks::<T, _>(&frame.y, half, exec, kernel),
    );
    let mut counters = cx;
    counters.merge(&cy);
    Ok((
        EqualizerOutput {
            frame: frame.with_samples(x, y),
            group_delay: half,
            mode: Mode::Float,
        },
        counters,
    ))
}

/// Direct FIR equalization.
pub fn tde_fir(frame: &SampleFrame, taps: &TapSet) -> Result<EqualizerOutput> {
    tde_fir_with(frame, taps, Exec::default())
}

pub fn tde_fir_with(frame: &SampleFrame, taps: &TapSet, exec: Exec) -> Result<EqualizerOutput> {
    run_tde::<()>(frame, taps, exec).map(|(o, _)| o)
}

/// Direct FIR with operation counting.
pub fn tde_fir_counted(
    frame: &SampleFrame,
    taps: &TapSet,
    exec: Exec,
) -> Result<(EqualizerOutput, OpCounters)> {
    run_tde::<OpCounters>(frame, taps, exec)
}

/// Cluster membership flattened for the hot loop: tap positions of cluster
/// `c` are `positions[offsets[c]..offsets[c + 1]]`, ascending.
struct ClusterLayout {
    positions: Vec<usize>,
    offsets: Vec<usize>,
}

impl ClusterLayout {
    fn new(filter: &ClusteredFilter) -> Self {
        let mut positions = Vec::with_capacity(filter.size());
        let mut offsets = vec![0];
        for m in filter.members() {
            positions.extend(m);
            offsets.push(positions.len());
        }
        Self { positions, offsets }
    }
}

fn tdce_kernel<T: Tally>(
    reps: &[Complex64],
    layout: &ClusterLayout,
    size: usize,
    n: usize,
    xp: &[Complex64],
    tally: &mut T,
) -> Complex64 {
    let top = n + size - 1;
    let mut acc = Complex64::default();
    for (c, &rep) in reps.iter().enumerate() {
        let members = &layout.positions[layout.offsets[c]..layout.offsets[c + 1]];
        let mut sum = xp[top - members[0]];
        for &p in &members[1..] {
            sum += xp[top - p];
        }
        acc += rep * sum;
        tally.cadd(members.len() as u64);
        tally.cmul();
        tally.read(members.len() as u64 + 1);
    }
    acc
}

fn run_tdce<T: Tally>(
    frame: &SampleFrame,
    filter: &ClusteredFilter,
    exec: Exec,
) -> Result<(EqualizerOutput, OpCounters)> {
    check_length(frame, filter.size())?;
    let half = filter.half_width();
    let layout = ClusterLayout::new(filter);
    let size = filter.size();
    let reps = &filter.representatives;
    let kernel = |n: usize, xp: &[Complex64], t: &mut T| tdce_kernel(reps, &layout, size, n, xp, t);
    let ((x, cx), (y, cy)) = exec.join(
        || run_blocks::<T, _>(&frame.x, half, exec, kernel),
        || run_blocks::<T, _>(&frame.y, half, exec, kernel),
    );
    let mut counters = cx;
    counters.merge(&cy);
    Ok((
        EqualizerOutput {
            frame: frame.with_samples(x, y),
            group_delay: half,
            mode: Mode::Float,
        },
        counters,
    ))
}

/// Clustered FIR equalization: per-cluster input sums (ascending tap
/// position), then one multiplication per cluster.
pub fn tdce_fir(frame: &SampleFrame, filter: &ClusteredFilter) -> Result<EqualizerOutput> {
    tdce_fir_with(frame, filter, Exec::default())
}

pub fn tdce_fir_with(
    frame: &SampleFrame,
    filter: &ClusteredFilter,
    exec: Exec,
) -> Result<EqualizerOutput> {
    run_tdce::<()>(frame, filter, exec).map(|(o, _)| o)
}

pub fn tdce_fir_counted(
    frame: &SampleFrame,
    filter: &ClusteredFilter,
    exec: Exec,
) -> Result<(EqualizerOutput, OpCounters)> {
    run_tdce::<OpCounters>(frame, filter, exec)
}

/// Real multiplications per recovered symbol of the direct FIR: `4·N`.
pub fn tde_complexity(size: usize) -> usize {
    4 * size
}

/// Real multiplications per recovered symbol of the clustered FIR: `4·N_C`.
pub fn tdce_complexity(n_clusters: usize) -> usize {
    4 * n_clusters
}
