//! Overlap-save frequency-domain equalizer and its FFT-size cost model.
//!
//! The cost model charges `N·(8·β·log2 N + 4) / (N − M + 1)` real
//! multiplications per recovered sample for an `N`-point FFT/IFFT pair, a
//! spectrum multiply and `N − M + 1` valid outputs per block, where β is 1/2
//! for radix-2 and 3/8 for radix-4 butterflies. The radix only affects the
//! cost model: the numeric transform is whatever `rustfft` plans.
//!
//! Transform convention: the forward DFT is unnormalized,
//! `X[m] = Σ x[n]·e^{−j2πmn/N}`, and the inverse carries the `1/N`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::design::TapSet;
use crate::equalizers::{EqualizerOutput, Mode, OpCounters};
use crate::par::Exec;
use crate::signal::SampleFrame;
use crate::{CdcError, Result};

/// Largest FFT size the optimizer considers.
pub const MAX_FFT_SIZE: usize = 1 << 20;

fn require_pow2(len: usize) -> Result<()> {
    if len == 0 || !len.is_power_of_two() {
        return Err(CdcError::param(format!(
            "DFT length {len} is not a power of two"
        )));
    }
    Ok(())
}

/// Forward DFT of a power-of-two block.
pub fn dft(block: &[Complex64]) -> Result<Vec<Complex64>> {
    require_pow2(block.len())?;
    let mut buf = block.to_vec();
    FftPlanner::new()
        .plan_fft_forward(buf.len())
        .process(&mut buf);
    Ok(buf)
}

/// Inverse DFT of a power-of-two spectrum, including the `1/N` factor.
pub fn idft(spectrum: &[Complex64]) -> Result<Vec<Complex64>> {
    require_pow2(spectrum.len())?;
    let mut buf = spectrum.to_vec();
    FftPlanner::new()
        .plan_fft_inverse(buf.len())
        .process(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    Ok(buf)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Radix {
    Radix2,
    Radix4,
}

impl Radix {
    /// β of the cost model.
    pub fn beta(self) -> f64 {
        match self {
            Radix::Radix2 => 0.5,
            Radix::Radix4 => 0.375,
        }
    }

    pub fn admits(self, n: usize) -> bool {
        match self {
            Radix::Radix2 => n.is_power_of_two(),
            Radix::Radix4 => n.is_power_of_two() && n.trailing_zeros() % 2 == 0,
        }
    }

    /// log2 of the butterfly size.
    fn step_log2(self) -> u32 {
        match self {
            Radix::Radix2 => 1,
            Radix::Radix4 => 2,
        }
    }
}

impl std::str::FromStr for Radix {
    type Err = CdcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radix2" | "2" => Ok(Radix::Radix2),
            "radix4" | "4" => Ok(Radix::Radix4),
            _ => Err(CdcError::param(format!("unknown radix '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdeConfig {
    pub fft_size: usize,
    pub filter_size: usize,
    pub radix: Radix,
}

impl FdeConfig {
    pub fn new(fft_size: usize, filter_size: usize, radix: Radix) -> Result<Self> {
        let cfg = Self {
            fft_size,
            filter_size,
            radix,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter_size == 0 {
            return Err(CdcError::Config("filter size must be positive".into()));
        }
        if !self.radix.admits(self.fft_size) || self.fft_size < 2 {
            return Err(CdcError::Config(format!(
                "FFT size {} is not admissible for {:?}",
                self.fft_size, self.radix
            )));
        }
        if self.fft_size < self.filter_size {
            return Err(CdcError::Config(format!(
                "FFT size {} leaves no valid outputs for a {}-tap filter",
                self.fft_size, self.filter_size
            )));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        self.radix.beta()
    }

    /// Valid (uncorrupted) outputs per block, `N − M + 1`.
    pub fn valid_per_block(&self) -> usize {
        self.fft_size - self.filter_size + 1
    }
}

/// Real multiplications per recovered sample for `cfg`.
pub fn fde_complexity(cfg: &FdeConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(complexity_unchecked(
        cfg.fft_size,
        cfg.filter_size,
        cfg.beta(),
    ))
}

fn complexity_unchecked(n: usize, m: usize, beta: f64) -> f64 {
    let nf = n as f64;
    nf * (8.0 * beta * nf.log2() + 4.0) / (n - m + 1) as f64
}

/// Admissible FFT sizes for a filter of `filter_size` taps, ascending up to
/// [`MAX_FFT_SIZE`].
pub fn admissible_fft_sizes(filter_size: usize, radix: Radix) -> Vec<usize> {
    let step = radix.step_log2();
    (1..)
        .map(|i| 1usize << (i * step))
        .take_while(|&n| n <= MAX_FFT_SIZE)
        .filter(|&n| n >= filter_size)
        .collect()
}

/// The admissible FFT size minimizing the cost model; ties go to the smaller
/// size.
pub fn optimize_fft_size(filter_size: usize, radix: Radix) -> Result<FdeConfig> {
    if filter_size == 0 {
        return Err(CdcError::param("filter size must be positive"));
    }
    let beta = radix.beta();
    let best = admissible_fft_sizes(filter_size, radix)
        .into_iter()
        .map(|n| (n, complexity_unchecked(n, filter_size, beta)))
        .reduce(|a, b| if b.1 < a.1 { b } else { a })
        .ok_or_else(|| {
            CdcError::param(format!(
                "a {filter_size}-tap filter needs an FFT larger than {MAX_FFT_SIZE}"
            ))
        })?;
    FdeConfig::new(best.0, filter_size, radix)
}

/// An overlap-save equalizer with its tap spectrum precomputed.
pub struct FdeEqualizer {
    cfg: FdeConfig,
    half: usize,
    spectrum: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FdeEqualizer {
    pub fn new(taps: &TapSet, cfg: FdeConfig) -> Result<Self> {
        cfg.validate()?;
        if taps.size() != cfg.filter_size {
            return Err(CdcError::Config(format!(
                "tap count {} differs from configured filter size {}",
                taps.size(),
                cfg.filter_size
            )));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(cfg.fft_size);
        let inverse = planner.plan_fft_inverse(cfg.fft_size);
        // Causal ordering h[m] = g_{m − h}, zero-padded to N. The IFFT scale
        // is folded into the spectrum.
        let mut spectrum = vec![Complex64::default(); cfg.fft_size];
        spectrum[..taps.size()].copy_from_slice(&taps.taps);
        forward.process(&mut spectrum);
        let scale = 1.0 / cfg.fft_size as f64;
        spectrum.iter_mut().for_each(|v| *v *= scale);
        Ok(Self {
            cfg,
            half: taps.half_width(),
            spectrum,
            forward,
            inverse,
        })
    }

    pub fn config(&self) -> &FdeConfig {
        &self.cfg
    }

    /// Spectrum of the zero-padded causal taps, scaled by `1/N`.
    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    fn filter_pol(&self, x: &[Complex64], exec: Exec) -> (Vec<Complex64>, OpCounters) {
        let n = self.cfg.fft_size;
        let m = self.cfg.filter_size;
        let valid = self.cfg.valid_per_block();
        // Causal outputs y_c[0 .. len + h) are needed; y[n] = y_c[n + h].
        let needed = x.len() + self.half;
        let n_blocks = needed.div_ceil(valid);
        // Extended input: M − 1 leading zeros, the frame, trailing zeros.
        let mut ext = vec![Complex64::default(); (n_blocks - 1) * valid + n];
        ext[m - 1..m - 1 + x.len()].copy_from_slice(x);

        let mut causal = vec![Complex64::default(); n_blocks * valid];
        exec.for_each_chunk_mut(&mut causal, valid, |b, out| {
            let start = b * valid;
            let mut buf = ext[start..start + n].to_vec();
            let mut scratch = vec![
                Complex64::default();
                self.forward
                    .get_inplace_scratch_len()
                    .max(self.inverse.get_inplace_scratch_len())
            ];
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            buf.iter_mut()
                .zip(&self.spectrum)
                .for_each(|(v, h)| *v *= h);
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            // The first M − 1 samples are corrupted by circular wrap-around.
            out.copy_from_slice(&buf[m - 1..]);
        });

        let beta = self.cfg.beta();
        let nf = n as f64;
        let fft_mults = (4.0 * beta * nf * nf.log2()).round() as u64;
        let counters = OpCounters {
            real_mults: n_blocks as u64 * (2 * fft_mults + 4 * n as u64),
            real_adds: n_blocks as u64 * (2 * (2.0 * nf * nf.log2()) as u64 + 2 * n as u64),
            memory_reads: n_blocks as u64 * 2 * n as u64,
            outputs: (n_blocks * valid) as u64,
        };
        (causal[self.half..self.half + x.len()].to_vec(), counters)
    }

    /// Equalizes both polarizations. Counters use the cost model for the
    /// transforms (the FFT library's internal arithmetic is not instrumented).
    pub fn process_counted(
        &self,
        frame: &SampleFrame,
        exec: Exec,
    ) -> Result<(EqualizerOutput, OpCounters)> {
        if frame.len() < self.cfg.fft_size {
            return Err(CdcError::shape(format!(
                "frame of {} samples is shorter than one {}-point block",
                frame.len(),
                self.cfg.fft_size
            )));
        }
        let ((x, cx), (y, cy)) = exec.join(
            || self.filter_pol(&frame.x, exec),
            || self.filter_pol(&frame.y, exec),
        );
        let mut counters = cx;
        counters.merge(&cy);
        Ok((
            EqualizerOutput {
                frame: frame.with_samples(x, y),
                group_delay: self.half,
                mode: Mode::Float,
            },
            counters,
        ))
    }

    pub fn process(&self, frame: &SampleFrame, exec: Exec) -> Result<EqualizerOutput> {
        self.process_counted(frame, exec).map(|(o, _)| o)
    }
}

/// One-shot overlap-save equalization.
pub fn fde_overlap_save(
    frame: &SampleFrame,
    taps: &TapSet,
    cfg: &FdeConfig,
) -> Result<EqualizerOutput> {
    FdeEqualizer::new(taps, *cfg)?.process(frame, Exec::default())
}
