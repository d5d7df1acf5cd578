//! Transmitter and receiver chains used to score equalizers by BER.
//!
//! Receiver order: equalizer (2 samples/symbol, output aligned with input),
//! RRC matched filter, decimation at phase 0, then one least-squares complex
//! gain per polarization fitted against the transmitted symbols. The gain
//! absorbs the static amplitude error of truncated filters and the mean
//! nonlinear phase rotation; there is no other carrier or timing recovery.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::design::{ClusteredFilter, TapSet};
use crate::equalizers::{self, EqualizerOutput, Mode, OpCounters};
use crate::fde::{FdeConfig, FdeEqualizer};
use crate::fixed_point::{quantize_pipeline, FixedPointFormat};
use crate::par::Exec;
use crate::signal::{
    demap_qam16_hard, downsample_to_symbols, map_bits_to_qam16, matched_filter, measure_ber,
    shape_with, BerReport, BitStream, RootRaisedCosine, SampleFrame, SymbolFrame,
    BITS_PER_DUAL_SYMBOL,
};
use crate::{CdcError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tde,
    Tdce,
    Fde,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Tde => "tde",
            Method::Tdce => "tdce",
            Method::Fde => "fde",
        })
    }
}

impl FromStr for Method {
    type Err = CdcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tde" => Ok(Method::Tde),
            "tdce" => Ok(Method::Tdce),
            "fde" => Ok(Method::Fde),
            _ => Err(CdcError::param(format!("unknown method '{s}'"))),
        }
    }
}

/// A configured equalizer of any kind.
#[derive(Clone, Debug)]
pub enum Equalizer {
    Tde(TapSet),
    Tdce(ClusteredFilter),
    Fde { taps: TapSet, config: FdeConfig },
}

impl Equalizer {
    pub fn method(&self) -> Method {
        match self {
            Equalizer::Tde(_) => Method::Tde,
            Equalizer::Tdce(_) => Method::Tdce,
            Equalizer::Fde { .. } => Method::Fde,
        }
    }

    /// Tap count, or cluster count for the clustered filter.
    pub fn size_or_clusters(&self) -> usize {
        match self {
            Equalizer::Tde(t) => t.size(),
            Equalizer::Tdce(f) => f.n_clusters(),
            Equalizer::Fde { taps, .. } => taps.size(),
        }
    }

    pub fn fft_size(&self) -> Option<usize> {
        match self {
            Equalizer::Fde { config, .. } => Some(config.fft_size),
            _ => None,
        }
    }

    /// Real multiplications per recovered symbol.
    pub fn complexity(&self) -> f64 {
        match self {
            Equalizer::Tde(t) => equalizers::tde_complexity(t.size()) as f64,
            Equalizer::Tdce(f) => equalizers::tdce_complexity(f.n_clusters()) as f64,
            Equalizer::Fde { config, .. } => crate::fde::fde_complexity(config).unwrap_or(f64::NAN),
        }
    }

    pub fn apply(&self, frame: &SampleFrame, exec: Exec) -> Result<EqualizerOutput> {
        match self {
            Equalizer::Tde(t) => equalizers::tde_fir_with(frame, t, exec),
            Equalizer::Tdce(f) => equalizers::tdce_fir_with(frame, f, exec),
            Equalizer::Fde { taps, config } => {
                FdeEqualizer::new(taps, *config)?.process(frame, exec)
            }
        }
    }

    pub fn apply_counted(
        &self,
        frame: &SampleFrame,
        exec: Exec,
    ) -> Result<(EqualizerOutput, OpCounters)> {
        match self {
            Equalizer::Tde(t) => equalizers::tde_fir_counted(frame, t, exec),
            Equalizer::Tdce(f) => equalizers::tdce_fir_counted(frame, f, exec),
            Equalizer::Fde { taps, config } => {
                FdeEqualizer::new(taps, *config)?.process_counted(frame, exec)
            }
        }
    }

    /// Copy with every coefficient quantized to `fmt`.
    pub fn quantized(&self, fmt: &FixedPointFormat) -> Equalizer {
        match self {
            Equalizer::Tde(t) => Equalizer::Tde(fmt.quantize_taps(t)),
            Equalizer::Tdce(f) => Equalizer::Tdce(fmt.quantize_filter(f)),
            Equalizer::Fde { taps, config } => Equalizer::Fde {
                taps: fmt.quantize_taps(taps),
                config: *config,
            },
        }
    }
}

/// The transmit side of one experiment.
#[derive(Clone, Debug)]
pub struct Transmission {
    pub bits: BitStream,
    pub symbols: SymbolFrame,
    /// Shaped samples cropped so that sample `k·sps` peaks on symbol `k`.
    pub frame: SampleFrame,
    pub rrc: RootRaisedCosine,
}

/// Random bits → Gray 16-QAM → RRC shaping at `rrc.sps`.
pub fn transmit(
    n_symbols: usize,
    seed: u64,
    rrc: &RootRaisedCosine,
    baud_rate: f64,
) -> Result<Transmission> {
    let bits = BitStream::random(n_symbols * BITS_PER_DUAL_SYMBOL, seed);
    let symbols = map_bits_to_qam16(&bits)?;
    let frame = shape_with(&symbols, rrc, baud_rate)?.aligned(n_symbols);
    Ok(Transmission {
        bits,
        symbols,
        frame,
        rrc: rrc.clone(),
    })
}

impl Transmission {
    pub fn capture(&self, received: SampleFrame, skip_symbols: usize) -> Capture {
        Capture {
            received,
            tx_bits: self.bits.clone(),
            tx_symbols: self.symbols.clone(),
            rrc: self.rrc.clone(),
            skip_symbols,
        }
    }
}

/// Received samples together with what was sent.
#[derive(Clone, Debug)]
pub struct Capture {
    pub received: SampleFrame,
    pub tx_bits: BitStream,
    pub tx_symbols: SymbolFrame,
    pub rrc: RootRaisedCosine,
    /// Symbols dropped at each end before scoring.
    pub skip_symbols: usize,
}

/// Default edge trim: twice the longest equalizer considered plus the
/// shaping span, in symbols.
pub fn default_skip_symbols(max_filter_size: usize, rrc: &RootRaisedCosine) -> usize {
    2 * max_filter_size + rrc.span_symbols
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub ber: BerReport,
    /// Data-aided SNR after gain alignment, dB.
    pub snr_db: f64,
}

fn ls_gain(rx: &[Complex64], tx: &[Complex64]) -> Complex64 {
    let num: Complex64 = rx.iter().zip(tx).map(|(r, s)| r.conj() * s).sum();
    let den: f64 = rx.iter().map(|r| r.norm_sqr()).sum();
    if den > 0.0 {
        num / den
    } else {
        Complex64::new(1.0, 0.0)
    }
}

impl Capture {
    pub fn n_symbols(&self) -> usize {
        self.tx_symbols.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.n_symbols();
        if self.received.len() != n * self.rrc.sps {
            return Err(CdcError::shape(format!(
                "received {} samples, expected {} symbols at {} sps",
                self.received.len(),
                n,
                self.rrc.sps
            )));
        }
        if 2 * self.skip_symbols >= n {
            return Err(CdcError::Degenerate(format!(
                "trimming {} symbols at each end leaves nothing of {n}",
                self.skip_symbols
            )));
        }
        Ok(())
    }

    /// Scores an already equalized frame.
    pub fn score(&self, equalized: &SampleFrame) -> Result<LinkReport> {
        self.check()?;
        let n = self.n_symbols();
        let mf = matched_filter(equalized, &self.rrc);
        let mut rx = downsample_to_symbols(&mf, 0)?;
        rx.x.truncate(n);
        rx.y.truncate(n);

        let lo = self.skip_symbols;
        let hi = n - self.skip_symbols;
        let mut signal = 0.0;
        let mut noise = 0.0;
        for (r, s) in [
            (&mut rx.x, &self.tx_symbols.x),
            (&mut rx.y, &self.tx_symbols.y),
        ] {
            let g = ls_gain(&r[lo..hi], &s[lo..hi]);
            r.iter_mut().for_each(|v| *v *= g);
            for (a, b) in r[lo..hi].iter().zip(&s[lo..hi]) {
                signal += b.norm_sqr();
                noise += (a - b).norm_sqr();
            }
        }
        rx.unit_energy = true;
        let bits = demap_qam16_hard(&rx);
        let skip_bits = self.skip_symbols * BITS_PER_DUAL_SYMBOL;
        let ber = measure_ber(&self.tx_bits, &bits, skip_bits, skip_bits)?;
        Ok(LinkReport {
            ber,
            snr_db: 10.0 * (signal / noise).log10(),
        })
    }

    pub fn evaluate(&self, eq: &Equalizer, exec: Exec) -> Result<LinkReport> {
        self.check()?;
        let out = eq.apply(&self.received, exec)?;
        self.score(&out.frame)
    }

    pub fn evaluate_counted(&self, eq: &Equalizer, exec: Exec) -> Result<(LinkReport, OpCounters)> {
        self.check()?;
        let (out, counters) = eq.apply_counted(&self.received, exec)?;
        Ok((self.score(&out.frame)?, counters))
    }

    /// Fixed-point evaluation under the boundary quantization model.
    pub fn evaluate_fixed(
        &self,
        eq: &Equalizer,
        fmt: &FixedPointFormat,
        input_rms: f64,
        exec: Exec,
    ) -> Result<LinkReport> {
        self.check()?;
        let pipeline = quantize_pipeline(&self.received, eq, fmt, input_rms);
        let out = pipeline.run(exec)?;
        debug_assert_eq!(out.mode, Mode::Fixed);
        self.score(&out.frame)
    }

    pub fn evaluate_mode(
        &self,
        eq: &Equalizer,
        mode: Mode,
        fmt: &FixedPointFormat,
        input_rms: f64,
        exec: Exec,
    ) -> Result<LinkReport> {
        match mode {
            Mode::Float => self.evaluate(eq, exec),
            Mode::Fixed => self.evaluate_fixed(eq, fmt, input_rms, exec),
        }
    }
}
