//! Q-format quantization.
//!
//! `q<t>.<i>` has `t` total bits of which `i` are integer bits, the sign bit
//! included, leaving `t − i` fractional bits. Values round to the nearest
//! grid point (ties away from zero) and saturate at the format's range
//! `[−2^(i−1), 2^(i−1) − 2^−(t−i)]`.
//!
//! The equalizer pipelines quantize at their boundaries only: input samples
//! and coefficients before filtering, outputs after. Internal arithmetic runs
//! in double precision.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::design::{ClusteredFilter, TapSet};
use crate::equalizers::{EqualizerOutput, Mode};
use crate::link::Equalizer;
use crate::par::Exec;
use crate::signal::SampleFrame;
use crate::{CdcError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FixedPointFormat {
    total_bits: u32,
    integer_bits: u32,
}

impl FixedPointFormat {
    /// Clustered equalizer format, 14 bits with 5 integer bits.
    pub const TDCE: FixedPointFormat = FixedPointFormat {
        total_bits: 14,
        integer_bits: 5,
    };
    /// Frequency-domain equalizer format, 16 bits with 1 integer bit.
    pub const FDE: FixedPointFormat = FixedPointFormat {
        total_bits: 16,
        integer_bits: 1,
    };

    pub fn new(total_bits: u32, integer_bits: u32) -> Result<Self> {
        if !(1 <= integer_bits && integer_bits <= total_bits && total_bits <= 64) {
            return Err(CdcError::param(format!(
                "q{total_bits}.{integer_bits} needs 1 <= integer <= total <= 64"
            )));
        }
        Ok(Self {
            total_bits,
            integer_bits,
        })
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn integer_bits(&self) -> u32 {
        self.integer_bits
    }

    pub fn fractional_bits(&self) -> u32 {
        self.total_bits - self.integer_bits
    }

    /// Grid spacing 2^−fractional_bits.
    pub fn step(&self) -> f64 {
        (-(self.fractional_bits() as f64)).exp2()
    }

    pub fn min_value(&self) -> f64 {
        -((self.integer_bits as f64 - 1.0).exp2())
    }

    pub fn max_value(&self) -> f64 {
        (self.integer_bits as f64 - 1.0).exp2() - self.step()
    }

    pub fn quantize(&self, value: f64) -> f64 {
        let step = self.step();
        // `round` breaks ties away from zero.
        let q = (value / step).round() * step;
        q.clamp(self.min_value(), self.max_value())
    }

    pub fn quantize_complex(&self, v: Complex64) -> Complex64 {
        Complex64::new(self.quantize(v.re), self.quantize(v.im))
    }

    pub fn quantize_slice(&self, v: &[Complex64]) -> Vec<Complex64> {
        v.iter().map(|&s| self.quantize_complex(s)).collect()
    }

    pub fn quantize_frame(&self, frame: &SampleFrame) -> SampleFrame {
        frame.with_samples(self.quantize_slice(&frame.x), self.quantize_slice(&frame.y))
    }

    pub fn quantize_taps(&self, taps: &TapSet) -> TapSet {
        TapSet {
            taps: self.quantize_slice(&taps.taps),
            params: taps.params,
        }
    }

    pub fn quantize_filter(&self, filter: &ClusteredFilter) -> ClusteredFilter {
        ClusteredFilter {
            representatives: self.quantize_slice(&filter.representatives),
            ..filter.clone()
        }
    }
}

/// Free-function form of [`FixedPointFormat::quantize`].
pub fn quantize(value: f64, fmt: &FixedPointFormat) -> f64 {
    fmt.quantize(value)
}

impl fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}.{}", self.total_bits, self.integer_bits)
    }
}

impl FromStr for FixedPointFormat {
    type Err = CdcError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            CdcError::format(
                "fixed-point format",
                format!("'{s}' is not q<total>.<integer>"),
            )
        };
        let body = s.trim().strip_prefix('q').ok_or_else(bad)?;
        let (t, i) = body.split_once('.').ok_or_else(bad)?;
        FixedPointFormat::new(t.parse().map_err(|_| bad())?, i.parse().map_err(|_| bad())?)
    }
}

impl TryFrom<String> for FixedPointFormat {
    type Error = CdcError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FixedPointFormat> for String {
    fn from(f: FixedPointFormat) -> String {
        f.to_string()
    }
}

/// Scales a frame so its RMS per complex sample (both polarizations pooled)
/// equals `target_rms`. Returns the scaled frame and the factor applied.
pub fn normalize_rms(frame: &SampleFrame, target_rms: f64) -> (SampleFrame, f64) {
    let p = frame.mean_power() / 2.0;
    if p <= 0.0 {
        return (frame.clone(), 1.0);
    }
    let k = target_rms / p.sqrt();
    let scale = |v: &[Complex64]| v.iter().map(|s| s * k).collect();
    (frame.with_samples(scale(&frame.x), scale(&frame.y)), k)
}

/// Quantized inputs of one equalizer run.
#[derive(Clone, Debug)]
pub struct QuantizedPipeline {
    pub frame: SampleFrame,
    pub equalizer: Equalizer,
    pub format: FixedPointFormat,
    /// Factor applied to the input before quantization.
    pub input_scale: f64,
}

/// Scales the frame to `input_rms`, then quantizes samples and every
/// equalizer coefficient to `fmt`.
pub fn quantize_pipeline(
    frame: &SampleFrame,
    equalizer: &Equalizer,
    fmt: &FixedPointFormat,
    input_rms: f64,
) -> QuantizedPipeline {
    let (scaled, input_scale) = normalize_rms(frame, input_rms);
    QuantizedPipeline {
        frame: fmt.quantize_frame(&scaled),
        equalizer: equalizer.quantized(fmt),
        format: *fmt,
        input_scale,
    }
}

impl QuantizedPipeline {
    /// Filters at full precision and re-quantizes the outputs.
    pub fn run(&self, exec: Exec) -> Result<EqualizerOutput> {
        let out = self.equalizer.apply(&self.frame, exec)?;
        Ok(EqualizerOutput {
            frame: self.format.quantize_frame(&out.frame),
            group_delay: out.group_delay,
            mode: Mode::Fixed,
        })
    }
}
