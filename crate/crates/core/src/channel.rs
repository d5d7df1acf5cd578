//! Fiber channel models.
//!
//! Sign convention: spectra use the forward DFT `e^{−j2πft}`. Propagating
//! over a length `z` of fiber multiplies the spectrum by
//!
//! ```text
//! H(f) = exp(−j·π·D·λ²·z·f² / c)
//! ```
//!
//! which [`Direction::Forward`] applies and [`Direction::Inverse`] undoes.
//! The compensating taps of [`crate::design::generate_taps`] approximate the
//! inverse response, so a forward channel followed by the FIR restores the
//! signal.
//!
//! # Amplifier noise
//!
//! Every span ends in an amplifier whose gain `G` exactly cancels the span
//! loss. With noise figure `F` (linear) the spontaneous-emission factor is
//! `n_sp = (F·G − 1) / (2·(G − 1))`, and the ASE power per polarization over
//! a bandwidth `B` is
//!
//! ```text
//! P_ase = n_sp·h·ν·(G − 1)·B = (F·G − 1)·h·ν·B / 2
//! ```
//!
//! The simulation bandwidth is the sample rate, so each sample of each
//! polarization receives circular Gaussian noise of variance `P_ase`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::design::DispersionParams;
use crate::par::Exec;
use crate::signal::SampleFrame;
use crate::{CdcError, Result, PLANCK, SPEED_OF_LIGHT};

/// Standard single-mode fiber link description.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FiberParams {
    /// ps/(nm·km)
    pub dispersion_ps_nm_km: f64,
    /// 1/(W·km)
    pub gamma_per_w_km: f64,
    /// dB/km
    pub attenuation_db_km: f64,
    pub span_length_km: f64,
    pub n_spans: usize,
    /// dB
    pub noise_figure_db: f64,
    pub wavelength_m: f64,
}

impl Default for FiberParams {
    fn default() -> Self {
        Self {
            dispersion_ps_nm_km: 16.8,
            gamma_per_w_km: 1.2,
            attenuation_db_km: 0.21,
            span_length_km: 80.0,
            n_spans: 1,
            noise_figure_db: 4.5,
            wavelength_m: 1550e-9,
        }
    }
}

impl FiberParams {
    pub fn with_spans(self, n_spans: usize) -> Self {
        Self { n_spans, ..self }
    }

    pub fn total_length_m(&self) -> f64 {
        self.span_length_km * 1e3 * self.n_spans as f64
    }

    pub fn center_frequency_hz(&self) -> f64 {
        SPEED_OF_LIGHT / self.wavelength_m
    }

    pub fn photon_energy_j(&self) -> f64 {
        PLANCK * self.center_frequency_hz()
    }

    /// Power attenuation coefficient in 1/m.
    pub fn alpha_per_m(&self) -> f64 {
        self.attenuation_db_km * std::f64::consts::LN_10 / 10.0 / 1e3
    }

    /// Linear amplifier gain that restores one span's loss.
    pub fn span_gain(&self) -> f64 {
        10f64.powf(self.attenuation_db_km * self.span_length_km / 10.0)
    }

    pub fn noise_figure_linear(&self) -> f64 {
        10f64.powf(self.noise_figure_db / 10.0)
    }

    /// Tap-design parameters for the whole link at sampling period `t`.
    pub fn dispersion_params(&self, sample_period_s: f64) -> DispersionParams {
        DispersionParams::new(
            self.dispersion_ps_nm_km,
            self.wavelength_m,
            self.total_length_m(),
            sample_period_s,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("span length", self.span_length_km),
            ("wavelength", self.wavelength_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CdcError::param(format!("{name} must be positive, got {v}")));
            }
        }
        let finite = [
            ("dispersion", self.dispersion_ps_nm_km),
            ("gamma", self.gamma_per_w_km),
            ("attenuation", self.attenuation_db_km),
            ("noise figure", self.noise_figure_db),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(CdcError::param(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub step_km: f64,
    pub launch_power_dbm: f64,
    pub seed: u64,
    /// Whether amplifiers add ASE noise.
    pub ase: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            step_km: 0.1,
            launch_power_dbm: 0.0,
            seed: 1,
            ase: true,
        }
    }
}

impl PropagationConfig {
    pub fn launch_power_w(&self) -> f64 {
        1e-3 * 10f64.powf(self.launch_power_dbm / 10.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Accumulates dispersion like the fiber (sign +1).
    Forward,
    /// Removes it (sign −1).
    Inverse,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Inverse => -1.0,
        }
    }

    pub fn from_sign(sign: i32) -> Result<Self> {
        match sign {
            1 => Ok(Direction::Forward),
            -1 => Ok(Direction::Inverse),
            _ => Err(CdcError::param(format!(
                "dispersion sign must be ±1, got {sign}"
            ))),
        }
    }
}

/// DFT bin frequencies in Hz for `n` samples at period `t`.
fn bin_frequencies(n: usize, t: f64) -> impl Iterator<Item = f64> {
    let df = 1.0 / (n as f64 * t);
    (0..n).map(move |i| {
        let k = if i < n.div_ceil(2) {
            i as f64
        } else {
            i as f64 - n as f64
        };
        k * df
    })
}

/// Per-bin multipliers `exp(−j·sign·π·D·λ²·z·f²/c)` with optional field
/// attenuation `exp(−α·z/2)` folded in.
fn linear_response(
    n: usize,
    t: f64,
    dispersion_si: f64,
    wavelength_m: f64,
    z_m: f64,
    sign: f64,
    field_loss: f64,
) -> Vec<Complex64> {
    let k = -sign * PI * dispersion_si * wavelength_m * wavelength_m * z_m / SPEED_OF_LIGHT;
    bin_frequencies(n, t)
        .map(|f| Complex64::from_polar(field_loss, k * f * f))
        .collect()
}

struct Transforms {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Transforms {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    /// x ← IFFT(H · FFT(x)), with the 1/N folded into `h` by the caller.
    fn filter(&self, x: &mut [Complex64], h: &[Complex64]) {
        self.forward.process(x);
        x.iter_mut().zip(h).for_each(|(v, g)| *v *= g);
        self.inverse.process(x);
    }
}

/// Applies the all-pass dispersion of length `params.length_m` over the frame
/// (circular: callers provide guard symbols).
pub fn apply_cd_length(
    frame: &SampleFrame,
    params: &DispersionParams,
    direction: Direction,
) -> SampleFrame {
    let n = frame.len();
    if n == 0 {
        return frame.clone();
    }
    let tf = Transforms::new(n);
    let mut h = linear_response(
        n,
        frame.sampling_period(),
        params.dispersion_si(),
        params.wavelength_m,
        params.length_m,
        direction.sign(),
        1.0,
    );
    let scale = 1.0 / n as f64;
    h.iter_mut().for_each(|v| *v *= scale);
    let mut x = frame.x.clone();
    let mut y = frame.y.clone();
    tf.filter(&mut x, &h);
    tf.filter(&mut y, &h);
    frame.with_samples(x, y)
}

/// Dispersion-only channel over the fiber's total length.
pub fn apply_cd_analytic(
    frame: &SampleFrame,
    fiber: &FiberParams,
    direction: Direction,
) -> SampleFrame {
    apply_cd_length(
        frame,
        &fiber.dispersion_params(frame.sampling_period()),
        direction,
    )
}

/// ASE power per polarization, in watts, over `bandwidth_hz`.
pub fn ase_noise_power(fiber: &FiberParams, bandwidth_hz: f64) -> Result<f64> {
    if !(bandwidth_hz > 0.0 && bandwidth_hz.is_finite()) {
        return Err(CdcError::param(format!(
            "bandwidth {bandwidth_hz} must be positive"
        )));
    }
    let g = fiber.span_gain();
    let f = fiber.noise_figure_linear();
    Ok((f * g - 1.0) * fiber.photon_energy_j() * bandwidth_hz / 2.0)
}

/// Nonlinear phase rotation of both polarizations over `dz` metres.
fn nonlinear_step(x: &mut [Complex64], y: &mut [Complex64], coeff: f64, exec: Exec) {
    const CHUNK: usize = 1 << 14;
    let mut pairs: Vec<(&mut [Complex64], &mut [Complex64])> =
        x.chunks_mut(CHUNK).zip(y.chunks_mut(CHUNK)).collect();
    exec.for_each_chunk_mut(&mut pairs, 1, |_, item| {
        let (xs, ys) = &mut item[0];
        for (a, b) in xs.iter_mut().zip(ys.iter_mut()) {
            let phi = coeff * (a.norm_sqr() + b.norm_sqr());
            let rot = Complex64::new(phi.cos(), phi.sin());
            *a *= rot;
            *b *= rot;
        }
    });
}

fn add_ase(x: &mut [Complex64], y: &mut [Complex64], power_w: f64, rng: &mut ChaCha20Rng) {
    let sigma = (power_w / 2.0).sqrt();
    for v in x.iter_mut().chain(y.iter_mut()) {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v += Complex64::new(sigma * re, sigma * im);
    }
}

/// Symmetric split-step solution of the Manakov equations over every span,
/// each followed by loss-compensating amplification and ASE.
///
/// The input is scaled so its mean total power equals the launch power; the
/// output is scaled back by the same factor, so it is in the caller's units.
/// An all-zero input is taken to be in √W already.
pub fn propagate_manakov(
    tx: &SampleFrame,
    fiber: &FiberParams,
    cfg: &PropagationConfig,
) -> Result<SampleFrame> {
    propagate_manakov_with(tx, fiber, cfg, Exec::default())
}

pub fn propagate_manakov_with(
    tx: &SampleFrame,
    fiber: &FiberParams,
    cfg: &PropagationConfig,
    exec: Exec,
) -> Result<SampleFrame> {
    if tx.is_empty() {
        return Err(CdcError::shape("cannot propagate an empty frame"));
    }
    if !tx.is_finite() {
        return Err(CdcError::Numeric(
            "input frame has non-finite samples".into(),
        ));
    }
    if tx.samples_per_symbol < 2 {
        return Err(CdcError::param(
            "propagation needs at least 2 samples per symbol",
        ));
    }
    fiber.validate()?;
    if !(cfg.step_km > 0.0 && cfg.step_km <= fiber.span_length_km) {
        return Err(CdcError::param(format!(
            "step {} km must lie in (0, {}]",
            cfg.step_km, fiber.span_length_km
        )));
    }
    if fiber.n_spans == 0 {
        return Ok(tx.clone());
    }

    let n = tx.len();
    let t = tx.sampling_period();
    let p_in = tx.mean_power();
    let scale = if p_in > 0.0 {
        (cfg.launch_power_w() / p_in).sqrt()
    } else {
        1.0
    };
    let mut x: Vec<Complex64> = tx.x.iter().map(|v| v * scale).collect();
    let mut y: Vec<Complex64> = tx.y.iter().map(|v| v * scale).collect();

    let span_m = fiber.span_length_km * 1e3;
    let steps = (fiber.span_length_km / cfg.step_km - 1e-9).ceil().max(1.0) as usize;
    let dz = span_m / steps as f64;
    let alpha = fiber.alpha_per_m();
    let d_si = fiber.dispersion_ps_nm_km * 1e-6;
    let inv_n = 1.0 / n as f64;
    let response = |z: f64| -> Vec<Complex64> {
        let mut h = linear_response(
            n,
            t,
            d_si,
            fiber.wavelength_m,
            z,
            1.0,
            (-alpha * z / 2.0).exp(),
        );
        h.iter_mut().for_each(|v| *v *= inv_n);
        h
    };
    let half = response(dz / 2.0);
    let full = response(dz);
    let nl_coeff = 8.0 / 9.0 * fiber.gamma_per_w_km * 1e-3 * dz;
    let gain = fiber.span_gain().sqrt();
    let ase_power = ase_noise_power(fiber, 1.0 / t)?;
    let tf = Transforms::new(n);

    for span in 0..fiber.n_spans {
        // Consecutive half steps are merged into one full linear step.
        let (fx, fy) = (&tf.forward, &tf.forward);
        exec.join(|| fx.process(&mut x), || fy.process(&mut y));
        for s in 0..steps {
            let h = if s == 0 { &half } else { &full };
            x.iter_mut().zip(h).for_each(|(v, g)| *v *= g);
            y.iter_mut().zip(h).for_each(|(v, g)| *v *= g);
            exec.join(|| tf.inverse.process(&mut x), || tf.inverse.process(&mut y));
            nonlinear_step(&mut x, &mut y, nl_coeff, exec);
            exec.join(|| tf.forward.process(&mut x), || tf.forward.process(&mut y));
        }
        // Closing half step; `half` carries 1/N, undo the extra forward scale.
        x.iter_mut().zip(&half).for_each(|(v, g)| *v *= g);
        y.iter_mut().zip(&half).for_each(|(v, g)| *v *= g);
        exec.join(|| tf.inverse.process(&mut x), || tf.inverse.process(&mut y));

        x.iter_mut().chain(y.iter_mut()).for_each(|v| *v *= gain);
        if cfg.ase {
            let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
            rng.set_stream(span as u64);
            add_ase(&mut x, &mut y, ase_power, &mut rng);
        }
    }

    let out = tx.with_samples(
        x.into_iter().map(|v| v / scale).collect(),
        y.into_iter().map(|v| v / scale).collect(),
    );
    if !out.is_finite() {
        return Err(CdcError::Numeric(
            "propagation produced non-finite samples".into(),
        ));
    }
    Ok(out)
}
