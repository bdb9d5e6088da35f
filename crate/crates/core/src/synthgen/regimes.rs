//! The 18 dynamical regimes and the deterministic master-sequence
//! generator.
//!
//! Every master sequence is a pure function of `(global_seed, regime_id,
//! seq_index)`: that tuple is hashed into a per-sequence seed for a
//! ChaCha8 stream, and each regime kind consumes draws from that stream
//! in a fixed, documented order. Regenerating with the same tuple always
//! reproduces the sequence bit for bit.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hash::fnv1a64_words;
use crate::synthgen::arma::arma_sample_conditional_mean;

/// Cycle counts the periodic regimes are built from; frequencies are
/// `2*pi*(c / master_len)` so the cycle count is length-independent.
pub const C_LOW: f64 = 7.0;
pub const C_MED: f64 = 10.0;
pub const C_HIGH: f64 = 15.0;

/// Number of distinct regimes.
pub const NUM_REGIMES: usize = 18;

/// Identifies the generator stream version in dataset manifests. Bump when
/// any draw order, distribution or regime parameter changes.
pub const GENERATOR_VERSION: &str = "chacha8-fnv1a-v1";

/// Kind-specific generation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegimeKind {
    /// `amplitude * sin(2*pi*cycles*t/len + phase)`, random phase.
    Sine { cycles: f64, amplitude: f64 },
    /// `0.7*sin(f t + phase) + 0.3*sin(3 f t + phase2)`, independent phases.
    SineHarmonics { cycles: f64 },
    /// `slope * t/(len-1) + intercept`; slope = base + N(0,1) draw,
    /// intercept ~ N(0, pi^2).
    Trend { base_slope: f64 },
    Ar { phi: f64 },
    Ma { theta: f64 },
    Arma { phi: f64, theta: f64 },
    /// `sign(sin(2*pi*cycles*t/len + phase))` with sign(0) = +1.
    Square { cycles: f64 },
    /// `2*frac(cycles*t/len + phase/(2*pi)) - 1`.
    Sawtooth { cycles: f64 },
    /// `count` rectangular pulses of `amplitude`, onsets uniform in
    /// `[0, len-width]`, width = round(len/50); overlaps stack additively.
    Pulses { count: usize, amplitude: f64 },
    /// `sine_amplitude * sin(f t + phase)` plus a randomized trend.
    SineTrend { cycles: f64, sine_amplitude: f64, base_slope: f64 },
    /// Sinusoid plus per-step process noise N(0, noise_std^2).
    SineHighNoise { cycles: f64, noise_std: f64 },
}

/// One row of the regime table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeSpec {
    pub regime_id: u16,
    pub name: &'static str,
    pub kind: RegimeKind,
    /// Additive observation noise std. Zero for every regime here: the
    /// corpus keeps deterministic signals noise-free and lets stochastic
    /// processes carry only their intrinsic process noise. The hook stays
    /// so the noise-free property is testable rather than accidental.
    pub observation_noise_std: f64,
}

/// The full regime table, indexed by `regime_id`.
pub fn regime_table() -> &'static [RegimeSpec; NUM_REGIMES] {
    use RegimeKind::*;
    static TABLE: [RegimeSpec; NUM_REGIMES] = [
        RegimeSpec { regime_id: 0, name: "Sine_LowFreq", kind: Sine { cycles: C_LOW, amplitude: 1.0 }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 1, name: "Sine_MedFreq", kind: Sine { cycles: C_MED, amplitude: 1.0 }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 2, name: "Sine_HighFreq", kind: Sine { cycles: C_HIGH, amplitude: 1.0 }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 3, name: "Sine_LowAmp", kind: Sine { cycles: C_MED, amplitude: 0.3 }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 4, name: "Sine_Harmonics", kind: SineHarmonics { cycles: C_MED }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 5, name: "Trend_Up", kind: Trend { base_slope: 1.5 }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 6, name: "Trend_Down", kind: Trend { base_slope: -1.5 }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 7, name: "AR_PosStrong", kind: Ar { phi: 0.9 }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 8, name: "AR_PosWeak", kind: Ar { phi: 0.3 }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 9, name: "AR_Neg", kind: Ar { phi: -0.7 }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 10, name: "MA_Pos", kind: Ma { theta: 0.7 }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 11, name: "ARMA_Mixed", kind: Arma { phi: 0.5, theta: -0.4 }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 12, name: "Square_LowFreq", kind: Square { cycles: C_LOW }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 13, name: "Square_HighFreq", kind: Square { cycles: C_HIGH }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 14, name: "Sawtooth_MedFreq", kind: Sawtooth { cycles: C_MED }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 15, name: "Pulses_Sparse", kind: Pulses { count: 5, amplitude: 2.0 }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 16, name: "Sine_Trend", kind: SineTrend { cycles: C_MED, sine_amplitude: 0.8, base_slope: 1.0 }, observation_noise_std: 0.0 },
        RegimeSpec { regime_id: 17, name: "Sine_HighNoise", kind: SineHighNoise { cycles: C_MED, noise_std: 3.0 }, observation_noise_std: 0.0 },
    ];
    &TABLE
}

/// Whether sequences of this kind are a deterministic function of their
/// per-sequence draws alone (no per-step process noise). Determines which
/// regimes participate in exact prediction identities downstream.
pub fn kind_is_deterministic(kind: RegimeKind) -> bool {
    !matches!(
        kind,
        RegimeKind::Ar { .. }
            | RegimeKind::Ma { .. }
            | RegimeKind::Arma { .. }
            | RegimeKind::SineHighNoise { .. }
    )
}

/// A raw (unstandardized) generated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterSequence {
    pub regime_id: u16,
    pub seq_index: u32,
    pub values: Vec<f64>,
    pub rng_seed: u64,
}

/// Seed for the per-sequence ChaCha8 stream.
pub fn sequence_seed(global_seed: u64, regime_id: u16, seq_index: u32) -> u64 {
    fnv1a64_words(&[global_seed, u64::from(regime_id), u64::from(seq_index)])
}

/// Generates one master sequence of `master_len` samples.
///
/// Draw order per kind (all from the per-sequence stream, in this order):
/// sine and square and sawtooth draw one phase ~ N(0, pi^2); harmonics draw
/// two phases; trends draw slope noise ~ N(0,1) then intercept ~ N(0, pi^2);
/// ARMA kinds draw burn-in + length innovations; pulses draw `count` onsets;
/// the sine-plus-trend draws phase, slope noise, intercept; the high-noise
/// sine draws its phase then one noise sample per step.
pub fn generate_master(
    spec: &RegimeSpec,
    global_seed: u64,
    seq_index: u32,
    master_len: usize,
) -> Result<MasterSequence> {
    generate_master_impl(spec, global_seed, seq_index, master_len, true, None)
}

/// [`generate_master`] with the additive observation-noise hook disabled.
/// With the table's all-zero observation noise this returns identical
/// values, which is exactly the property tests pin down.
pub fn generate_master_noise_free(
    spec: &RegimeSpec,
    global_seed: u64,
    seq_index: u32,
    master_len: usize,
) -> Result<MasterSequence> {
    generate_master_impl(spec, global_seed, seq_index, master_len, false, None)
}

/// [`generate_master`] with every per-step process-noise draw at sample
/// `known_len` or later replaced by zero (observation noise off as well).
///
/// The first `known_len` samples match the realized sequence bit for bit,
/// and each later sample is its conditional expectation given that prefix:
/// ARMA innovations stop, the high-noise sine collapses to its clean
/// sinusoid, and kinds without per-step noise are reproduced unchanged.
pub fn generate_master_conditional_mean(
    spec: &RegimeSpec,
    global_seed: u64,
    seq_index: u32,
    master_len: usize,
    known_len: usize,
) -> Result<MasterSequence> {
    generate_master_impl(spec, global_seed, seq_index, master_len, false, Some(known_len))
}

fn generate_master_impl(
    spec: &RegimeSpec,
    global_seed: u64,
    seq_index: u32,
    master_len: usize,
    observation_noise: bool,
    process_noise_cutoff: Option<usize>,
) -> Result<MasterSequence> {
    if master_len < 2 {
        return Err(Error::contract(format!(
            "master_len {master_len} too short to generate"
        )));
    }
    let seed = sequence_seed(global_seed, spec.regime_id, seq_index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase_dist = Normal::new(0.0, PI).expect("valid std");
    let unit = Normal::new(0.0, 1.0).expect("valid std");
    let len = master_len;
    let known_len = process_noise_cutoff.unwrap_or(len);

    let mut values: Vec<f64> = match spec.kind {
        RegimeKind::Sine { cycles, amplitude } => {
            let phase = phase_dist.sample(&mut rng);
            (0..len).map(|t| amplitude * sine_value(cycles, phase, t, len)).collect()
        }
        RegimeKind::SineHarmonics { cycles } => {
            let phase = phase_dist.sample(&mut rng);
            let phase2 = phase_dist.sample(&mut rng);
            (0..len)
                .map(|t| {
                    0.7 * sine_value(cycles, phase, t, len)
                        + 0.3 * sine_value(3.0 * cycles, phase2, t, len)
                })
                .collect()
        }
        RegimeKind::Trend { base_slope } => {
            let slope = base_slope + unit.sample(&mut rng);
            let intercept = phase_dist.sample(&mut rng);
            (0..len).map(|t| trend_value(slope, intercept, t, len)).collect()
        }
        RegimeKind::Ar { phi } => {
            arma_sample_conditional_mean(phi, 0.0, len, ARMA_BURN_IN, known_len, &mut rng)?
        }
        RegimeKind::Ma { theta } => {
            arma_sample_conditional_mean(0.0, theta, len, ARMA_BURN_IN, known_len, &mut rng)?
        }
        RegimeKind::Arma { phi, theta } => {
            arma_sample_conditional_mean(phi, theta, len, ARMA_BURN_IN, known_len, &mut rng)?
        }
        RegimeKind::Square { cycles } => {
            let phase = phase_dist.sample(&mut rng);
            (0..len).map(|t| square_value(cycles, phase, t, len)).collect()
        }
        RegimeKind::Sawtooth { cycles } => {
            let phase = phase_dist.sample(&mut rng);
            (0..len).map(|t| sawtooth_value(cycles, phase, t, len)).collect()
        }
        RegimeKind::Pulses { count, amplitude } => {
            let width = pulse_width(len);
            let mut v = vec![0.0; len];
            for _ in 0..count {
                let onset = rng.random_range(0..=len - width);
                for x in &mut v[onset..onset + width] {
                    *x += amplitude;
                }
            }
            v
        }
        RegimeKind::SineTrend { cycles, sine_amplitude, base_slope } => {
            let phase = phase_dist.sample(&mut rng);
            let slope = base_slope + unit.sample(&mut rng);
            let intercept = phase_dist.sample(&mut rng);
            (0..len)
                .map(|t| {
                    sine_amplitude * sine_value(cycles, phase, t, len)
                        + trend_value(slope, intercept, t, len)
                })
                .collect()
        }
        RegimeKind::SineHighNoise { cycles, noise_std } => {
            let phase = phase_dist.sample(&mut rng);
            let noise = Normal::new(0.0, noise_std)
                .map_err(|e| Error::contract(format!("invalid noise std: {e}")))?;
            (0..len)
                .map(|t| {
                    let drawn = noise.sample(&mut rng);
                    let kept = if t < known_len { drawn } else { 0.0 };
                    sine_value(cycles, phase, t, len) + kept
                })
                .collect()
        }
    };

    if observation_noise && spec.observation_noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.observation_noise_std)
            .map_err(|e| Error::contract(format!("invalid noise std: {e}")))?;
        for v in &mut values {
            *v += noise.sample(&mut rng);
        }
    }

    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric(format!(
            "regime {} produced non-finite samples",
            spec.name
        )));
    }
    Ok(MasterSequence { regime_id: spec.regime_id, seq_index, values, rng_seed: seed })
}

/// Samples discarded before an ARMA stretch is considered stationary.
pub const ARMA_BURN_IN: usize = 256;

/// `sin(2*pi*cycles*t/len + phase)`.
pub fn sine_value(cycles: f64, phase: f64, t: usize, len: usize) -> f64 {
    (2.0 * PI * cycles * t as f64 / len as f64 + phase).sin()
}

/// `slope * t/(len-1) + intercept`.
pub fn trend_value(slope: f64, intercept: f64, t: usize, len: usize) -> f64 {
    slope * t as f64 / (len - 1) as f64 + intercept
}

/// Unit square wave with sign(0) pinned to +1.
pub fn square_value(cycles: f64, phase: f64, t: usize, len: usize) -> f64 {
    if sine_value(cycles, phase, t, len) >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Rising sawtooth in [-1, 1).
pub fn sawtooth_value(cycles: f64, phase: f64, t: usize, len: usize) -> f64 {
    let x = cycles * t as f64 / len as f64 + phase / (2.0 * PI);
    2.0 * (x - x.floor()) - 1.0
}

/// Pulse width used by the pulse regime: round(len/50).
pub fn pulse_width(len: usize) -> usize {
    (len as f64 / 50.0).round() as usize
}
