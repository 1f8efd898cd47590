use std::f64::consts::PI;

use lify_core::ppg::{SPO2_INTERCEPT, SPO2_SLOPE};
use lify_core::PpgWindow;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::AgentError;

pub const PPG_SAMPLE_RATE_HZ: f64 = 100.0;
pub const PPG_WINDOW_S: f64 = 10.0;

const DC_RED: f64 = 50_000.0;
const DC_IR: f64 = 60_000.0;
const DEPTH_IR: f64 = 0.02;
const HARMONIC: f64 = 0.3;

/// Synthesizes a two-channel PPG window for a target heart rate and
/// saturation.
///
/// Each channel is `DC·(1 + m·(sin θ + 0.3·sin 2θ))` with `θ = 2πft + φ`,
/// `f = hr/60`, plus white Gaussian noise at `noise_snr_db` relative to the
/// pulsatile power (`f64::INFINITY` for none). The infrared depth is fixed at
/// 0.02 and the red depth is `R·0.02` where `110 − 25R` equals the target
/// saturation. The start phase `φ` and the noise come from `seed`.
pub fn generate_ppg(
    hr_bpm: f64,
    spo2_pct: f64,
    sample_rate_hz: f64,
    duration_s: f64,
    noise_snr_db: f64,
    seed: u64,
) -> Result<PpgWindow, AgentError> {
    if !(20.0..=250.0).contains(&hr_bpm) {
        return Err(AgentError::InvalidTarget(format!("heart rate {hr_bpm} outside [20, 250]")));
    }
    if !(70.0..=100.0).contains(&spo2_pct) {
        return Err(AgentError::InvalidTarget(format!("saturation {spo2_pct} outside [70, 100]")));
    }
    if !(sample_rate_hz > 0.0 && duration_s > 0.0) || noise_snr_db.is_nan() {
        return Err(AgentError::InvalidTarget("sample rate and duration must be positive".into()));
    }

    let ratio = (SPO2_INTERCEPT - spo2_pct) / SPO2_SLOPE;
    let depth_red = ratio * DEPTH_IR;
    let f = hr_bpm / 60.0;
    let n = (sample_rate_hz * duration_s).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let shape_power = 0.5 * (1.0 + HARMONIC * HARMONIC);
    let noise = |dc: f64, depth: f64| {
        let sigma = ((dc * depth).powi(2) * shape_power / 10f64.powf(noise_snr_db / 10.0)).sqrt();
        Normal::new(0.0, sigma).expect("sigma is finite and non-negative")
    };
    let noise_red = noise(DC_RED, depth_red);
    let noise_ir = noise(DC_IR, DEPTH_IR);

    let mut red = Vec::with_capacity(n);
    let mut ir = Vec::with_capacity(n);
    for i in 0..n {
        let theta = 2.0 * PI * f * (i as f64 / sample_rate_hz) + phase;
        let shape = theta.sin() + HARMONIC * (2.0 * theta).sin();
        red.push(DC_RED * (1.0 + depth_red * shape) + noise_red.sample(&mut rng));
        ir.push(DC_IR * (1.0 + DEPTH_IR * shape) + noise_ir.sample(&mut rng));
    }
    PpgWindow::new(red, ir, sample_rate_hz).map_err(|e| AgentError::InvalidTarget(e.to_string()))
}

/// What the sensor sees with no finger on it: ambient level, no pulse.
pub fn flat_ppg(sample_rate_hz: f64, duration_s: f64) -> PpgWindow {
    let n = (sample_rate_hz * duration_s).round() as usize;
    PpgWindow { red: vec![DC_RED; n], ir: vec![DC_IR; n], sample_rate_hz }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lify_core::{estimate_heart_rate, estimate_spo2};

    #[test]
    fn round_trips_through_the_estimators() {
        let w = generate_ppg(72.0, 97.5, 100.0, 10.0, f64::INFINITY, 1).unwrap();
        let spo2 = estimate_spo2(&w).unwrap();
        assert!((spo2.percent - 97.5).abs() <= 0.1, "{spo2:?}");

        let w = generate_ppg(60.0, 85.0, 100.0, 10.0, f64::INFINITY, 1).unwrap();
        let hr = estimate_heart_rate(&w).unwrap();
        assert!((hr - 60.0).abs() <= 1.0, "{hr}");
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = generate_ppg(72.0, 97.0, 100.0, 10.0, 25.0, 9).unwrap();
        let b = generate_ppg(72.0, 97.0, 100.0, 10.0, 25.0, 9).unwrap();
        assert!(a.red.iter().zip(&b.red).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.ir.iter().zip(&b.ir).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = generate_ppg(72.0, 97.0, 100.0, 10.0, 25.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_implausible_targets() {
        assert!(matches!(generate_ppg(10.0, 97.0, 100.0, 10.0, 30.0, 1), Err(AgentError::InvalidTarget(_))));
        assert!(matches!(generate_ppg(72.0, 101.0, 100.0, 10.0, 30.0, 1), Err(AgentError::InvalidTarget(_))));
    }

    #[test]
    fn flat_window_has_no_pulse() {
        assert!(estimate_heart_rate(&flat_ppg(100.0, 10.0)).is_err());
    }
}
