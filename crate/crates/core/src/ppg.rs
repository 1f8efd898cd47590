//! Heart rate and blood oxygen from a dual-channel photoplethysmogram.
//!
//! Both estimators work on the channel minus its centred one-second moving
//! average. Only the interior of the window where the full averaging span is
//! available is used, so edge effects never produce peaks.

use serde::{Deserialize, Serialize};

use crate::error::SignalError;
use crate::metric::Quality;

/// Minimum time between two accepted pulse peaks, seconds.
pub const MIN_PEAK_SPACING_S: f64 = 0.33;
/// Peaks must exceed this multiple of the detrended signal RMS.
pub const PEAK_THRESHOLD_RMS: f64 = 0.5;
/// Empirical calibration line `SpO2 = A − B·R`.
pub const SPO2_INTERCEPT: f64 = 110.0;
pub const SPO2_SLOPE: f64 = 25.0;

const MIN_SAMPLE_RATE_HZ: f64 = 25.0;
const MAX_SAMPLE_RATE_HZ: f64 = 1000.0;
// Signals flatter than this, relative to their level, carry no pulse.
const FLAT_RELATIVE: f64 = 1e-9;

/// Raw red and infrared ADC counts sampled at a fixed rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpgWindow {
    pub red: Vec<f64>,
    pub ir: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl PpgWindow {
    pub fn new(red: Vec<f64>, ir: Vec<f64>, sample_rate_hz: f64) -> Result<Self, SignalError> {
        let w = Self { red, ir, sample_rate_hz };
        w.validate()?;
        Ok(w)
    }

    /// Checks the window shape: equal channel lengths, a sample rate in
    /// [25, 1000] Hz and at least two seconds of signal.
    pub fn validate(&self) -> Result<(), SignalError> {
        let fs = self.sample_rate_hz;
        if !(MIN_SAMPLE_RATE_HZ..=MAX_SAMPLE_RATE_HZ).contains(&fs) {
            return Err(SignalError::WindowTooShort(format!("sample rate {fs} Hz outside [25, 1000]")));
        }
        if self.red.len() != self.ir.len() {
            return Err(SignalError::WindowTooShort(format!(
                "channel lengths differ (red {}, ir {})",
                self.red.len(),
                self.ir.len()
            )));
        }
        if (self.ir.len() as f64) < 2.0 * fs {
            return Err(SignalError::WindowTooShort(format!(
                "{} samples is less than 2 s at {fs} Hz",
                self.ir.len()
            )));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.ir.len() as f64 / self.sample_rate_hz
    }
}

/// Result of the ratio-of-ratios computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spo2Estimate {
    /// Saturation after clamping to [70, 100].
    pub percent: f64,
    /// The ratio of ratios `R`.
    pub ratio: f64,
    /// `Suspect` when the calibration line left the clamp range.
    pub quality: Quality,
}

/// Channel minus its centred moving average, for the interior samples only.
/// Returns the detrended values and the index of the first one.
fn detrend(x: &[f64], sample_rate_hz: f64) -> (Vec<f64>, usize) {
    let half = ((sample_rate_hz.round() as usize) / 2).max(1);
    let span = 2 * half + 1;
    if x.len() < span {
        return (Vec::new(), 0);
    }
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        prefix.push(acc);
    }
    let out = (half..x.len() - half)
        .map(|i| x[i] - (prefix[i + half + 1] - prefix[i - half]) / span as f64)
        .collect();
    (out, half)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn level(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Indices of local maxima above `threshold`, thinned so no two survivors are
/// closer than `min_distance` samples. Taller peaks win.
fn find_peaks(x: &[f64], threshold: f64, min_distance: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (1..x.len().saturating_sub(1))
        .filter(|&i| x[i] > threshold && x[i] > x[i - 1] && x[i] >= x[i + 1])
        .collect();
    candidates.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));

    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_distance) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

/// Heart rate in beats per minute from the infrared channel.
///
/// Peaks are local maxima of the detrended signal above half its RMS, at
/// least 0.33 s apart. The rate is `60·(n − 1) / (t_last − t_first)`.
pub fn estimate_heart_rate(window: &PpgWindow) -> Result<f64, SignalError> {
    window.validate()?;
    let fs = window.sample_rate_hz;
    let (detrended, _) = detrend(&window.ir, fs);
    let signal_rms = rms(&detrended);
    if detrended.is_empty() || signal_rms <= FLAT_RELATIVE * level(&window.ir).max(1.0) {
        return Err(SignalError::NoPulseDetected { peaks: 0 });
    }

    let min_distance = (MIN_PEAK_SPACING_S * fs).ceil() as usize;
    let peaks = find_peaks(&detrended, PEAK_THRESHOLD_RMS * signal_rms, min_distance);
    if peaks.len() < 3 {
        return Err(SignalError::NoPulseDetected { peaks: peaks.len() });
    }
    let first = peaks[0] as f64 / fs;
    let last = peaks[peaks.len() - 1] as f64 / fs;
    Ok(60.0 * (peaks.len() - 1) as f64 / (last - first))
}

/// Blood oxygen saturation by ratio of ratios.
///
/// `AC` is the peak-to-peak of the detrended channel and `DC` its mean;
/// `R = (AC_red/DC_red) / (AC_ir/DC_ir)` and `SpO2 = 110 − 25·R`, clamped to
/// [70, 100]. A clamped value is returned with `Suspect` quality.
pub fn estimate_spo2(window: &PpgWindow) -> Result<Spo2Estimate, SignalError> {
    window.validate()?;
    let fs = window.sample_rate_hz;
    let dc_red = mean(&window.red);
    let dc_ir = mean(&window.ir);
    if !(dc_red > 0.0 && dc_ir > 0.0) {
        return Err(SignalError::NoSignal("channel mean is not positive"));
    }
    let peak_to_peak = |x: &[f64]| {
        let (d, _) = detrend(x, fs);
        let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    };
    let ac_red = peak_to_peak(&window.red);
    let ac_ir = peak_to_peak(&window.ir);
    if !(ac_ir > FLAT_RELATIVE * dc_ir) {
        return Err(SignalError::NoSignal("infrared channel has no pulsatile component"));
    }

    let ratio = (ac_red / dc_red) / (ac_ir / dc_ir);
    let raw = SPO2_INTERCEPT - SPO2_SLOPE * ratio;
    let percent = raw.clamp(70.0, 100.0);
    let quality = if percent == raw { Quality::Ok } else { Quality::Suspect };
    Ok(Spo2Estimate { percent, ratio, quality })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Pulse-like waveform with an exact modulation depth.
    fn pulse(f: f64, fs: f64, secs: f64, dc: f64, m: f64, phase: f64) -> Vec<f64> {
        let n = (fs * secs).round() as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                let x = 2.0 * PI * f * t + phase;
                dc * (1.0 + m * (x.sin() + 0.3 * (2.0 * x).sin()))
            })
            .collect()
    }

    fn window(f: f64, m_red: f64, m_ir: f64) -> PpgWindow {
        PpgWindow::new(
            pulse(f, 100.0, 10.0, 50_000.0, m_red, 0.4),
            pulse(f, 100.0, 10.0, 60_000.0, m_ir, 0.4),
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn heart_rate_of_known_pulses() {
        let hr = estimate_heart_rate(&window(1.2, 0.02, 0.02)).unwrap();
        assert!((hr - 72.0).abs() <= 1.0, "{hr}");
        let hr = estimate_heart_rate(&window(1.0, 0.02, 0.02)).unwrap();
        assert!((hr - 60.0).abs() <= 1.0, "{hr}");
    }

    #[test]
    fn constant_signal_has_no_pulse() {
        let flat = vec![40_000.0; 1000];
        let w = PpgWindow::new(flat.clone(), flat, 100.0).unwrap();
        assert!(matches!(estimate_heart_rate(&w), Err(SignalError::NoPulseDetected { .. })));
        assert!(matches!(estimate_spo2(&w), Err(SignalError::NoSignal(_))));
    }

    #[test]
    fn short_or_mismatched_windows_are_rejected() {
        assert!(matches!(
            PpgWindow::new(vec![1.0; 150], vec![1.0; 150], 100.0),
            Err(SignalError::WindowTooShort(_))
        ));
        assert!(PpgWindow::new(vec![1.0; 300], vec![1.0; 299], 100.0).is_err());
        assert!(PpgWindow::new(vec![1.0; 300], vec![1.0; 300], 10.0).is_err());
        let bad = PpgWindow { red: vec![1.0; 10], ir: vec![1.0; 10], sample_rate_hz: 100.0 };
        assert!(matches!(estimate_heart_rate(&bad), Err(SignalError::WindowTooShort(_))));
    }

    #[test]
    fn identical_channels_give_ratio_one() {
        let ir = pulse(1.2, 100.0, 10.0, 60_000.0, 0.02, 0.0);
        let w = PpgWindow::new(ir.clone(), ir, 100.0).unwrap();
        let est = estimate_spo2(&w).unwrap();
        assert!((est.ratio - 1.0).abs() < 1e-12);
        assert!((est.percent - 85.0).abs() < 1e-9);
        assert_eq!(est.quality, Quality::Ok);
    }

    #[test]
    fn modulation_depths_set_the_ratio() {
        let est = estimate_spo2(&window(1.0, 0.01, 0.02)).unwrap();
        assert!((est.percent - 97.5).abs() <= 0.1, "{est:?}");
        assert_eq!(est.quality, Quality::Ok);

        let est = estimate_spo2(&window(1.0, 0.004, 0.02)).unwrap();
        assert_eq!(est.percent, 100.0);
        assert_eq!(est.quality, Quality::Suspect);
    }

    #[test]
    fn non_positive_dc_is_no_signal() {
        let mut w = window(1.0, 0.01, 0.02);
        w.red.iter_mut().for_each(|v| *v -= 60_000.0);
        assert!(matches!(estimate_spo2(&w), Err(SignalError::NoSignal(_))));
    }

    #[test]
    fn peaks_respect_spacing_and_prefer_taller() {
        let x = [0.0, 1.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0, 0.0];
        assert_eq!(find_peaks(&x, 0.5, 3), vec![3, 7]);
        assert_eq!(find_peaks(&x, 2.5, 1), vec![3]);
    }
}
