//! Synthetic patient standing in for the physical sensors.

use lify_core::{
    celsius_to_raw, estimate_heart_rate, estimate_spo2, raw_to_celsius, validate_sample, MetricKind, Quality,
    TelemetryEnvelope, VitalSample,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::AgentError;
use crate::synth::{flat_ppg, generate_ppg, PPG_SAMPLE_RATE_HZ, PPG_WINDOW_S};

/// Random-walk step sizes (one standard deviation per cycle).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftParams {
    pub hr_step: f64,
    pub temp_step: f64,
    pub spo2_step: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self { hr_step: 0.5, temp_step: 0.01, spo2_step: 0.1 }
    }
}

/// Overrides one metric with a target value for a time span measured from
/// the simulator's origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub start_ms: i64,
    pub duration_ms: i64,
    pub metric: MetricKind,
    pub target: f64,
}

impl Anomaly {
    fn active_at(&self, offset_ms: i64) -> bool {
        offset_ms >= self.start_ms && offset_ms < self.start_ms + self.duration_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatedPatientState {
    pub base_hr: f64,
    pub base_temp: f64,
    pub base_spo2: f64,
    pub drift: DriftParams,
    pub anomalies: Vec<Anomaly>,
    /// `false` models a finger off the optical sensor: flat signal.
    pub sensor_contact: bool,
    /// Noise level of the synthesized optical channels.
    pub snr_db: f64,
}

impl Default for SimulatedPatientState {
    fn default() -> Self {
        Self {
            base_hr: 72.0,
            base_temp: 36.8,
            base_spo2: 97.0,
            drift: DriftParams::default(),
            anomalies: Vec::new(),
            sensor_contact: true,
            snr_db: 30.0,
        }
    }
}

impl SimulatedPatientState {
    pub fn validate(&self) -> Result<(), AgentError> {
        let check = |metric: MetricKind, v: f64| {
            let (lo, hi) = metric.plausible_range();
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(AgentError::InvalidConfig(format!("base {metric} {v} outside [{lo}, {hi}]")))
            }
        };
        check(MetricKind::HrBpm, self.base_hr)?;
        check(MetricKind::TempC, self.base_temp)?;
        check(MetricKind::Spo2Pct, self.base_spo2)?;
        let d = self.drift;
        if [d.hr_step, d.temp_step, d.spo2_step].iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(AgentError::InvalidConfig("drift steps must be finite and non-negative".into()));
        }
        if let Some(a) = self.anomalies.iter().find(|a| a.duration_ms <= 0) {
            return Err(AgentError::InvalidConfig(format!("anomaly at {} ms has non-positive duration", a.start_ms)));
        }
        if self.snr_db.is_nan() {
            return Err(AgentError::InvalidConfig("snr_db must be a number".into()));
        }
        Ok(())
    }
}

// Pull of the random walk back towards the base value, per cycle.
const REVERSION: f64 = 0.2;

/// Runs the acquisition cycle for one simulated patient.
///
/// All randomness comes from one seeded generator, so a fixed seed and
/// sequence of cycle timestamps reproduces the envelope stream exactly.
#[derive(Debug, Clone)]
pub struct PatientSimulator {
    device_id: String,
    patient_id: String,
    state: SimulatedPatientState,
    origin_ms: i64,
    rng: ChaCha8Rng,
    hr: f64,
    temp: f64,
    spo2: f64,
}

impl PatientSimulator {
    pub fn new(
        device_id: impl Into<String>,
        patient_id: impl Into<String>,
        state: SimulatedPatientState,
        seed: u64,
        origin_ms: i64,
    ) -> Result<Self, AgentError> {
        state.validate()?;
        Ok(Self {
            device_id: device_id.into(),
            patient_id: patient_id.into(),
            hr: state.base_hr,
            temp: state.base_temp,
            spo2: state.base_spo2,
            state,
            origin_ms,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn state_mut(&mut self) -> &mut SimulatedPatientState {
        &mut self.state
    }

    fn walk(&mut self, current: f64, base: f64, step: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        current - REVERSION * (current - base) + step * z
    }

    fn target(&self, metric: MetricKind, offset_ms: i64, walked: f64) -> f64 {
        self.state
            .anomalies
            .iter()
            .rev()
            .find(|a| a.metric == metric && a.active_at(offset_ms))
            .map_or(walked, |a| a.target)
    }

    /// Advances the walk, synthesizes raw sensor data for the current state
    /// and estimates the vitals from it.
    pub fn acquire_cycle(&mut self, now_ms: i64) -> TelemetryEnvelope {
        let d = self.state.drift;
        self.hr = self.walk(self.hr, self.state.base_hr, d.hr_step);
        self.temp = self.walk(self.temp, self.state.base_temp, d.temp_step);
        self.spo2 = self.walk(self.spo2, self.state.base_spo2, d.spo2_step).min(100.0);
        let ppg_seed = self.rng.next_u64();

        let offset = now_ms - self.origin_ms;
        let hr_target = self.target(MetricKind::HrBpm, offset, self.hr);
        let temp_target = self.target(MetricKind::TempC, offset, self.temp);
        let spo2_target = self.target(MetricKind::Spo2Pct, offset, self.spo2);

        let mut env = TelemetryEnvelope::new(&self.device_id, &self.patient_id, now_ms);
        let mut put = |metric: MetricKind, value: f64, quality: Quality| {
            let s = validate_sample(
                VitalSample::new(&self.patient_id, &self.device_id, metric, value, now_ms).with_quality(quality),
            );
            if s.quality == Quality::NoSignal {
                env.mark_missing(metric);
            } else {
                env.insert(metric, s.value, s.quality);
            }
        };

        match raw_to_celsius(celsius_to_raw(temp_target)) {
            Ok(c) => put(MetricKind::TempC, round_to(c, 2), Quality::Ok),
            Err(_) => put(MetricKind::TempC, f64::NAN, Quality::NoSignal),
        }

        let window = if self.state.sensor_contact {
            generate_ppg(
                hr_target.clamp(20.0, 250.0),
                spo2_target.clamp(70.0, 100.0),
                PPG_SAMPLE_RATE_HZ,
                PPG_WINDOW_S,
                self.state.snr_db,
                ppg_seed,
            )
            .unwrap_or_else(|_| flat_ppg(PPG_SAMPLE_RATE_HZ, PPG_WINDOW_S))
        } else {
            flat_ppg(PPG_SAMPLE_RATE_HZ, PPG_WINDOW_S)
        };
        match estimate_heart_rate(&window) {
            Ok(hr) => put(MetricKind::HrBpm, round_to(hr, 1), Quality::Ok),
            Err(_) => put(MetricKind::HrBpm, f64::NAN, Quality::NoSignal),
        }
        match estimate_spo2(&window) {
            Ok(est) => put(MetricKind::Spo2Pct, round_to(est.percent, 1), est.quality),
            Err(_) => put(MetricKind::Spo2Pct, f64::NAN, Quality::NoSignal),
        }
        env
    }
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (v * scale).round() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    const T0: i64 = 1_700_000_000_000;

    fn sim(state: SimulatedPatientState) -> PatientSimulator {
        PatientSimulator::new("dev-01", "p-001", state, 1, T0).unwrap()
    }

    #[test]
    fn quiescent_cycle_reports_all_metrics_ok() {
        let mut s = sim(SimulatedPatientState::default());
        for i in 0..20 {
            let env = s.acquire_cycle(T0 + i * 1000);
            env.validate().unwrap();
            assert_eq!(env.metrics.len(), 3, "{env:?}");
            assert!(env.quality.values().all(|q| *q == Quality::Ok), "{env:?}");
            assert!((env.metrics[&MetricKind::HrBpm] - 72.0).abs() < 5.0);
        }
    }

    #[test]
    fn anomaly_overrides_temperature_while_active() {
        let mut state = SimulatedPatientState::default();
        state.anomalies.push(Anomaly { start_ms: 5_000, duration_ms: 3_000, metric: MetricKind::TempC, target: 39.5 });
        let mut s = sim(state);
        let temps: Vec<f64> = (0..10).map(|i| s.acquire_cycle(T0 + i * 1000).metrics[&MetricKind::TempC]).collect();
        for (i, t) in temps.iter().enumerate() {
            if (5..8).contains(&i) {
                assert!((t - 39.5).abs() <= 0.01, "cycle {i}: {t}");
            } else {
                assert!((t - 36.8).abs() < 0.5, "cycle {i}: {t}");
            }
        }
    }

    #[test]
    fn heart_rate_anomaly_is_estimated_from_the_waveform() {
        let mut state = SimulatedPatientState::default();
        state.anomalies.push(Anomaly { start_ms: 0, duration_ms: 10_000, metric: MetricKind::HrBpm, target: 130.0 });
        let env = sim(state).acquire_cycle(T0);
        assert!((env.metrics[&MetricKind::HrBpm] - 130.0).abs() <= 2.0);
    }

    #[test]
    fn flat_ppg_omits_optical_metrics() {
        let state = SimulatedPatientState { sensor_contact: false, ..Default::default() };
        let env = sim(state).acquire_cycle(T0);
        assert!(!env.metrics.contains_key(&MetricKind::HrBpm));
        assert!(!env.metrics.contains_key(&MetricKind::Spo2Pct));
        assert_eq!(env.quality[&MetricKind::HrBpm], Quality::NoSignal);
        assert_eq!(env.quality[&MetricKind::Spo2Pct], Quality::NoSignal);
        assert_eq!(env.quality[&MetricKind::TempC], Quality::Ok);
        env.validate().unwrap();
    }

    #[test]
    fn same_seed_same_stream() {
        let run = || {
            let mut s = sim(SimulatedPatientState::default());
            (0..15).map(|i| s.acquire_cycle(T0 + i * 1000).to_json()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn invalid_states_are_rejected() {
        let bad = SimulatedPatientState { base_temp: 60.0, ..Default::default() };
        assert!(PatientSimulator::new("d", "p", bad, 1, T0).is_err());
        let mut bad = SimulatedPatientState::default();
        bad.anomalies.push(Anomaly { start_ms: 0, duration_ms: 0, metric: MetricKind::TempC, target: 39.0 });
        assert!(PatientSimulator::new("d", "p", bad, 1, T0).is_err());
    }
}
