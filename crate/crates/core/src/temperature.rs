use crate::error::SignalError;

/// Object-temperature register of an infrared thermometer, in units of
/// 0.02 K. The high bit is the sensor's error flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawTempReading {
    pub raw: u16,
}

impl RawTempReading {
    pub const ERROR_FLAG: u16 = 0x8000;

    pub fn new(raw: u16) -> Self {
        Self { raw }
    }
}

/// Converts a register value to degrees Celsius: `raw × 0.02 − 273.15`.
///
/// Computed in hundredths of a degree so the result is the nearest `f64` to
/// the exact decimal value.
pub fn raw_to_celsius(reading: RawTempReading) -> Result<f64, SignalError> {
    if reading.raw & RawTempReading::ERROR_FLAG != 0 {
        return Err(SignalError::SensorFault(reading.raw));
    }
    let centi = i64::from(reading.raw) * 2 - 27_315;
    Ok(centi as f64 / 100.0)
}

/// Nearest register value for a temperature, saturating at the valid range.
pub fn celsius_to_raw(celsius: f64) -> RawTempReading {
    let raw = ((celsius + 273.15) / 0.02).round();
    RawTempReading::new(raw.clamp(0.0, 0x7FFF as f64) as u16)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(raw: u16) -> f64 {
        raw_to_celsius(RawTempReading::new(raw)).unwrap()
    }

    #[test]
    fn known_conversions() {
        assert_eq!(c(0), -273.15);
        assert!((c(15508) - 37.01).abs() < 1e-9);
        assert!((c(16384) - 54.53).abs() < 1e-9);
    }

    #[test]
    fn error_flag_is_a_fault() {
        assert_eq!(
            raw_to_celsius(RawTempReading::new(0x8001)),
            Err(SignalError::SensorFault(0x8001))
        );
        assert!(raw_to_celsius(RawTempReading::new(0x7FFF)).is_ok());
    }

    #[test]
    fn celsius_round_trips_to_register_resolution() {
        for t in [35.0, 36.8, 37.01, 39.5, 41.2] {
            assert!((c(celsius_to_raw(t).raw) - t).abs() <= 0.01 + 1e-9);
        }
    }

    proptest! {
        #[test]
        fn linear_and_monotone(a in 0u16..0x7FFF, b in 1u16..0x7FFF) {
            prop_assume!(u32::from(a) + u32::from(b) <= 0x7FFF);
            let lo = c(a);
            let hi = c(a + b);
            prop_assert!(hi > lo);
            prop_assert!((hi - lo - 0.02 * f64::from(b)).abs() < 1e-9);
        }
    }
}
