//! The reference scenario used by the acceptance suite and the CLI
//! defaults: 20 s at 250 SPS, gain 24, ten 100 uV / 0.3 s blinks at 1 Hz
//! starting at 8 s. The quiet lead-in leaves room for calibration.

use crate::sim::{blink_rate_script, generate, BlinkScript, NoiseModel};

use super::{calibrate_threshold, CalibrationReport, SessionConfig, SessionError, SourceConfig};

pub const DURATION_S: f64 = 20.0;
pub const FIRST_BLINK_S: f64 = 8.0;
pub const BLINK_COUNT: usize = 10;
pub const BLINK_RATE_HZ: f64 = 1.0;
pub const BLINK_AMPLITUDE_UV: f64 = 100.0;
pub const DEFAULT_MARGIN: f64 = 0.5;

pub fn standard_script() -> BlinkScript {
    blink_rate_script(BLINK_RATE_HZ, BLINK_COUNT, FIRST_BLINK_S, BLINK_AMPLITUDE_UV)
        .expect("standard script is valid")
}

pub fn standard_noise(seed: u64, silent: bool) -> NoiseModel {
    if silent {
        NoiseModel::silent().with_seed(seed)
    } else {
        NoiseModel::default().with_seed(seed)
    }
}

pub fn standard_source(seed: u64) -> SourceConfig {
    SourceConfig::Simulate {
        duration_s: DURATION_S,
        speed: 0.0,
        script: standard_script(),
        noise: standard_noise(seed, false),
    }
}

/// Standard simulation, detectors still uncalibrated.
pub fn standard_config(seed: u64, silent: bool) -> SessionConfig {
    SessionConfig {
        source: SourceConfig::Simulate {
            duration_s: DURATION_S,
            speed: 0.0,
            script: standard_script(),
            noise: standard_noise(seed, silent),
        },
        ..SessionConfig::default()
    }
}

/// Calibrates every detector of `config` on a separate simulation with
/// `calibration_seed` (same script and noise level) and enables it.
pub fn calibrate_config(
    mut config: SessionConfig,
    calibration_seed: u64,
    margin: f64,
) -> Result<(SessionConfig, Vec<CalibrationReport>), SessionError> {
    let SourceConfig::Simulate { duration_s, script, noise, .. } = &config.source else {
        return Err(SessionError::Config("calibration needs a simulated source".into()));
    };
    let noise = noise.with_seed(calibration_seed);
    let sim = generate(*duration_s, &config.device, script, &noise)?;
    let labels = sim.labels().to_vec();
    let frames: Vec<_> = sim.collect();
    let mut reports = Vec::new();
    for i in 0..config.detectors.len() {
        let band = (config.detectors[i].band_low_hz, config.detectors[i].band_high_hz);
        let report = calibrate_threshold(&frames, &labels, &config.device, &config, band, margin)?;
        let d = &mut config.detectors[i];
        d.threshold_uv = Some(report.threshold_uv);
        d.enabled = true;
        reports.push(report);
    }
    Ok((config, reports))
}
