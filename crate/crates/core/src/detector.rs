//! Threshold ("red line") detection over band peaks.
//!
//! Each detector watches one frequency band of the analysis spectrum and
//! fires when the band peak reaches its threshold, then holds off for the
//! refractory period. Thresholds are per-user, so detectors start out
//! uncalibrated and disabled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{band_peak, DspError, SpectrumFrame};

pub const DEFAULT_REFRACTORY_S: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("invalid detector config: {0}")]
    Invalid(String),
    #[error("detector {0} is uncalibrated: set a threshold before enabling it")]
    Uncalibrated(String),
    #[error("unknown detector {0:?}")]
    Unknown(String),
    #[error("duplicate detector id {0:?}")]
    Duplicate(String),
    #[error("spectrum at {got_ns} ns arrived after {prev_ns} ns")]
    OutOfOrder { prev_ns: u64, got_ns: u64 },
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub detector_id: String,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// `None` until the user calibrates this detector.
    pub threshold_uv: Option<f64>,
    #[serde(default = "default_refractory")]
    pub refractory_s: f64,
    #[serde(default)]
    pub enabled: bool,
}

fn default_refractory() -> f64 {
    DEFAULT_REFRACTORY_S
}

impl DetectorConfig {
    pub fn new(detector_id: impl Into<String>, band_low_hz: f64, band_high_hz: f64) -> Self {
        Self {
            detector_id: detector_id.into(),
            band_low_hz,
            band_high_hz,
            threshold_uv: None,
            refractory_s: DEFAULT_REFRACTORY_S,
            enabled: false,
        }
    }

    /// Sets the threshold and enables the detector.
    pub fn calibrated(mut self, threshold_uv: f64) -> Self {
        self.threshold_uv = Some(threshold_uv);
        self.enabled = true;
        self
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.detector_id.is_empty() {
            return Err(DetectorError::Invalid("empty detector id".into()));
        }
        if !(self.band_low_hz >= 0.0 && self.band_low_hz.is_finite() && self.band_high_hz.is_finite()) {
            return Err(DetectorError::Invalid(format!(
                "band {}:{} Hz must be finite and non-negative",
                self.band_low_hz, self.band_high_hz
            )));
        }
        if self.band_low_hz >= self.band_high_hz {
            return Err(DetectorError::Invalid(format!(
                "low ≥ high ({} ≥ {} Hz)",
                self.band_low_hz, self.band_high_hz
            )));
        }
        if let Some(t) = self.threshold_uv {
            if !(t > 0.0 && t.is_finite()) {
                return Err(DetectorError::Invalid(format!("threshold {t} uV must be > 0")));
            }
        }
        if !(self.refractory_s >= 0.0 && self.refractory_s.is_finite()) {
            return Err(DetectorError::Invalid(format!(
                "refractory {} s must be >= 0",
                self.refractory_s
            )));
        }
        if self.enabled && self.threshold_uv.is_none() {
            return Err(DetectorError::Uncalibrated(self.detector_id.clone()));
        }
        Ok(())
    }

    fn refractory_ns(&self) -> u64 {
        (self.refractory_s * 1e9).round() as u64
    }
}

/// The two detectors of the reference setup: 3–7 Hz and 1–3 Hz, both
/// uncalibrated.
pub fn default_bank() -> Vec<DetectorConfig> {
    vec![
        DetectorConfig::new("bandA", 3.0, 7.0),
        DetectorConfig::new("bandB", 1.0, 3.0),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub detector_id: String,
    pub t_ns: u64,
    pub peak_hz: f64,
    pub peak_uv: f64,
    pub threshold_uv: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DetectorState {
    pub last_event_t_ns: Option<u64>,
    last_spectrum_t_ns: Option<u64>,
}

/// Evaluates one spectrum against one detector.
pub fn evaluate(
    state: &mut DetectorState,
    spectrum: &SpectrumFrame,
    config: &DetectorConfig,
) -> Result<Option<DetectionEvent>, DetectorError> {
    if !config.enabled {
        return Ok(None);
    }
    let Some(threshold_uv) = config.threshold_uv else {
        return Err(DetectorError::Uncalibrated(config.detector_id.clone()));
    };
    if let Some(prev) = state.last_spectrum_t_ns {
        if spectrum.t_end_ns < prev {
            return Err(DetectorError::OutOfOrder {
                prev_ns: prev,
                got_ns: spectrum.t_end_ns,
            });
        }
    }
    let (peak_hz, peak_uv) = band_peak(spectrum, config.band_low_hz, config.band_high_hz)?;
    state.last_spectrum_t_ns = Some(spectrum.t_end_ns);
    if peak_uv < threshold_uv {
        return Ok(None);
    }
    if let Some(last) = state.last_event_t_ns {
        if spectrum.t_end_ns - last < config.refractory_ns() {
            return Ok(None);
        }
    }
    state.last_event_t_ns = Some(spectrum.t_end_ns);
    Ok(Some(DetectionEvent {
        detector_id: config.detector_id.clone(),
        t_ns: spectrum.t_end_ns,
        peak_hz,
        peak_uv,
        threshold_uv,
    }))
}

/// A set of detectors sharing one spectrum stream.
#[derive(Clone, Debug, Default)]
pub struct DetectorBank {
    entries: Vec<(DetectorConfig, DetectorState)>,
}

impl DetectorBank {
    pub fn new(configs: Vec<DetectorConfig>) -> Result<Self, DetectorError> {
        let mut entries: Vec<(DetectorConfig, DetectorState)> = Vec::with_capacity(configs.len());
        for c in configs {
            c.validate()?;
            if entries.iter().any(|(e, _)| e.detector_id == c.detector_id) {
                return Err(DetectorError::Duplicate(c.detector_id));
            }
            entries.push((c, DetectorState::default()));
        }
        Ok(Self { entries })
    }

    pub fn configs(&self) -> impl Iterator<Item = &DetectorConfig> {
        self.entries.iter().map(|(c, _)| c)
    }

    pub fn get(&self, detector_id: &str) -> Option<&DetectorConfig> {
        self.configs().find(|c| c.detector_id == detector_id)
    }

    /// Runs every detector on `spectrum`, in bank order.
    pub fn evaluate(&mut self, spectrum: &SpectrumFrame) -> Result<Vec<DetectionEvent>, DetectorError> {
        let mut out = Vec::new();
        for (config, state) in &mut self.entries {
            if let Some(e) = evaluate(state, spectrum, config)? {
                out.push(e);
            }
        }
        Ok(out)
    }

    /// Replaces a detector's configuration. The refractory clock carries
    /// over; the change applies from the next spectrum on. On rejection the
    /// previous config stays active.
    pub fn update_config(&mut self, new_config: DetectorConfig) -> Result<DetectorConfig, DetectorError> {
        new_config.validate()?;
        let slot = self
            .entries
            .iter_mut()
            .find(|(c, _)| c.detector_id == new_config.detector_id)
            .ok_or_else(|| DetectorError::Unknown(new_config.detector_id.clone()))?;
        slot.0 = new_config.clone();
        Ok(new_config)
    }

    /// Forgets all timing state, e.g. when a new source starts at t = 0.
    pub fn reset_state(&mut self) {
        for (_, s) in &mut self.entries {
            *s = DetectorState::default();
        }
    }
}
