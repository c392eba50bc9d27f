//! Running the pipeline: configuration, sources, recording and replay,
//! calibration and latency accounting.

mod calibrate;
mod latency;
mod pipeline;
pub mod recording;
mod runner;
mod source;
pub mod standard;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::{ActuationError, PinMap, PulseLog};
use crate::detector::{default_bank, DetectionEvent, DetectorBank, DetectorConfig, DetectorError};
use crate::dsp::{DspError, FilterSpec, WindowSpec};
use crate::frame::{DeviceConfig, FrameError};
use crate::sim::{BlinkLabel, BlinkScript, NoiseModel, SimError};

pub use calibrate::{band_peak_series, calibrate_threshold, percentile, CalibrationReport, WindowPeak};
pub use latency::{score_detections, FALSE_MARGIN_NS, MATCH_WINDOW_NS, DetectionScore, LatencyEntry, LatencyReport};
pub use pipeline::{Observer, Outbound, Pipeline};
pub use recording::{record, RecordingHeader, Recorder, ReplayReader};
pub use runner::{run, run_with, spawn_live, ControlReply, ControlRequest, LiveHandle, RunOptions};
pub use source::{GapMarker, SourcePacket};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("source error: {0}")]
    Source(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("calibration infeasible: blink median {blink_median_uv:.3} uV <= noise p99 {noise_p99_uv:.3} uV")]
    CalibrationInfeasible { blink_median_uv: f64, noise_p99_uv: f64 },
    #[error("calibration input: {0}")]
    CalibrationInput(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Actuation(#[from] ActuationError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl SessionError {
    /// Process exit status: 1 configuration, 2 source, 3 file format.
    pub fn exit_code(&self) -> i32 {
        match self {
            SessionError::Format(_) => 3,
            SessionError::Source(_) | SessionError::Io(_) | SessionError::Actuation(_) => 2,
            _ => 1,
        }
    }
}

impl From<FrameError> for SessionError {
    fn from(e: FrameError) -> Self {
        SessionError::Config(e.to_string())
    }
}

impl From<SimError> for SessionError {
    fn from(e: SimError) -> Self {
        SessionError::Config(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SourceConfig {
    /// Raw 27-byte frames read from a device node or pipe.
    Hardware { device_path: PathBuf },
    Simulate {
        duration_s: f64,
        /// Playback speed multiplier; 0 runs as fast as possible.
        #[serde(default)]
        speed: f64,
        #[serde(default)]
        script: BlinkScript,
        #[serde(default)]
        noise: NoiseModel,
    },
    Replay {
        path: PathBuf,
        #[serde(default)]
        speed: f64,
    },
}

impl SourceConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        let speed_ok = |s: f64| s >= 0.0 && s.is_finite();
        match self {
            SourceConfig::Hardware { device_path } => {
                if !device_path.exists() {
                    return Err(SessionError::Source(format!(
                        "device {} does not exist",
                        device_path.display()
                    )));
                }
            }
            SourceConfig::Simulate { duration_s, speed, script, noise } => {
                if !(*duration_s > 0.0 && duration_s.is_finite()) {
                    return Err(SessionError::Config(format!("duration {duration_s} s must be positive")));
                }
                if !speed_ok(*speed) {
                    return Err(SessionError::Config(format!("speed {speed} must be >= 0")));
                }
                script.validate()?;
                noise.validate()?;
            }
            SourceConfig::Replay { path, speed } => {
                if !path.exists() {
                    return Err(SessionError::Source(format!("recording {} does not exist", path.display())));
                }
                if !speed_ok(*speed) {
                    return Err(SessionError::Config(format!("speed {speed} must be >= 0")));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            SourceConfig::Hardware { .. } => "hardware",
            SourceConfig::Simulate { .. } => "simulate",
            SourceConfig::Replay { .. } => "replay",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub device: DeviceConfig,
    pub source: SourceConfig,
    pub analysis_channel: usize,
    pub filter: FilterSpec,
    pub window: WindowSpec,
    pub detectors: Vec<DetectorConfig>,
    pub pin_map: PinMap,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_path: Option<PathBuf>,
    /// Written into recordings; derived from the source when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub session_id: Option<u64>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let device = DeviceConfig::default();
        Self {
            window: WindowSpec::for_rate(device.sample_rate_sps),
            device,
            source: standard::standard_source(0),
            analysis_channel: 0,
            filter: FilterSpec::default(),
            detectors: default_bank(),
            pin_map: PinMap::default(),
            record_path: None,
            session_id: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        self.device.validate()?;
        if self.analysis_channel >= self.device.channel_count {
            return Err(SessionError::Config(format!(
                "analysis channel {} >= channel count {}",
                self.analysis_channel, self.device.channel_count
            )));
        }
        self.filter
            .validate(f64::from(self.device.sample_rate_sps))
            .map_err(|e| SessionError::Config(e.to_string()))?;
        self.window.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        DetectorBank::new(self.detectors.clone()).map_err(|e| SessionError::Config(e.to_string()))?;
        self.pin_map.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        for d in &self.detectors {
            if self.pin_map.get(&d.detector_id).is_none() {
                return Err(SessionError::Config(format!("detector {} has no pin", d.detector_id)));
            }
        }
        self.source.validate()
    }

    pub fn detector_mut(&mut self, id: &str) -> Option<&mut DetectorConfig> {
        self.detectors.iter_mut().find(|d| d.detector_id == id)
    }
}

/// What a finished run produced.
#[derive(Clone, Debug, Default)]
pub struct SessionSummary {
    pub frames: u64,
    pub windows: u64,
    pub events: Vec<DetectionEvent>,
    pub events_per_detector: BTreeMap<String, usize>,
    pub pulse_log: PulseLog,
    /// Ground truth, when the source is the simulator.
    pub labels: Vec<BlinkLabel>,
    pub latency: Option<LatencyReport>,
    pub gaps: Vec<GapMarker>,
    pub warnings: Vec<String>,
    pub wall_time: Duration,
}

impl SessionSummary {
    /// One `detector_id,t_ns,peak_hz,peak_uv,threshold_uv` line per event.
    pub fn event_log_text(&self) -> String {
        events_to_text(&self.events)
    }

    pub fn events_for<'a>(&'a self, detector_id: &'a str) -> impl Iterator<Item = &'a DetectionEvent> {
        self.events.iter().filter(move |e| e.detector_id == detector_id)
    }
}

pub fn events_to_text(events: &[DetectionEvent]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    for e in events {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            e.detector_id, e.t_ns, e.peak_hz, e.peak_uv, e.threshold_uv
        );
    }
    out
}
