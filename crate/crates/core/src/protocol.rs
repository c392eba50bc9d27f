//! Messages exchanged with live clients, encoded as JSON objects with a
//! `kind` discriminator.
//!
//! Outbound: `samples`, `spectrum`, `event`, `pin_state`, `status`, `ack`.
//! Inbound: `control` carrying a `cmd`.

use serde::{Deserialize, Serialize};

use crate::detector::{DetectionEvent, DetectorConfig};
use crate::dsp::SpectrumFrame;
use crate::session::{SessionConfig, SourceConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// Decimated, filtered analysis channel.
    Samples {
        t0_ns: u64,
        dt_ns: u64,
        values_uv: Vec<f64>,
    },
    Spectrum(SpectrumFrame),
    Event(DetectionEvent),
    PinState {
        pin: u8,
        level: bool,
        asserted: bool,
        t_ns: u64,
        cause: String,
    },
    Status(SessionStatus),
    Ack(Ack),
}

impl Payload {
    /// Samples and spectra may be thinned for slow clients; everything else
    /// must arrive.
    pub fn is_lossy(&self) -> bool {
        matches!(self, Payload::Samples { .. } | Payload::Spectrum(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamMessage {
    pub seq: u64,
    #[serde(flatten)]
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub running: bool,
    /// Number of control commands applied so far.
    pub control_seq: u64,
    pub config: SessionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub cmd_seq: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<DetectorConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum ControlCommand {
    SetThreshold {
        detector_id: String,
        threshold_uv: f64,
    },
    SetBand {
        detector_id: String,
        low_hz: f64,
        high_hz: f64,
    },
    SetRefractory {
        detector_id: String,
        refractory_s: f64,
    },
    EnableDetector {
        detector_id: String,
        #[serde(default = "yes")]
        enabled: bool,
    },
    Start,
    Stop,
    SelectSource {
        source: SourceConfig,
    },
}

fn yes() -> bool {
    true
}

impl ControlCommand {
    pub fn detector_id(&self) -> Option<&str> {
        match self {
            ControlCommand::SetThreshold { detector_id, .. }
            | ControlCommand::SetBand { detector_id, .. }
            | ControlCommand::SetRefractory { detector_id, .. }
            | ControlCommand::EnableDetector { detector_id, .. } => Some(detector_id),
            _ => None,
        }
    }

    /// Applies a detector command to a copy of `current`; validation is the
    /// caller's job.
    pub fn apply_to(&self, current: &DetectorConfig) -> DetectorConfig {
        let mut c = current.clone();
        match self {
            ControlCommand::SetThreshold { threshold_uv, .. } => c.threshold_uv = Some(*threshold_uv),
            ControlCommand::SetBand { low_hz, high_hz, .. } => {
                c.band_low_hz = *low_hz;
                c.band_high_hz = *high_hz;
            }
            ControlCommand::SetRefractory { refractory_s, .. } => c.refractory_s = *refractory_s,
            ControlCommand::EnableDetector { enabled, .. } => c.enabled = *enabled,
            _ => {}
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientMessage {
    Control(ControlCommand),
}
