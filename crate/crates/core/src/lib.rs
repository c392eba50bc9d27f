//! Single-channel blink BCI pipeline.
//!
//! Frames from an ADS1299-style 8-channel 24-bit ADC (real hardware, the
//! deterministic simulator in [`sim`], or a recording) are converted to
//! volts, bandpass filtered, windowed and transformed with an FFT. The
//! per-band spectral peak is compared against a per-user threshold and every
//! supra-threshold window becomes a [`detector::DetectionEvent`], which
//! [`actuation`] turns into a pulse on an output pin.
//!
//! The modules are usable on their own; [`session`] wires them into a
//! running pipeline with recording, replay and calibration.

pub mod actuation;
pub mod detector;
pub mod dsp;
pub mod frame;
pub mod protocol;
pub mod session;
pub mod sim;

pub use actuation::{ActiveLevel, ActuatorCommand, PinMap, PinSpec, PulseInterval, PulseLog};
pub use detector::{DetectionEvent, DetectorBank, DetectorConfig};
pub use dsp::{FilterSpec, SpectrumFrame, Taper, WindowSpec};
pub use frame::{DeviceConfig, RawFrame, SampleChunk, SampleVector, CHANNELS, FRAME_LEN};
pub use session::{LatencyReport, SessionConfig, SessionSummary, SourceConfig};
pub use sim::{BlinkEvent, BlinkScript, NoiseModel};
