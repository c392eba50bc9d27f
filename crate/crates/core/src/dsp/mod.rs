//! Feature path: bandpass filter, sliding windows, amplitude spectrum and
//! band peak.

mod filter;
mod spectrum;
mod window;

pub use filter::{analog_bandpass_magnitude, design_bandpass, Biquad, BandpassFilter, FilterDesign, FilterSpec};
pub use spectrum::{band_peak, fft_amplitude, SpectrumAnalyzer, SpectrumFrame, Taper};
pub use window::{Window, WindowBuffer, WindowSpec};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("invalid filter: {0}")]
    Filter(String),
    #[error("invalid window: {0}")]
    Window(String),
    #[error("stream integrity: timestamp {got_ns} ns after {prev_ns} ns")]
    StreamIntegrity { prev_ns: u64, got_ns: u64 },
    #[error("window length {actual} does not match analyzer length {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid band {low_hz}..{high_hz} Hz: {reason}")]
    InvalidBand { low_hz: f64, high_hz: f64, reason: String },
    #[error("band {low_hz}..{high_hz} Hz contains no bin centers (bin spacing {bin_hz} Hz)")]
    EmptyBand { low_hz: f64, high_hz: f64, bin_hz: f64 },
}
