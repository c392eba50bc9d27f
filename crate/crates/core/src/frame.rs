//! ADS1299 data frames and raw-code/volt conversion.
//!
//! # Frame layout
//!
//! ```text
//! Offset  Size  Field
//!  0       3    status word, big-endian
//!  3+3k    3    channel k code, big-endian two's complement (k = 0..7)
//! total   27
//! ```
//!
//! The status word is carried through untouched.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of electrode channels on the ADC.
pub const CHANNELS: usize = 8;
/// Serialized frame length in bytes.
pub const FRAME_LEN: usize = 3 + 3 * CHANNELS;

pub const CODE_MIN: i32 = -(1 << 23);
pub const CODE_MAX: i32 = (1 << 23) - 1;
const FULL_SCALE_CODES: f64 = (1u32 << 23) as f64;

pub const SUPPORTED_RATES: [u32; 7] = [250, 500, 1000, 2000, 4000, 8000, 16000];
pub const SUPPORTED_GAINS: [u8; 7] = [1, 2, 4, 6, 8, 12, 24];

pub const DEFAULT_VREF_VOLTS: f64 = 4.5;

/// Electrode labels used when no montage is configured. Channel 0 is the
/// frontal midline site used for detection.
pub const DEFAULT_MONTAGE: [&str; CHANNELS] = ["Fz", "Cz", "Pz", "Fp1", "Fp2", "C3", "C4", "Oz"];

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("malformed frame: expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("channel {channel} code {code} outside signed 24-bit range")]
    CodeRange { channel: usize, code: i32 },
    #[error("status word {0:#x} does not fit in 24 bits")]
    StatusRange(u32),
    #[error("invalid device config: {0}")]
    Config(String),
}

/// Acquisition parameters of the ADC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceConfig {
    pub sample_rate_sps: u32,
    pub gain: u8,
    pub vref_volts: f64,
    pub channel_count: usize,
    /// Free-form annotations (montage, hardware figures). Never interpreted.
    pub metadata: BTreeMap<String, String>,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("montage".to_string(), DEFAULT_MONTAGE.join(","));
        metadata.insert("cmrr_db".to_string(), "120".to_string());
        metadata.insert("internal_noise_uv".to_string(), "0.4".to_string());
        metadata.insert("external_noise_uv".to_string(), "0.8".to_string());
        metadata.insert("snr_db".to_string(), "130".to_string());
        Self {
            sample_rate_sps: 250,
            gain: 24,
            vref_volts: DEFAULT_VREF_VOLTS,
            channel_count: CHANNELS,
            metadata,
        }
    }
}

impl DeviceConfig {
    pub fn new(sample_rate_sps: u32, gain: u8) -> Result<Self, FrameError> {
        let cfg = Self {
            sample_rate_sps,
            gain,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        if !SUPPORTED_RATES.contains(&self.sample_rate_sps) {
            return Err(FrameError::Config(format!(
                "sample rate {} SPS not in {:?}",
                self.sample_rate_sps, SUPPORTED_RATES
            )));
        }
        if !SUPPORTED_GAINS.contains(&self.gain) {
            return Err(FrameError::Config(format!(
                "gain {} not in {:?}",
                self.gain, SUPPORTED_GAINS
            )));
        }
        if self.channel_count != CHANNELS {
            return Err(FrameError::Config(format!(
                "channel count {} (device has {CHANNELS})",
                self.channel_count
            )));
        }
        if !(self.vref_volts > 0.0 && self.vref_volts.is_finite()) {
            return Err(FrameError::Config(format!(
                "reference voltage {} V must be positive",
                self.vref_volts
            )));
        }
        Ok(())
    }

    /// Volts per code step.
    pub fn lsb_volts(&self) -> f64 {
        self.vref_volts / (f64::from(self.gain) * FULL_SCALE_CODES)
    }

    /// Largest representable input magnitude.
    pub fn full_scale_volts(&self) -> f64 {
        self.vref_volts / f64::from(self.gain)
    }

    /// Nanoseconds between consecutive samples, rounded.
    pub fn sample_period_ns(&self) -> u64 {
        1_000_000_000 / u64::from(self.sample_rate_sps)
    }

    /// Timestamp of sample `index` relative to session start.
    pub fn sample_time_ns(&self, index: u64) -> u64 {
        // exact for every supported rate since all divide 1e9
        index * self.sample_period_ns()
    }
}

/// One decoded conversion result.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct RawFrame {
    pub status: u32,
    pub channel_raw: [i32; CHANNELS],
}

impl RawFrame {
    pub fn validate(&self) -> Result<(), FrameError> {
        if self.status > 0x00FF_FFFF {
            return Err(FrameError::StatusRange(self.status));
        }
        for (channel, &code) in self.channel_raw.iter().enumerate() {
            if !(CODE_MIN..=CODE_MAX).contains(&code) {
                return Err(FrameError::CodeRange { channel, code });
            }
        }
        Ok(())
    }

    pub fn to_volts(&self, config: &DeviceConfig) -> [f64; CHANNELS] {
        self.channel_raw.map(|code| raw_to_volts(code, config))
    }
}

/// Decodes one 27-byte frame. Any 27 bytes decode successfully.
pub fn decode_frame(bytes: &[u8]) -> Result<RawFrame, FrameError> {
    let bytes: &[u8; FRAME_LEN] = bytes.try_into().map_err(|_| FrameError::Length {
        expected: FRAME_LEN,
        actual: bytes.len(),
    })?;
    let status = u32::from_be_bytes([0, bytes[0], bytes[1], bytes[2]]);
    let mut channel_raw = [0i32; CHANNELS];
    for (k, code) in channel_raw.iter_mut().enumerate() {
        let b = &bytes[3 + 3 * k..6 + 3 * k];
        // place the 24-bit word in the top of an i32 and shift back to sign-extend
        *code = i32::from_be_bytes([b[0], b[1], b[2], 0]) >> 8;
    }
    Ok(RawFrame {
        status,
        channel_raw,
    })
}

pub fn encode_frame(frame: &RawFrame) -> Result<[u8; FRAME_LEN], FrameError> {
    frame.validate()?;
    let mut out = [0u8; FRAME_LEN];
    out[..3].copy_from_slice(&frame.status.to_be_bytes()[1..]);
    for (k, &code) in frame.channel_raw.iter().enumerate() {
        out[3 + 3 * k..6 + 3 * k].copy_from_slice(&code.to_be_bytes()[1..]);
    }
    Ok(out)
}

/// `code * vref / (gain * 2^23)`.
pub fn raw_to_volts(code: i32, config: &DeviceConfig) -> f64 {
    f64::from(code) * config.vref_volts / (f64::from(config.gain) * FULL_SCALE_CODES)
}

/// Inverse of [`raw_to_volts`]: round to the nearest code, saturating at the
/// ends of the 24-bit range.
pub fn volts_to_raw(volts: f64, config: &DeviceConfig) -> i32 {
    let code = (volts * f64::from(config.gain) * FULL_SCALE_CODES / config.vref_volts).round();
    if code.is_nan() {
        return 0;
    }
    code.clamp(f64::from(CODE_MIN), f64::from(CODE_MAX)) as i32
}

/// One timestamped sample across all channels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleVector {
    pub t_ns: u64,
    pub volts: [f64; CHANNELS],
}

/// A block of consecutive samples handed between pipeline stages.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleChunk {
    pub samples: Vec<SampleVector>,
}

impl SampleChunk {
    pub fn from_frames<'a>(
        frames: impl IntoIterator<Item = (u64, &'a RawFrame)>,
        config: &DeviceConfig,
    ) -> Self {
        Self {
            samples: frames
                .into_iter()
                .map(|(t_ns, f)| SampleVector {
                    t_ns,
                    volts: f.to_volts(config),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
