//! Deterministic synthetic EEG with scripted blink artifacts.
//!
//! Each blink is a raised-cosine (Hann) pulse added to every channel with a
//! per-channel gain, on top of white noise, Voss–McCartney pink noise and an
//! optional mains tone. The result is quantized through the ADC transfer
//! function, so downstream stages see exactly what a recording would hold.
//! Ground-truth onsets are returned separately and never touch the frames.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{volts_to_raw, DeviceConfig, FrameError, RawFrame, CHANNELS};

/// Blink-to-channel coupling used when a script does not say otherwise.
/// Frontal sites pick up the ocular artifact strongest.
pub const DEFAULT_CHANNEL_GAINS: [f64; CHANNELS] = [1.0, 0.6, 0.3, 1.5, 1.5, 0.5, 0.5, 0.1];

/// Shortest blink the rate generator will produce.
pub const MIN_BLINK_DURATION_S: f64 = 0.1;
pub const MAX_BLINK_DURATION_S: f64 = 0.3;

const PINK_ROWS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid blink script: {0}")]
    Script(String),
    #[error("blink onsets at or beyond the {duration_s} s simulation: {onsets:?}")]
    BeyondDuration { duration_s: f64, onsets: Vec<f64> },
    #[error("invalid noise model: {0}")]
    Noise(String),
    #[error("blink rate {0} Hz is physically implausible (max 8 Hz)")]
    Rate(f64),
    #[error("script line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Device(#[from] FrameError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlinkEvent {
    pub onset_s: f64,
    pub duration_s: f64,
    pub amplitude_uv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlinkScript {
    pub events: Vec<BlinkEvent>,
    pub channel_gains: [f64; CHANNELS],
}

impl Default for BlinkScript {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl BlinkScript {
    pub fn new(events: Vec<BlinkEvent>) -> Self {
        Self {
            events,
            channel_gains: DEFAULT_CHANNEL_GAINS,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for pair in self.events.windows(2) {
            if pair[1].onset_s <= pair[0].onset_s {
                return Err(SimError::Script(format!(
                    "onsets must be strictly increasing ({} then {})",
                    pair[0].onset_s, pair[1].onset_s
                )));
            }
        }
        for e in &self.events {
            if !(e.onset_s >= 0.0 && e.onset_s.is_finite()) {
                return Err(SimError::Script(format!("onset {} s is negative", e.onset_s)));
            }
            if !(e.duration_s > 0.0 && e.duration_s.is_finite()) {
                return Err(SimError::Script(format!(
                    "duration {} s at onset {} s must be positive",
                    e.duration_s, e.onset_s
                )));
            }
            if !(e.amplitude_uv >= 0.0 && e.amplitude_uv.is_finite()) {
                return Err(SimError::Script(format!(
                    "amplitude {} uV at onset {} s must be non-negative",
                    e.amplitude_uv, e.onset_s
                )));
            }
        }
        if let Some(g) = self.channel_gains.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
            return Err(SimError::Script(format!("channel gain {g} must be non-negative")));
        }
        Ok(())
    }

    /// Concatenates two scripts, keeping onsets sorted. Channel gains come from `self`.
    pub fn merged(&self, other: &BlinkScript) -> BlinkScript {
        let mut events: Vec<BlinkEvent> = self.events.iter().chain(&other.events).copied().collect();
        events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
        BlinkScript {
            events,
            channel_gains: self.channel_gains,
        }
    }

    /// Parses `onset_s,duration_s,amplitude_uv` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<BlinkScript, SimError> {
        let mut events = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(SimError::Parse {
                    line: idx + 1,
                    msg: format!("expected 3 comma-separated fields, got {}", fields.len()),
                });
            }
            let mut vals = [0.0; 3];
            for (v, f) in vals.iter_mut().zip(&fields) {
                *v = f.parse().map_err(|_| SimError::Parse {
                    line: idx + 1,
                    msg: format!("not a number: {f:?}"),
                })?;
            }
            events.push(BlinkEvent {
                onset_s: vals[0],
                duration_s: vals[1],
                amplitude_uv: vals[2],
            });
        }
        let script = BlinkScript::new(events);
        script.validate()?;
        Ok(script)
    }

    pub fn to_text(&self) -> String {
        format_events(&self.events)
    }
}

pub fn format_events(events: &[BlinkEvent]) -> String {
    let mut out = String::from("# onset_s,duration_s,amplitude_uv\n");
    for e in events {
        let _ = writeln!(out, "{},{},{}", e.onset_s, e.duration_s, e.amplitude_uv);
    }
    out
}

/// Blinks performed deliberately at a fixed rate.
///
/// Each blink lasts `min(0.3 s, 0.8 / rate)`; rates above 8 Hz would need
/// blinks shorter than 0.1 s and are rejected.
pub fn blink_rate_script(
    rate_hz: f64,
    count: usize,
    start_s: f64,
    amplitude_uv: f64,
) -> Result<BlinkScript, SimError> {
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(SimError::Script(format!("rate {rate_hz} Hz must be positive")));
    }
    if count == 0 {
        return Err(SimError::Script("blink count must be at least 1".into()));
    }
    let duration_s = MAX_BLINK_DURATION_S.min(0.8 / rate_hz);
    if duration_s < MIN_BLINK_DURATION_S - 1e-12 {
        return Err(SimError::Rate(rate_hz));
    }
    let events = (0..count)
        .map(|i| BlinkEvent {
            onset_s: start_s + i as f64 / rate_hz,
            duration_s,
            amplitude_uv,
        })
        .collect();
    let script = BlinkScript::new(events);
    script.validate()?;
    Ok(script)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub white_rms_uv: f64,
    pub pink_rms_uv: f64,
    /// 0 disables the mains term.
    pub mains_hz: f64,
    pub mains_amplitude_uv: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            white_rms_uv: 0.8,
            pink_rms_uv: 2.0,
            mains_hz: 0.0,
            mains_amplitude_uv: 0.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn silent() -> Self {
        Self {
            white_rms_uv: 0.0,
            pink_rms_uv: 0.0,
            mains_hz: 0.0,
            mains_amplitude_uv: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("white_rms_uv", self.white_rms_uv),
            ("pink_rms_uv", self.pink_rms_uv),
            ("mains_amplitude_uv", self.mains_amplitude_uv),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::Noise(format!("{name} = {v} must be non-negative")));
            }
        }
        if ![0.0, 50.0, 60.0].contains(&self.mains_hz) {
            return Err(SimError::Noise(format!(
                "mains_hz = {} must be 0, 50 or 60",
                self.mains_hz
            )));
        }
        Ok(())
    }
}

/// Ground truth for one scripted blink.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlinkLabel {
    pub onset_sample: u64,
    pub onset_ns: u64,
    pub event: BlinkEvent,
}

impl BlinkLabel {
    pub fn end_ns(&self) -> u64 {
        self.onset_ns + (self.event.duration_s * 1e9).round() as u64
    }
}

/// Pre-computed sample geometry of one pulse.
#[derive(Clone, Copy, Debug)]
struct Pulse {
    center: f64,
    half_width: f64,
    amplitude_volts: f64,
}

impl Pulse {
    fn first_sample(&self) -> u64 {
        (self.center - self.half_width).ceil().max(0.0) as u64
    }

    fn last_sample(&self) -> u64 {
        (self.center + self.half_width).floor().max(0.0) as u64
    }

    fn value(&self, n: u64) -> f64 {
        let x = (n as f64 - self.center) / self.half_width;
        if x.abs() > 1.0 {
            0.0
        } else {
            self.amplitude_volts * 0.5 * (1.0 + (PI * x).cos())
        }
    }
}

struct ChannelNoise {
    rng: ChaCha8Rng,
    rows: [f64; PINK_ROWS],
    row_sum: f64,
}

impl ChannelNoise {
    fn new(seed: u64, channel: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(channel as u64);
        let mut rows = [0.0; PINK_ROWS];
        for r in rows.iter_mut() {
            *r = rng.sample(StandardNormal);
        }
        let row_sum = rows.iter().sum();
        Self { rng, rows, row_sum }
    }

    /// Voss–McCartney: row k is redrawn every 2^k samples, plus one fresh
    /// white term. Unit variance after scaling.
    fn pink(&mut self, n: u64) -> f64 {
        let k = (n.trailing_zeros() as usize).min(PINK_ROWS - 1);
        let fresh: f64 = self.rng.sample(StandardNormal);
        self.row_sum += fresh - self.rows[k];
        self.rows[k] = fresh;
        let white: f64 = self.rng.sample(StandardNormal);
        (self.row_sum + white) / ((PINK_ROWS + 1) as f64).sqrt()
    }

    fn white(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

/// Pull-based frame source. Yields `(t_ns, frame)` pairs.
pub struct Simulator {
    device: DeviceConfig,
    gains: [f64; CHANNELS],
    noise: NoiseModel,
    pulses: Vec<Pulse>,
    labels: Vec<BlinkLabel>,
    channel_noise: Vec<ChannelNoise>,
    next_pulse: usize,
    index: u64,
    total: u64,
}

/// Ground-truth labels for `script` on a stream whose first sample is at
/// `t0_ns`. Onsets snap to the nearest sample.
pub fn label_script(script: &BlinkScript, device: &DeviceConfig, t0_ns: u64) -> Vec<BlinkLabel> {
    let rate = f64::from(device.sample_rate_sps);
    script
        .events
        .iter()
        .map(|e| {
            let onset_sample = (e.onset_s * rate).round() as u64;
            BlinkLabel {
                onset_sample,
                onset_ns: t0_ns + device.sample_time_ns(onset_sample),
                event: *e,
            }
        })
        .collect()
}

/// Builds a simulator for `duration_s` seconds of data.
pub fn generate(
    duration_s: f64,
    device: &DeviceConfig,
    script: &BlinkScript,
    noise: &NoiseModel,
) -> Result<Simulator, SimError> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(SimError::Script(format!("duration {duration_s} s must be positive")));
    }
    device.validate()?;
    script.validate()?;
    noise.validate()?;
    let late: Vec<f64> = script
        .events
        .iter()
        .map(|e| e.onset_s)
        .filter(|&o| o >= duration_s)
        .collect();
    if !late.is_empty() {
        return Err(SimError::BeyondDuration {
            duration_s,
            onsets: late,
        });
    }

    let rate = f64::from(device.sample_rate_sps);
    // Pulse centers sit on the sample grid so the scripted peak is always sampled.
    let pulses = script
        .events
        .iter()
        .map(|e| Pulse {
            center: ((e.onset_s + e.duration_s / 2.0) * rate).round(),
            half_width: e.duration_s * rate / 2.0,
            amplitude_volts: e.amplitude_uv * 1e-6,
        })
        .collect();
    let labels = label_script(script, device, 0);
    let channel_noise = (0..CHANNELS).map(|c| ChannelNoise::new(noise.seed, c)).collect();

    Ok(Simulator {
        device: device.clone(),
        gains: script.channel_gains,
        noise: *noise,
        pulses,
        labels,
        channel_noise,
        next_pulse: 0,
        index: 0,
        total: (duration_s * rate).round() as u64,
    })
}

impl Simulator {
    pub fn labels(&self) -> &[BlinkLabel] {
        &self.labels
    }

    pub fn device(&self) -> &DeviceConfig {
        &self.device
    }

    pub fn frame_count(&self) -> u64 {
        self.total
    }

    fn blink_volts(&mut self, n: u64) -> f64 {
        while self.next_pulse < self.pulses.len() && self.pulses[self.next_pulse].last_sample() < n {
            self.next_pulse += 1;
        }
        self.pulses[self.next_pulse..]
            .iter()
            .take_while(|p| p.first_sample() <= n)
            .map(|p| p.value(n))
            .sum()
    }
}

impl Iterator for Simulator {
    type Item = (u64, RawFrame);

    fn next(&mut self) -> Option<Self::Item> {
        if self.index >= self.total {
            return None;
        }
        let n = self.index;
        self.index += 1;
        let t_ns = self.device.sample_time_ns(n);
        let blink = self.blink_volts(n);
        let mains = if self.noise.mains_hz > 0.0 {
            let t = n as f64 / f64::from(self.device.sample_rate_sps);
            self.noise.mains_amplitude_uv * 1e-6 * (2.0 * PI * self.noise.mains_hz * t).sin()
        } else {
            0.0
        };
        let mut frame = RawFrame::default();
        for (c, code) in frame.channel_raw.iter_mut().enumerate() {
            let noise = &mut self.channel_noise[c];
            let white = noise.white() * self.noise.white_rms_uv;
            let pink = noise.pink(n) * self.noise.pink_rms_uv;
            let v = blink * self.gains[c] + (white + pink) * 1e-6 + mains;
            *code = volts_to_raw(v, &self.device);
        }
        Some((t_ns, frame))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.total - self.index) as usize;
        (left, Some(left))
    }
}
