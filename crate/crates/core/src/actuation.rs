//! Detection events to output-pin pulses.
//!
//! [`dispatch`] maps one event to an assert/release pair. [`PulseScheduler`]
//! turns a stream of events into a time-ordered command stream in which
//! overlapping pulses on one pin merge into one longer pulse. Commands go to
//! a [`PinSink`]: [`MockSink`] records a checkable pulse log, [`gpio`] drives
//! real header pins.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::DetectionEvent;

pub const DEFAULT_PULSE_MS: u32 = 500;

#[derive(Debug, Error, PartialEq)]
pub enum ActuationError {
    #[error("no pin mapped for detector {0:?}")]
    Unmapped(String),
    #[error("invalid pin map: {0}")]
    PinMap(String),
    #[error("pin {pin}: {msg}")]
    Sequencing { pin: u8, msg: String },
    #[error("pin {0} is not in the active pin map")]
    UnknownPin(u8),
    #[error("gpio: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActiveLevel {
    #[default]
    High,
    Low,
}

impl ActiveLevel {
    pub fn level(self, asserted: bool) -> bool {
        match self {
            ActiveLevel::High => asserted,
            ActiveLevel::Low => !asserted,
        }
    }
}

/// Output for one detector. `pin` uses physical header (board) numbering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinSpec {
    pub pin: u8,
    #[serde(default = "default_pulse_ms")]
    pub pulse_ms: u32,
    #[serde(default)]
    pub active_level: ActiveLevel,
}

fn default_pulse_ms() -> u32 {
    DEFAULT_PULSE_MS
}

impl PinSpec {
    pub fn new(pin: u8) -> Self {
        Self {
            pin,
            pulse_ms: DEFAULT_PULSE_MS,
            active_level: ActiveLevel::High,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PinMap {
    pub entries: BTreeMap<String, PinSpec>,
}

impl Default for PinMap {
    /// bandA drives header pin 31, bandB pin 35.
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert("bandA".to_string(), PinSpec::new(31));
        entries.insert("bandB".to_string(), PinSpec::new(35));
        Self { entries }
    }
}

impl PinMap {
    pub fn validate(&self) -> Result<(), ActuationError> {
        let mut seen = BTreeMap::new();
        for (id, spec) in &self.entries {
            if spec.pulse_ms == 0 {
                return Err(ActuationError::PinMap(format!("{id}: pulse_ms must be > 0")));
            }
            if let Some(other) = seen.insert(spec.pin, id) {
                return Err(ActuationError::PinMap(format!(
                    "pin {} used by both {other} and {id}",
                    spec.pin
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, detector_id: &str) -> Option<&PinSpec> {
        self.entries.get(detector_id)
    }

    pub fn spec_for_pin(&self, pin: u8) -> Option<&PinSpec> {
        self.entries.values().find(|s| s.pin == pin)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActuatorCommand {
    pub pin: u8,
    /// Electrical level to drive.
    pub level: bool,
    pub t_ns: u64,
    pub cause: String,
}

fn pulse_ns(spec: &PinSpec) -> u64 {
    u64::from(spec.pulse_ms) * 1_000_000
}

/// Assert at the event time, release `pulse_ms` later.
pub fn dispatch(
    event: &DetectionEvent,
    map: &PinMap,
) -> Result<(ActuatorCommand, ActuatorCommand), ActuationError> {
    let spec = map
        .get(&event.detector_id)
        .ok_or_else(|| ActuationError::Unmapped(event.detector_id.clone()))?;
    let assert = ActuatorCommand {
        pin: spec.pin,
        level: spec.active_level.level(true),
        t_ns: event.t_ns,
        cause: event.detector_id.clone(),
    };
    let release = ActuatorCommand {
        pin: spec.pin,
        level: spec.active_level.level(false),
        t_ns: event.t_ns + pulse_ns(spec),
        cause: event.detector_id.clone(),
    };
    Ok((assert, release))
}

/// Orders and coalesces pulses. Releases are held back until time moves
/// past them, so a later event on the same pin can still extend the pulse.
#[derive(Clone, Debug)]
pub struct PulseScheduler {
    map: PinMap,
    pending: BTreeMap<u8, ActuatorCommand>,
}

impl PulseScheduler {
    pub fn new(map: PinMap) -> Result<Self, ActuationError> {
        map.validate()?;
        Ok(Self {
            map,
            pending: BTreeMap::new(),
        })
    }

    pub fn pin_map(&self) -> &PinMap {
        &self.map
    }

    /// Releases due at or before `now_ns`, oldest first.
    pub fn advance(&mut self, now_ns: u64) -> Vec<ActuatorCommand> {
        let due: Vec<u8> = self
            .pending
            .iter()
            .filter(|(_, r)| r.t_ns <= now_ns)
            .map(|(&p, _)| p)
            .collect();
        let mut out: Vec<ActuatorCommand> = due.iter().filter_map(|p| self.pending.remove(p)).collect();
        out.sort_by_key(|c| (c.t_ns, c.pin));
        out
    }

    pub fn on_event(&mut self, event: &DetectionEvent) -> Result<Vec<ActuatorCommand>, ActuationError> {
        let (assert, release) = dispatch(event, &self.map)?;
        let mut out = self.advance(event.t_ns);
        match self.pending.get_mut(&assert.pin) {
            Some(open) => {
                if release.t_ns > open.t_ns {
                    open.t_ns = release.t_ns;
                }
            }
            None => {
                self.pending.insert(assert.pin, release);
                out.push(assert);
            }
        }
        Ok(out)
    }

    /// Releases everything still pending.
    pub fn flush(&mut self) -> Vec<ActuatorCommand> {
        self.advance(u64::MAX)
    }

    pub fn is_asserted(&self, pin: u8) -> bool {
        self.pending.contains_key(&pin)
    }
}

pub trait PinSink {
    fn apply(&mut self, command: &ActuatorCommand) -> Result<(), ActuationError>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseInterval {
    pub pin: u8,
    pub assert_ns: u64,
    pub release_ns: u64,
    pub cause: String,
}

impl PulseInterval {
    pub fn duration_ns(&self) -> u64 {
        self.release_ns - self.assert_ns
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseLog {
    pub intervals: Vec<PulseInterval>,
}

impl PulseLog {
    pub fn for_pin(&self, pin: u8) -> impl Iterator<Item = &PulseInterval> {
        self.intervals.iter().filter(move |i| i.pin == pin)
    }

    /// Intervals on `pin` overlapping `[from_ns, to_ns)`.
    pub fn query(&self, pin: u8, from_ns: u64, to_ns: u64) -> Vec<&PulseInterval> {
        self.for_pin(pin)
            .filter(|i| i.assert_ns < to_ns && i.release_ns > from_ns)
            .collect()
    }

    pub fn pins(&self) -> Vec<u8> {
        let mut p: Vec<u8> = self.intervals.iter().map(|i| i.pin).collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    /// `pin,assert_ns,release_ns,cause` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in &self.intervals {
            let _ = writeln!(out, "{},{},{},{}", i.pin, i.assert_ns, i.release_ns, i.cause);
        }
        out
    }
}

/// Records pulses instead of driving hardware.
#[derive(Clone, Debug)]
pub struct MockSink {
    map: PinMap,
    open: BTreeMap<u8, (u64, String)>,
    last_t: BTreeMap<u8, u64>,
    log: PulseLog,
}

impl MockSink {
    pub fn new(map: PinMap) -> Self {
        Self {
            map,
            open: BTreeMap::new(),
            last_t: BTreeMap::new(),
            log: PulseLog::default(),
        }
    }

    pub fn log(&self) -> &PulseLog {
        &self.log
    }

    pub fn into_log(self) -> PulseLog {
        self.log
    }

    pub fn is_asserted(&self, pin: u8) -> bool {
        self.open.contains_key(&pin)
    }
}

impl PinSink for MockSink {
    fn apply(&mut self, cmd: &ActuatorCommand) -> Result<(), ActuationError> {
        let spec = self
            .map
            .spec_for_pin(cmd.pin)
            .ok_or(ActuationError::UnknownPin(cmd.pin))?;
        if let Some(&prev) = self.last_t.get(&cmd.pin) {
            if cmd.t_ns < prev {
                return Err(ActuationError::Sequencing {
                    pin: cmd.pin,
                    msg: format!("command at {} ns after one at {prev} ns", cmd.t_ns),
                });
            }
        }
        self.last_t.insert(cmd.pin, cmd.t_ns);
        let asserting = cmd.level == spec.active_level.level(true);
        if asserting {
            // already high: the pulse simply continues
            self.open.entry(cmd.pin).or_insert((cmd.t_ns, cmd.cause.clone()));
        } else {
            let (assert_ns, cause) = self.open.remove(&cmd.pin).ok_or_else(|| ActuationError::Sequencing {
                pin: cmd.pin,
                msg: format!("release at {} ns before any assert", cmd.t_ns),
            })?;
            self.log.intervals.push(PulseInterval {
                pin: cmd.pin,
                assert_ns,
                release_ns: cmd.t_ns,
                cause,
            });
        }
        Ok(())
    }
}

/// Runs `commands` through a [`MockSink`] and returns the pulse log.
pub fn mock_sink_timeline<'a>(
    commands: impl IntoIterator<Item = &'a ActuatorCommand>,
    map: &PinMap,
) -> Result<PulseLog, ActuationError> {
    let mut sink = MockSink::new(map.clone());
    for c in commands {
        sink.apply(c)?;
    }
    Ok(sink.into_log())
}

/// Linux sysfs GPIO output. Header pins are translated to the SoC line
/// numbers of the 40-pin Raspberry Pi header.
pub mod gpio {
    use std::fs;
    use std::path::PathBuf;

    use super::{ActuationError, ActuatorCommand, PinMap, PinSink};

    /// Header pin to BCM line for the 40-pin connector; `None` for power,
    /// ground and ID EEPROM pins.
    pub fn board_to_bcm(pin: u8) -> Option<u8> {
        const TABLE: [(u8, u8); 26] = [
            (3, 2), (5, 3), (7, 4), (8, 14), (10, 15), (11, 17), (12, 18), (13, 27),
            (15, 22), (16, 23), (18, 24), (19, 10), (21, 9), (22, 25), (23, 11), (24, 8),
            (26, 7), (29, 5), (31, 6), (32, 12), (33, 13), (35, 19), (36, 16), (37, 26),
            (38, 20), (40, 21),
        ];
        TABLE.iter().find(|(b, _)| *b == pin).map(|(_, g)| *g)
    }

    pub struct SysfsGpioSink {
        root: PathBuf,
        lines: Vec<(u8, u8)>,
    }

    impl SysfsGpioSink {
        /// Exports and configures every mapped pin as an output driven to its
        /// inactive level.
        pub fn open(map: &PinMap) -> Result<Self, ActuationError> {
            Self::open_at("/sys/class/gpio", map)
        }

        pub fn open_at(root: impl Into<PathBuf>, map: &PinMap) -> Result<Self, ActuationError> {
            map.validate()?;
            let root = root.into();
            let mut lines = Vec::new();
            for spec in map.entries.values() {
                let bcm = board_to_bcm(spec.pin).ok_or_else(|| {
                    ActuationError::Io(format!("header pin {} is not a GPIO line", spec.pin))
                })?;
                let dir = root.join(format!("gpio{bcm}"));
                if !dir.exists() {
                    write(&root.join("export"), &bcm.to_string())?;
                }
                write(&dir.join("direction"), "out")?;
                write(&dir.join("value"), if spec.active_level.level(false) { "1" } else { "0" })?;
                lines.push((spec.pin, bcm));
            }
            Ok(Self { root, lines })
        }
    }

    fn write(path: &std::path::Path, value: &str) -> Result<(), ActuationError> {
        fs::write(path, value).map_err(|e| ActuationError::Io(format!("{}: {e}", path.display())))
    }

    impl PinSink for SysfsGpioSink {
        fn apply(&mut self, cmd: &ActuatorCommand) -> Result<(), ActuationError> {
            let bcm = self
                .lines
                .iter()
                .find(|(b, _)| *b == cmd.pin)
                .map(|(_, g)| *g)
                .ok_or(ActuationError::UnknownPin(cmd.pin))?;
            let value = if cmd.level { "1" } else { "0" };
            write(&self.root.join(format!("gpio{bcm}/value")), value)
        }
    }
}
