use std::fs::File;
use std::io::{BufReader, ErrorKind, Read};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{Sender, TrySendError};
use serde::{Deserialize, Serialize};

use crate::frame::{decode_frame, DeviceConfig, RawFrame, FRAME_LEN};
use crate::sim::{generate, BlinkLabel, Simulator};

use super::recording::ReplayReader;
use super::{SessionConfig, SessionError, SourceConfig};

/// Marks samples the hardware produced but the pipeline never saw.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapMarker {
    pub after_t_ns: u64,
    pub frames_lost: u64,
    pub reason: String,
}

#[derive(Debug)]
pub enum SourcePacket {
    Frames(Vec<(u64, RawFrame)>),
    Gap(GapMarker),
    Warning(String),
    Failed(SessionError),
}

pub(crate) struct OpenedSource {
    pub device: DeviceConfig,
    pub labels: Vec<BlinkLabel>,
    pub session_id: u64,
    kind: SourceKind,
}

enum SourceKind {
    Simulate { sim: Simulator, speed: f64 },
    Replay { reader: ReplayReader<BufReader<File>>, speed: f64 },
    Hardware { path: PathBuf },
}

/// Opens the configured source. Replay headers are validated here, before
/// any processing starts.
pub(crate) fn open_source(config: &SessionConfig) -> Result<OpenedSource, SessionError> {
    match &config.source {
        SourceConfig::Simulate { duration_s, speed, script, noise } => {
            let sim = generate(*duration_s, &config.device, script, noise)?;
            Ok(OpenedSource {
                device: config.device.clone(),
                labels: sim.labels().to_vec(),
                session_id: config.session_id.unwrap_or(noise.seed),
                kind: SourceKind::Simulate { sim, speed: *speed },
            })
        }
        SourceConfig::Replay { path, speed } => {
            let reader = ReplayReader::open(path)?;
            let header = *reader.header();
            let mut device = header.device_config();
            device.metadata = config.device.metadata.clone();
            Ok(OpenedSource {
                device,
                labels: Vec::new(),
                session_id: config.session_id.unwrap_or(header.session_id),
                kind: SourceKind::Replay { reader, speed: *speed },
            })
        }
        SourceConfig::Hardware { device_path } => {
            if !device_path.exists() {
                return Err(SessionError::Source(format!("{} does not exist", device_path.display())));
            }
            let session_id = config.session_id.unwrap_or_else(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_nanos() as u64)
                    .unwrap_or(0)
            });
            Ok(OpenedSource {
                device: config.device.clone(),
                labels: Vec::new(),
                session_id,
                kind: SourceKind::Hardware { path: device_path.clone() },
            })
        }
    }
}

/// Sleeps so that stream time advances at `speed` times wall time.
struct Pacer {
    speed: f64,
    start: Instant,
    t0_ns: Option<u64>,
}

impl Pacer {
    fn new(speed: f64) -> Self {
        Self { speed, start: Instant::now(), t0_ns: None }
    }

    fn wait_for(&mut self, t_ns: u64) {
        if self.speed <= 0.0 {
            return;
        }
        let t0 = *self.t0_ns.get_or_insert(t_ns);
        let due = self.start + Duration::from_secs_f64((t_ns - t0) as f64 / 1e9 / self.speed);
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
    }
}

fn chunk_len(device: &DeviceConfig, speed: f64) -> usize {
    if speed <= 0.0 {
        512
    } else {
        // 10 ms of stream time per chunk
        (device.sample_rate_sps as usize / 100).max(1)
    }
}

impl OpenedSource {
    pub fn spawn(self, tx: Sender<SourcePacket>, stop: Arc<AtomicBool>) -> JoinHandle<()> {
        thread::Builder::new()
            .name(format!("pieeg-source"))
            .spawn(move || {
                let device = self.device;
                match self.kind {
                    SourceKind::Simulate { sim, speed } => {
                        pump(sim.map(Ok), &device, speed, &tx, &stop);
                    }
                    SourceKind::Replay { mut reader, speed } => {
                        if pump(reader.by_ref(), &device, speed, &tx, &stop) && reader.truncated() {
                            let _ = tx.send(SourcePacket::Warning(format!(
                                "recording truncated after {} complete records",
                                reader.records_read()
                            )));
                        }
                    }
                    SourceKind::Hardware { path } => hardware_loop(&path, &device, &tx, &stop),
                }
            })
            .expect("spawn source thread")
    }
}

/// Forwards frames in chunks with blocking sends. Returns false when stopped
/// early or the receiver went away.
fn pump(
    frames: impl Iterator<Item = Result<(u64, RawFrame), SessionError>>,
    device: &DeviceConfig,
    speed: f64,
    tx: &Sender<SourcePacket>,
    stop: &AtomicBool,
) -> bool {
    let n = chunk_len(device, speed);
    let mut pacer = Pacer::new(speed);
    let mut chunk = Vec::with_capacity(n);
    for item in frames {
        if stop.load(Ordering::Relaxed) {
            return false;
        }
        match item {
            Ok(f) => chunk.push(f),
            Err(e) => {
                if !chunk.is_empty() {
                    let _ = tx.send(SourcePacket::Frames(std::mem::take(&mut chunk)));
                }
                let _ = tx.send(SourcePacket::Failed(e));
                return false;
            }
        }
        if chunk.len() == n {
            pacer.wait_for(chunk[n - 1].0);
            if tx.send(SourcePacket::Frames(std::mem::replace(&mut chunk, Vec::with_capacity(n)))).is_err() {
                return false;
            }
        }
    }
    if let Some(&(t, _)) = chunk.last() {
        pacer.wait_for(t);
        if tx.send(SourcePacket::Frames(chunk)).is_err() {
            return false;
        }
    }
    true
}

/// Reads 27-byte frames from a device node.
///
/// Timestamps follow the sample index, since the ADC clock is the time
/// base. Arrival more than a few periods behind schedule means the device
/// lost samples; the index skips ahead and a gap is reported. A character
/// device cannot be paused, so a full queue drops the chunk and reports an
/// overrun. Regular files and pipes are read with backpressure instead.
fn hardware_loop(path: &std::path::Path, device: &DeviceConfig, tx: &Sender<SourcePacket>, stop: &AtomicBool) {
    let mut input = match File::open(path) {
        Ok(f) => f,
        Err(e) => {
            let _ = tx.send(SourcePacket::Failed(SessionError::Source(format!("{}: {e}", path.display()))));
            return;
        }
    };
    let realtime = is_char_device(&input);
    let start = Instant::now();
    let period = device.sample_period_ns();
    let n = (device.sample_rate_sps as usize / 50).max(1);
    let mut chunk = Vec::with_capacity(n);
    let mut index = 0u64;
    let mut lost = 0u64;
    let mut buf = [0u8; FRAME_LEN];
    while !stop.load(Ordering::Relaxed) {
        match input.read_exact(&mut buf) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => {
                let _ = tx.send(SourcePacket::Failed(SessionError::Source(e.to_string())));
                return;
            }
        }
        let frame = decode_frame(&buf).expect("fixed-size buffer");
        if realtime {
            let behind = (start.elapsed().as_nanos() as u64).saturating_sub(index * period) / period;
            if behind > 3 {
                let _ = tx.try_send(SourcePacket::Gap(GapMarker {
                    after_t_ns: index.saturating_sub(1) * period,
                    frames_lost: behind,
                    reason: "underrun: device dropped samples".into(),
                }));
                index += behind;
            }
        }
        chunk.push((index * period, frame));
        index += 1;
        if chunk.len() < n {
            continue;
        }
        let full = std::mem::replace(&mut chunk, Vec::with_capacity(n));
        if !realtime {
            if tx.send(SourcePacket::Frames(full)).is_err() {
                return;
            }
            continue;
        }
        match tx.try_send(SourcePacket::Frames(full)) {
            Ok(()) if lost > 0 => {
                let _ = tx.try_send(SourcePacket::Gap(overrun(index, period, lost)));
                lost = 0;
            }
            Ok(()) => {}
            Err(TrySendError::Full(SourcePacket::Frames(dropped))) => lost += dropped.len() as u64,
            Err(_) => return,
        }
    }
    if !chunk.is_empty() {
        let _ = tx.send(SourcePacket::Frames(chunk));
    }
    if lost > 0 {
        let _ = tx.send(SourcePacket::Gap(overrun(index, period, lost)));
    }
}

fn overrun(index: u64, period: u64, lost: u64) -> GapMarker {
    GapMarker {
        after_t_ns: index.saturating_sub(1) * period,
        frames_lost: lost,
        reason: "overrun: processing queue full".into(),
    }
}

#[cfg(unix)]
fn is_char_device(f: &File) -> bool {
    use std::os::unix::fs::FileTypeExt;
    f.metadata().is_ok_and(|m| m.file_type().is_char_device())
}

#[cfg(not(unix))]
fn is_char_device(_: &File) -> bool {
    false
}
