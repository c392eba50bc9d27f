use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Instant;

use crossbeam_channel::{bounded, never, select, unbounded, Receiver, Sender};

use crate::actuation::PinSink;
use crate::detector::DetectorConfig;
use crate::protocol::{Ack, ControlCommand, SessionStatus};
use crate::sim::BlinkLabel;

use super::latency::{score_detections, LatencyReport, FALSE_MARGIN_NS, MATCH_WINDOW_NS};
use super::pipeline::{Observer, Outbound, Pipeline};
use super::recording::{Recorder, RecordingHeader};
use super::source::{open_source, GapMarker, SourcePacket};
use super::{SessionConfig, SessionError, SessionSummary};

/// Packets in flight between the source thread and processing.
const QUEUE_DEPTH: usize = 64;

#[derive(Default)]
pub struct RunOptions {
    /// Set to end the run early, e.g. from a signal handler.
    pub stop: Option<Arc<AtomicBool>>,
    /// Drives real pins in addition to the pulse log.
    pub hardware_sink: Option<Box<dyn PinSink + Send>>,
}

/// Runs `config` to the end of its source and returns what happened.
pub fn run(config: &SessionConfig) -> Result<SessionSummary, SessionError> {
    run_with(config, &mut (), RunOptions::default())
}

pub fn run_with(
    config: &SessionConfig,
    observer: &mut dyn Observer,
    opts: RunOptions,
) -> Result<SessionSummary, SessionError> {
    config.validate()?;
    let started = Instant::now();
    let stop = opts.stop.unwrap_or_default();
    let mut stream = Stream::open(config, stop, opts.hardware_sink)?;
    let mut failure = None;
    while let Ok(packet) = stream.rx.recv() {
        if let Err(e) = stream.handle(packet, observer) {
            failure = Some(e);
            break;
        }
    }
    let summary = stream.close(observer, started);
    match failure {
        Some(e) => Err(e),
        None => summary,
    }
}

/// One source feeding one pipeline, with an optional recorder tee.
struct Stream {
    rx: Receiver<SourcePacket>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    pipeline: Pipeline,
    recorder: Option<Recorder<std::fs::File>>,
    labels: Vec<BlinkLabel>,
    gaps: Vec<GapMarker>,
    warnings: Vec<String>,
}

impl Stream {
    fn open(
        config: &SessionConfig,
        stop: Arc<AtomicBool>,
        hardware_sink: Option<Box<dyn PinSink + Send>>,
    ) -> Result<Self, SessionError> {
        let source = open_source(config)?;
        let mut pipeline = Pipeline::new(config, &source.device)?;
        if let Some(sink) = hardware_sink {
            pipeline = pipeline.with_hardware_sink(sink);
        }
        let recorder = match &config.record_path {
            Some(path) => Some(Recorder::create(
                path,
                RecordingHeader::for_device(&source.device, source.session_id),
            )?),
            None => None,
        };
        let labels = source.labels.clone();
        let (tx, rx) = bounded(QUEUE_DEPTH);
        let thread = source.spawn(tx, stop.clone());
        Ok(Self {
            rx,
            stop,
            thread: Some(thread),
            pipeline,
            recorder,
            labels,
            gaps: Vec::new(),
            warnings: Vec::new(),
        })
    }

    fn handle(&mut self, packet: SourcePacket, observer: &mut dyn Observer) -> Result<(), SessionError> {
        match packet {
            SourcePacket::Frames(frames) => {
                let arrived = Instant::now();
                if let Some(rec) = self.recorder.as_mut() {
                    for (t, f) in &frames {
                        rec.write_frame(*t, f)?;
                    }
                }
                self.pipeline.process_chunk(&frames, arrived, observer)
            }
            SourcePacket::Gap(gap) => {
                log::warn!("{} frames lost after t={} ns: {}", gap.frames_lost, gap.after_t_ns, gap.reason);
                observer.publish(Outbound::Gap(gap.clone()));
                self.gaps.push(gap);
                Ok(())
            }
            SourcePacket::Warning(w) => {
                log::warn!("{w}");
                self.warnings.push(w);
                Ok(())
            }
            SourcePacket::Failed(e) => Err(e),
        }
    }

    /// Stops the source, drains what it already produced and finalises.
    fn close(mut self, observer: &mut dyn Observer, started: Instant) -> Result<SessionSummary, SessionError> {
        self.stop.store(true, Ordering::Relaxed);
        let mut first_err = None;
        while let Ok(packet) = self.rx.try_recv() {
            if first_err.is_none() {
                if let Err(e) = self.handle(packet, observer) {
                    first_err = Some(e);
                }
            }
        }
        // Unblock a sender waiting on a full queue before joining.
        let rx = std::mem::replace(&mut self.rx, never());
        drop(rx);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        self.pipeline.finish(observer)?;
        if let Some(rec) = self.recorder.take() {
            rec.finish()?;
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        Ok(self.summary(started))
    }

    fn summary(&self, started: Instant) -> SessionSummary {
        let events = self.pipeline.events().to_vec();
        let mut events_per_detector = std::collections::BTreeMap::new();
        for d in self.pipeline.detector_configs() {
            events_per_detector.insert(d.detector_id.clone(), 0);
        }
        for e in &events {
            *events_per_detector.entry(e.detector_id.clone()).or_insert(0) += 1;
        }
        let latency = if self.labels.is_empty() {
            None
        } else {
            let entries = events_per_detector
                .keys()
                .flat_map(|id| {
                    score_detections(
                        &self.labels,
                        &events,
                        self.pipeline.processing_ns(),
                        id,
                        MATCH_WINDOW_NS,
                        FALSE_MARGIN_NS,
                    )
                    .matched
                })
                .collect();
            LatencyReport::from_entries(entries)
        };
        SessionSummary {
            frames: self.pipeline.frames(),
            windows: self.pipeline.spectra(),
            events,
            events_per_detector,
            pulse_log: self.pipeline.pulse_log().clone(),
            labels: self.labels.clone(),
            latency,
            gaps: self.gaps.clone(),
            warnings: self.warnings.clone(),
            wall_time: started.elapsed(),
        }
    }
}

/// A control command on its way to a live session.
pub struct ControlRequest {
    pub command: ControlCommand,
    /// Connection that sent it; the ack is routed back there.
    pub client: Option<u64>,
    pub reply: Option<Sender<ControlReply>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlReply {
    pub cmd_seq: u64,
    pub result: Result<Option<DetectorConfig>, String>,
}

/// A session running on its own thread, steered by control commands.
pub struct LiveHandle {
    control: Sender<ControlRequest>,
    thread: JoinHandle<Result<Option<SessionSummary>, SessionError>>,
}

impl LiveHandle {
    pub fn control(&self) -> Sender<ControlRequest> {
        self.control.clone()
    }

    /// Sends a command and waits for its reply.
    pub fn command(&self, command: ControlCommand) -> Result<ControlReply, SessionError> {
        let (tx, rx) = bounded(1);
        self.control
            .send(ControlRequest { command, client: None, reply: Some(tx) })
            .map_err(|_| SessionError::Source("live session has ended".into()))?;
        rx.recv().map_err(|_| SessionError::Source("live session has ended".into()))
    }

    /// Ends the session once every other control sender is gone too. Returns
    /// the summary of the most recent stream, if any ran.
    pub fn shutdown(self) -> Result<Option<SessionSummary>, SessionError> {
        drop(self.control);
        self.thread.join().map_err(|_| SessionError::Source("live session panicked".into()))?
    }
}

/// Starts a live session. The stream begins immediately; `stop`, `start`
/// and `select_source` commands manage it afterwards.
pub fn spawn_live(
    config: SessionConfig,
    observer: Box<dyn Observer>,
    hardware_sink: Option<Box<dyn PinSink + Send>>,
) -> Result<LiveHandle, SessionError> {
    config.validate()?;
    let (control_tx, control_rx) = unbounded();
    let mut live = Live {
        config,
        observer,
        hardware_sink,
        stream: None,
        started: Instant::now(),
        control_seq: 0,
        last_summary: None,
    };
    live.start()?;
    let thread = thread::Builder::new()
        .name("pieeg-live".into())
        .spawn(move || live.run(control_rx))
        .expect("spawn live session thread");
    Ok(LiveHandle { control: control_tx, thread })
}

struct Live {
    config: SessionConfig,
    observer: Box<dyn Observer>,
    /// Handed to the first stream only; hardware pins stay with it.
    hardware_sink: Option<Box<dyn PinSink + Send>>,
    stream: Option<Stream>,
    started: Instant,
    control_seq: u64,
    last_summary: Option<SessionSummary>,
}

impl Live {
    fn status(&self) -> SessionStatus {
        SessionStatus {
            running: self.stream.is_some(),
            control_seq: self.control_seq,
            config: self.config.clone(),
        }
    }

    fn publish_status(&mut self) {
        let s = self.status();
        self.observer.publish(Outbound::Status(s));
    }

    fn start(&mut self) -> Result<(), SessionError> {
        if self.stream.is_some() {
            return Ok(());
        }
        self.started = Instant::now();
        let stream = Stream::open(&self.config, Arc::default(), self.hardware_sink.take())?;
        self.stream = Some(stream);
        self.publish_status();
        Ok(())
    }

    fn stop(&mut self) -> Result<(), SessionError> {
        let Some(stream) = self.stream.take() else {
            return Ok(());
        };
        let result = stream.close(self.observer.as_mut(), self.started);
        self.publish_status();
        self.last_summary = Some(result?);
        Ok(())
    }

    fn run(mut self, control: Receiver<ControlRequest>) -> Result<Option<SessionSummary>, SessionError> {
        loop {
            let source = self.stream.as_ref().map_or_else(never, |s| s.rx.clone());
            select! {
                recv(source) -> packet => match packet {
                    Ok(p) => {
                        let stream = self.stream.as_mut().expect("stream present while receiving");
                        if let Err(e) = stream.handle(p, self.observer.as_mut()) {
                            log::error!("stream failed: {e}");
                            let _ = self.stop();
                        }
                    }
                    // Source finished on its own.
                    Err(_) => {
                        if let Err(e) = self.stop() {
                            log::error!("stream failed: {e}");
                        }
                    }
                },
                recv(control) -> req => match req {
                    Ok(req) => self.on_control(req),
                    Err(_) => break,
                },
            }
        }
        self.stop()?;
        Ok(self.last_summary)
    }

    fn on_control(&mut self, req: ControlRequest) {
        self.control_seq += 1;
        let cmd_seq = self.control_seq;
        let result = self.apply(&req.command);
        if let Err(reason) = &result {
            log::info!("control #{cmd_seq} rejected: {reason}");
        }
        let ack = Ack {
            cmd_seq,
            ok: result.is_ok(),
            reason: result.as_ref().err().cloned(),
            config: result.as_ref().ok().cloned().flatten(),
        };
        self.observer.publish(Outbound::Ack { client: req.client, ack });
        self.publish_status();
        if let Some(reply) = req.reply {
            let _ = reply.send(ControlReply { cmd_seq, result });
        }
    }

    fn apply(&mut self, command: &ControlCommand) -> Result<Option<DetectorConfig>, String> {
        if let Some(id) = command.detector_id() {
            let current = self
                .config
                .detectors
                .iter()
                .find(|d| d.detector_id == id)
                .ok_or_else(|| format!("unknown detector {id}"))?;
            let updated = command.apply_to(current);
            updated.validate().map_err(|e| e.to_string())?;
            let rate = f64::from(self.config.device.sample_rate_sps);
            if updated.band_high_hz > rate / 2.0 {
                return Err(format!("band high {} Hz above Nyquist {} Hz", updated.band_high_hz, rate / 2.0));
            }
            if let Some(stream) = self.stream.as_mut() {
                stream.pipeline.update_detector(updated.clone()).map_err(|e| e.to_string())?;
            }
            *self.config.detector_mut(id).expect("found above") = updated.clone();
            return Ok(Some(updated));
        }
        match command {
            ControlCommand::Start => self.start().map_err(|e| e.to_string())?,
            ControlCommand::Stop => self.stop().map_err(|e| e.to_string())?,
            ControlCommand::SelectSource { source } => {
                let mut next = self.config.clone();
                next.source = source.clone();
                next.validate().map_err(|e| e.to_string())?;
                let was_running = self.stream.is_some();
                self.stop().map_err(|e| e.to_string())?;
                self.config = next;
                if was_running {
                    self.start().map_err(|e| e.to_string())?;
                }
            }
            _ => unreachable!("detector commands handled above"),
        }
        Ok(None)
    }
}
