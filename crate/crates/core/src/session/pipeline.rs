use std::time::Instant;

use crate::actuation::{ActuatorCommand, MockSink, PinSink, PulseLog, PulseScheduler};
use crate::detector::{DetectionEvent, DetectorBank, DetectorConfig, DetectorError};
use crate::dsp::{BandpassFilter, SpectrumAnalyzer, SpectrumFrame, WindowBuffer};
use crate::frame::{raw_to_volts, DeviceConfig, RawFrame};
use crate::protocol::{Ack, SessionStatus};

use super::source::GapMarker;
use super::{SessionConfig, SessionError};

/// Display samples per second sent to observers.
pub const DISPLAY_RATE_HZ: u32 = 50;
const DISPLAY_BATCH: usize = 10;

/// Everything the processing stage tells the outside world.
#[derive(Clone, Debug)]
pub enum Outbound {
    Samples { t0_ns: u64, dt_ns: u64, values_uv: Vec<f64> },
    Spectrum(SpectrumFrame),
    Event(DetectionEvent),
    Pin { command: ActuatorCommand, asserted: bool },
    Gap(GapMarker),
    Status(SessionStatus),
    /// Reply to one control command; `client` routes it to the sender.
    Ack { client: Option<u64>, ack: Ack },
}

pub trait Observer: Send {
    fn publish(&mut self, msg: Outbound);
}

impl Observer for () {
    fn publish(&mut self, _: Outbound) {}
}

impl Observer for Vec<Outbound> {
    fn publish(&mut self, msg: Outbound) {
        self.push(msg);
    }
}

struct Decimator {
    factor: u64,
    dt_ns: u64,
    count: u64,
    t0_ns: u64,
    values: Vec<f64>,
}

impl Decimator {
    fn new(device: &DeviceConfig) -> Self {
        let factor = u64::from(device.sample_rate_sps.div_ceil(DISPLAY_RATE_HZ));
        Self {
            factor,
            dt_ns: device.sample_period_ns() * factor,
            count: 0,
            t0_ns: 0,
            values: Vec::with_capacity(DISPLAY_BATCH),
        }
    }

    fn push(&mut self, t_ns: u64, v: f64) -> Option<Outbound> {
        let keep = self.count % self.factor == 0;
        self.count += 1;
        if !keep {
            return None;
        }
        if self.values.is_empty() {
            self.t0_ns = t_ns;
        }
        self.values.push(v);
        (self.values.len() == DISPLAY_BATCH).then(|| Outbound::Samples {
            t0_ns: self.t0_ns,
            dt_ns: self.dt_ns,
            values_uv: std::mem::replace(&mut self.values, Vec::with_capacity(DISPLAY_BATCH)),
        })
    }
}

/// The processing stage: frame -> filtered sample -> window -> spectrum ->
/// detectors -> pulses. Single owner, no internal threads.
pub struct Pipeline {
    device: DeviceConfig,
    channel: usize,
    rate: f64,
    filter: BandpassFilter,
    windows: WindowBuffer,
    analyzer: SpectrumAnalyzer,
    detectors: DetectorBank,
    scheduler: PulseScheduler,
    sink: MockSink,
    hardware_sink: Option<Box<dyn PinSink + Send>>,
    decimator: Decimator,
    events: Vec<DetectionEvent>,
    /// Wall-clock delay from frame arrival to actuation, per event.
    processing_ns: Vec<u64>,
    frames: u64,
    spectra: u64,
}

impl Pipeline {
    /// `device` is the effective device (a replay file's header may differ
    /// from the configured one).
    pub fn new(config: &SessionConfig, device: &DeviceConfig) -> Result<Self, SessionError> {
        let rate = f64::from(device.sample_rate_sps);
        if config.analysis_channel >= device.channel_count {
            return Err(SessionError::Config(format!("analysis channel {}", config.analysis_channel)));
        }
        Ok(Self {
            device: device.clone(),
            channel: config.analysis_channel,
            rate,
            filter: BandpassFilter::new(&config.filter, rate).map_err(|e| SessionError::Config(e.to_string()))?,
            windows: WindowBuffer::new(config.window).map_err(|e| SessionError::Config(e.to_string()))?,
            analyzer: SpectrumAnalyzer::new(config.window.length_samples, config.window.taper),
            detectors: DetectorBank::new(config.detectors.clone()).map_err(|e| SessionError::Config(e.to_string()))?,
            scheduler: PulseScheduler::new(config.pin_map.clone())?,
            sink: MockSink::new(config.pin_map.clone()),
            hardware_sink: None,
            decimator: Decimator::new(device),
            events: Vec::new(),
            processing_ns: Vec::new(),
            frames: 0,
            spectra: 0,
        })
    }

    pub fn with_hardware_sink(mut self, sink: Box<dyn PinSink + Send>) -> Self {
        self.hardware_sink = Some(sink);
        self
    }

    pub fn device(&self) -> &DeviceConfig {
        &self.device
    }

    pub fn process_chunk(
        &mut self,
        frames: &[(u64, RawFrame)],
        arrived: Instant,
        observer: &mut dyn Observer,
    ) -> Result<(), SessionError> {
        for (t, f) in frames {
            self.process_frame(*t, f, arrived, observer)?;
        }
        Ok(())
    }

    pub fn process_frame(
        &mut self,
        t_ns: u64,
        frame: &RawFrame,
        arrived: Instant,
        observer: &mut dyn Observer,
    ) -> Result<(), SessionError> {
        self.frames += 1;
        for cmd in self.scheduler.advance(t_ns) {
            self.actuate(cmd, observer)?;
        }
        let uv = raw_to_volts(frame.channel_raw[self.channel], &self.device) * 1e6;
        let filtered = self.filter.process_sample(uv);
        if let Some(m) = self.decimator.push(t_ns, filtered) {
            observer.publish(m);
        }
        let Some(window) = self.windows.push(t_ns, filtered)? else {
            return Ok(());
        };
        let spectrum = self.analyzer.analyze(&window.samples, window.t_end_ns, self.rate)?;
        self.spectra += 1;
        let events = self.detectors.evaluate(&spectrum)?;
        observer.publish(Outbound::Spectrum(spectrum));
        for event in events {
            let cmds = self.scheduler.on_event(&event)?;
            observer.publish(Outbound::Event(event.clone()));
            for cmd in cmds {
                self.actuate(cmd, observer)?;
            }
            self.processing_ns.push(arrived.elapsed().as_nanos() as u64);
            self.events.push(event);
        }
        Ok(())
    }

    fn actuate(&mut self, cmd: ActuatorCommand, observer: &mut dyn Observer) -> Result<(), SessionError> {
        self.sink.apply(&cmd)?;
        let asserted = self
            .scheduler
            .pin_map()
            .spec_for_pin(cmd.pin)
            .is_some_and(|s| s.active_level.level(true) == cmd.level);
        if let Some(hw) = self.hardware_sink.as_mut() {
            hw.apply(&cmd)?;
        }
        observer.publish(Outbound::Pin { command: cmd, asserted });
        Ok(())
    }

    /// Releases pins still held at end of stream.
    pub fn finish(&mut self, observer: &mut dyn Observer) -> Result<(), SessionError> {
        for cmd in self.scheduler.flush() {
            self.actuate(cmd, observer)?;
        }
        Ok(())
    }

    /// Clears stream state for a new source, keeping detector configs.
    pub fn restart(&mut self, device: &DeviceConfig, config: &SessionConfig) -> Result<(), SessionError> {
        let detectors: Vec<DetectorConfig> = self.detectors.configs().cloned().collect();
        let hw = self.hardware_sink.take();
        let mut cfg = config.clone();
        cfg.detectors = detectors;
        *self = Pipeline::new(&cfg, device)?;
        self.hardware_sink = hw;
        Ok(())
    }

    pub fn update_detector(&mut self, config: DetectorConfig) -> Result<DetectorConfig, DetectorError> {
        self.detectors.update_config(config)
    }

    pub fn detector(&self, id: &str) -> Option<&DetectorConfig> {
        self.detectors.get(id)
    }

    pub fn detector_configs(&self) -> Vec<DetectorConfig> {
        self.detectors.configs().cloned().collect()
    }

    pub fn events(&self) -> &[DetectionEvent] {
        &self.events
    }

    pub fn processing_ns(&self) -> &[u64] {
        &self.processing_ns
    }

    pub fn pulse_log(&self) -> &PulseLog {
        self.sink.log()
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn spectra(&self) -> u64 {
        self.spectra
    }

    pub fn samples_windowed(&self) -> u64 {
        self.windows.samples_pushed()
    }
}
