use std::fs;
use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use pieeg_core::protocol::ControlCommand;
use pieeg_core::session::{
    self, record, run_with, spawn_live, standard, Observer, Outbound, RunOptions, SessionConfig, SessionError,
    SourceConfig,
};
use pieeg_core::sim::{generate, BlinkScript, NoiseModel};
use pieeg_core::{DetectorConfig, DeviceConfig};

fn calibrated(seed: u64) -> SessionConfig {
    standard::calibrate_config(standard::standard_config(seed, false), seed + 500, 0.5)
        .unwrap()
        .0
}

fn write_recording(dir: &tempfile::TempDir, seconds: f64, seed: u64) -> std::path::PathBuf {
    let path = dir.path().join(format!("rec-{seed}.pieeg"));
    let device = DeviceConfig::default();
    let frames: Vec<_> = generate(seconds, &device, &BlinkScript::default(), &NoiseModel::default().with_seed(seed))
        .unwrap()
        .collect();
    record(frames.iter().map(|(t, f)| (*t, f)), &device, seed, &path).unwrap();
    path
}

#[test]
fn standard_run_reports_events_pulses_and_latency() {
    let config = calibrated(3);
    let s = session::run(&config).unwrap();
    assert_eq!(s.frames, 5000);
    assert_eq!(s.labels.len(), 10);
    assert!(s.events_per_detector["bandA"] >= 8);
    assert!(s.events_per_detector["bandB"] >= 8);
    assert_eq!(s.pulse_log.intervals.len(), s.events.len());
    let lat = s.latency.unwrap();
    assert!(lat.median_s <= 1.0 && lat.max_s <= 1.5, "{lat:?}");
    for e in &lat.entries {
        assert!(e.actuation_assert_ns >= e.event_t_ns);
    }
    assert!(s.gaps.is_empty() && s.warnings.is_empty());
}

#[test]
fn quiet_simulation_with_high_threshold_is_silent() {
    let mut config = SessionConfig::default();
    config.source = SourceConfig::Simulate {
        duration_s: 1.0,
        speed: 0.0,
        script: BlinkScript::default(),
        noise: NoiseModel::default(),
    };
    for d in &mut config.detectors {
        *d = d.clone().calibrated(1e6);
    }
    let s = session::run(&config).unwrap();
    assert!(s.events.is_empty());
    assert!(s.pulse_log.intervals.is_empty());
    assert!(s.latency.is_none());
}

#[test]
fn record_while_running_then_replay_matches() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("live.pieeg");
    let mut config = calibrated(8);
    config.record_path = Some(path.clone());
    let live = session::run(&config).unwrap();
    assert_eq!(fs::metadata(&path).unwrap().len(), 32 + 44 * live.frames);

    config.record_path = None;
    config.source = SourceConfig::Replay { path, speed: 0.0 };
    let replay = session::run(&config).unwrap();
    assert_eq!(live.event_log_text(), replay.event_log_text());
    assert_eq!(live.pulse_log, replay.pulse_log);
    assert!(replay.labels.is_empty() && replay.latency.is_none());
}

#[test]
fn replay_header_overrides_configured_device() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("500.pieeg");
    let device = DeviceConfig::new(500, 12).unwrap();
    let frames: Vec<_> = generate(2.0, &device, &BlinkScript::default(), &NoiseModel::silent()).unwrap().collect();
    record(frames.iter().map(|(t, f)| (*t, f)), &device, 1, &path).unwrap();
    let mut config = SessionConfig::default();
    config.source = SourceConfig::Replay { path, speed: 0.0 };
    let s = session::run(&config).unwrap();
    assert_eq!(s.frames, 1000);
}

#[test]
fn speed_one_paces_at_recorded_rate() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_recording(&dir, 2.0, 1);
    let mut config = SessionConfig::default();
    config.source = SourceConfig::Replay { path, speed: 1.0 };
    let started = Instant::now();
    let s = session::run(&config).unwrap();
    let wall = started.elapsed().as_secs_f64();
    // Last frame is at 1.996 s; allowance is 10 ms per second of stream.
    let stream_s = 1.996;
    assert_eq!(s.frames, 500);
    assert!((wall - stream_s).abs() <= 0.010 * stream_s + 0.010, "wall {wall:.4} s");
}

#[test]
fn speed_zero_is_much_faster_than_real_time() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_recording(&dir, 60.0, 2);
    let mut config = SessionConfig::default();
    config.source = SourceConfig::Replay { path, speed: 0.0 };
    let started = Instant::now();
    let s = session::run(&config).unwrap();
    assert_eq!(s.frames, 15_000);
    assert!(started.elapsed() < Duration::from_secs(6));
}

#[test]
fn wrong_magic_fails_before_any_frame() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_recording(&dir, 1.0, 3);
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, bytes).unwrap();
    let mut config = SessionConfig::default();
    config.source = SourceConfig::Replay { path, speed: 0.0 };
    let mut seen: Vec<Outbound> = Vec::new();
    let err = run_with(&config, &mut seen, RunOptions::default()).unwrap_err();
    assert!(matches!(err, SessionError::Format(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert!(seen.is_empty());
}

#[test]
fn truncated_recording_replays_prefix_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_recording(&dir, 1.0, 4);
    let mut f = fs::OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(&[0u8; 20]).unwrap();
    drop(f);
    let mut config = SessionConfig::default();
    config.source = SourceConfig::Replay { path, speed: 0.0 };
    let s = session::run(&config).unwrap();
    assert_eq!(s.frames, 250);
    assert_eq!(s.warnings.len(), 1, "{:?}", s.warnings);
}

#[test]
fn stop_flag_ends_a_paced_run_early() {
    let mut config = SessionConfig::default();
    config.source = SourceConfig::Simulate {
        duration_s: 30.0,
        speed: 1.0,
        script: BlinkScript::default(),
        noise: NoiseModel::default(),
    };
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let t = std::thread::spawn(move || {
        std::thread::sleep(Duration::from_millis(300));
        flag.store(true, Ordering::Relaxed);
    });
    let started = Instant::now();
    let s = run_with(&config, &mut (), RunOptions { stop: Some(stop), ..RunOptions::default() }).unwrap();
    t.join().unwrap();
    assert!(started.elapsed() < Duration::from_secs(3));
    assert!(s.frames > 0 && s.frames < 7500);
}

#[test]
fn display_stream_is_decimated_and_bounded() {
    let config = calibrated(5);
    let mut out: Vec<Outbound> = Vec::new();
    run_with(&config, &mut out, RunOptions::default()).unwrap();
    let points: usize = out
        .iter()
        .filter_map(|m| match m {
            Outbound::Samples { values_uv, .. } => Some(values_uv.len()),
            _ => None,
        })
        .sum();
    // 20 s at 50 points per second
    assert_eq!(points, 1000);
    let events = out.iter().filter(|m| matches!(m, Outbound::Event(_))).count();
    let pins = out.iter().filter(|m| matches!(m, Outbound::Pin { .. })).count();
    assert_eq!(pins, 2 * events);
}

#[derive(Clone, Default)]
struct Shared(Arc<Mutex<Vec<Outbound>>>);

impl Observer for Shared {
    fn publish(&mut self, msg: Outbound) {
        self.0.lock().unwrap().push(msg);
    }
}

fn slow_source(seconds: f64) -> SourceConfig {
    SourceConfig::Simulate {
        duration_s: seconds,
        speed: 1.0,
        script: standard::standard_script(),
        noise: NoiseModel::default(),
    }
}

#[test]
fn live_session_applies_and_rejects_commands() {
    let mut config = SessionConfig::default();
    config.source = slow_source(60.0);
    let seen = Shared::default();
    let live = spawn_live(config, Box::new(seen.clone()), None).unwrap();

    let r = live
        .command(ControlCommand::SetThreshold { detector_id: "bandA".into(), threshold_uv: 100.0 })
        .unwrap();
    assert_eq!(r.cmd_seq, 1);
    let applied = r.result.unwrap().unwrap();
    assert_eq!(applied.threshold_uv, Some(100.0));

    let r = live
        .command(ControlCommand::SetBand { detector_id: "bandA".into(), low_hz: 7.0, high_hz: 3.0 })
        .unwrap();
    assert!(r.result.unwrap_err().contains("low ≥ high"));

    let r = live.command(ControlCommand::EnableDetector { detector_id: "bandB".into(), enabled: true }).unwrap();
    assert!(r.result.unwrap_err().contains("bandB"));

    let r = live.command(ControlCommand::SetRefractory { detector_id: "nope".into(), refractory_s: 1.0 }).unwrap();
    assert!(r.result.is_err());

    let r = live.command(ControlCommand::Stop).unwrap();
    assert!(r.result.is_ok());
    live.shutdown().unwrap();

    let msgs = seen.0.lock().unwrap();
    let Outbound::Status(first) = &msgs[0] else { panic!("first message {:?}", msgs[0]) };
    assert!(first.running);
    let last_status = msgs
        .iter()
        .rev()
        .find_map(|m| match m {
            Outbound::Status(s) => Some(s.clone()),
            _ => None,
        })
        .unwrap();
    assert!(!last_status.running);
    assert_eq!(last_status.control_seq, 5);
    let a: &DetectorConfig = last_status.config.detectors.iter().find(|d| d.detector_id == "bandA").unwrap();
    assert_eq!(a.threshold_uv, Some(100.0));
    assert_eq!((a.band_low_hz, a.band_high_hz), (3.0, 7.0));
    let acks: Vec<bool> = msgs
        .iter()
        .filter_map(|m| match m {
            Outbound::Ack { ack, .. } => Some(ack.ok),
            _ => None,
        })
        .collect();
    assert_eq!(acks, [true, false, false, false, true]);
}

#[test]
fn live_threshold_change_produces_events() {
    let mut config = SessionConfig::default();
    config.source = SourceConfig::Simulate {
        duration_s: 4.0,
        speed: 2.0,
        script: pieeg_core::sim::blink_rate_script(1.0, 2, 1.5, 100.0).unwrap(),
        noise: NoiseModel::default(),
    };
    let seen = Shared::default();
    let live = spawn_live(config, Box::new(seen.clone()), None).unwrap();
    live.command(ControlCommand::SetThreshold { detector_id: "bandA".into(), threshold_uv: 8.0 })
        .unwrap()
        .result
        .unwrap();
    live.command(ControlCommand::EnableDetector { detector_id: "bandA".into(), enabled: true })
        .unwrap()
        .result
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let done = seen.0.lock().unwrap().iter().any(|m| matches!(m, Outbound::Status(s) if !s.running));
        if done || Instant::now() > deadline {
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    let summary = live.shutdown().unwrap().expect("stream finished");
    assert!(!summary.events.is_empty());
    assert!(summary.pulse_log.for_pin(31).count() >= 1);
    let msgs = seen.0.lock().unwrap();
    assert!(msgs.iter().any(|m| matches!(m, Outbound::Pin { command, asserted: true } if command.pin == 31)));
}

#[test]
fn live_select_source_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_recording(&dir, 2.0, 6);
    let mut config = SessionConfig::default();
    config.source = slow_source(60.0);
    let seen = Shared::default();
    let live = spawn_live(config, Box::new(seen.clone()), None).unwrap();
    let bad = live
        .command(ControlCommand::SelectSource {
            source: SourceConfig::Replay { path: dir.path().join("missing.pieeg"), speed: 0.0 },
        })
        .unwrap();
    assert!(bad.result.is_err());
    live.command(ControlCommand::SelectSource { source: SourceConfig::Replay { path, speed: 0.0 } })
        .unwrap()
        .result
        .unwrap();
    std::thread::sleep(Duration::from_millis(300));
    let summary = live.shutdown().unwrap().unwrap();
    assert_eq!(summary.frames, 500);
}
