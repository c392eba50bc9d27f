//! `pieeg`: run the blink pipeline from the command line.
//!
//! Exit status: 0 success, 1 configuration error, 2 source error, 3 file
//! format error.

mod config;

use std::io::Write;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use pieeg_core::actuation::gpio::SysfsGpioSink;
use pieeg_core::actuation::PinSink;
use pieeg_core::session::{
    calibrate_threshold, run_with, standard, RecordingHeader, ReplayReader, RunOptions, SessionError, SessionSummary,
    SourceConfig,
};
use pieeg_core::sim::{generate, label_script, BlinkScript};
use pieeg_core::{SessionConfig, WindowSpec};
use pieeg_server::{LiveServer, DEFAULT_PORT};

use config::{config_error, SessionArgs, SimArgs};

#[derive(Parser, Debug)]
#[command(name = "pieeg", version, about = "Blink-driven EEG pipeline: acquire, detect, actuate")]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the pipeline on synthetic EEG with scripted blinks.
    Simulate {
        #[command(flatten)]
        session: SessionArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run the pipeline on a recording.
    Replay {
        path: PathBuf,
        #[command(flatten)]
        session: SessionArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run the pipeline on frames read from the acquisition device.
    Acquire {
        /// Device node delivering raw 27-byte frames.
        #[arg(long, value_name = "PATH", default_value = "/dev/pieeg0")]
        device: PathBuf,
        /// Drive the mapped header pins through sysfs GPIO.
        #[arg(long)]
        gpio: bool,
        #[command(flatten)]
        session: SessionArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run a live session and stream it to websocket clients.
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Address to bind. There is no authentication; keep it on loopback
        /// unless the network is trusted.
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        bind: IpAddr,
        /// Directory of static web assets served under `/`.
        #[arg(long = "static", value_name = "DIR")]
        static_dir: Option<PathBuf>,
        /// Stream a recording instead of the simulator.
        #[arg(long, value_name = "PATH")]
        replay: Option<PathBuf>,
        #[command(flatten)]
        session: SessionArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Suggest detector thresholds from labelled data.
    Calibrate {
        /// Fraction of the way from the noise p99 to the blink median.
        #[arg(long, default_value_t = standard::DEFAULT_MARGIN)]
        margin: f64,
        /// Calibrate from a recording instead of a simulation.
        #[arg(long, value_name = "PATH", requires = "labels")]
        replay: Option<PathBuf>,
        /// Blink script giving the blink times within the recording.
        #[arg(long, value_name = "PATH")]
        labels: Option<PathBuf>,
        /// Only calibrate the detector named by --detector.
        #[arg(long)]
        only: bool,
        /// Write the configuration with calibrated, enabled detectors.
        #[arg(long, value_name = "PATH")]
        write_config: Option<PathBuf>,
        #[command(flatten)]
        session: SessionArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
}

#[derive(clap::Args, Debug, Clone, Default)]
struct OutputArgs {
    /// Write the pulse log (`pin,assert_ns,release_ns,cause`) here.
    #[arg(long, value_name = "PATH")]
    pulses: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<SessionError>())
        .map_or(1, |s| s.exit_code() as u8)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate { session, sim, output } => {
            let mut c = config::load(session.config.as_deref())?;
            sim.apply(&mut c, 0.0)?;
            session.apply(&mut c)?;
            run_and_report(&c, &output, None)
        }
        Command::Replay { path, session, output } => {
            let mut c = config::load(session.config.as_deref())?;
            let speed = match c.source {
                SourceConfig::Replay { speed, .. } => speed,
                _ => 0.0,
            };
            c.source = SourceConfig::Replay { path, speed };
            session.apply(&mut c)?;
            run_and_report(&c, &output, None)
        }
        Command::Acquire { device, gpio, session, output } => {
            let mut c = config::load(session.config.as_deref())?;
            c.source = SourceConfig::Hardware { device_path: device };
            session.apply(&mut c)?;
            let sink = if gpio {
                let s = SysfsGpioSink::open(&c.pin_map).map_err(SessionError::from)?;
                Some(Box::new(s) as Box<dyn PinSink + Send>)
            } else {
                None
            };
            run_and_report(&c, &output, sink)
        }
        Command::Serve { port, bind, static_dir, replay, session, sim } => {
            let mut c = config::load(session.config.as_deref())?;
            match replay {
                Some(path) => c.source = SourceConfig::Replay { path, speed: 1.0 },
                None if matches!(c.source, SourceConfig::Simulate { .. }) => sim.apply(&mut c, 1.0)?,
                None => {}
            }
            // Paced by default so clients see the session unfold.
            if session.config.is_none() {
                if let SourceConfig::Simulate { speed, .. } = &mut c.source {
                    *speed = 1.0;
                }
            }
            session.apply(&mut c)?;
            serve(c, SocketAddr::new(bind, port), static_dir)
        }
        Command::Calibrate { margin, replay, labels, only, write_config, session, sim } => {
            let mut c = config::load(session.config.as_deref())?;
            if replay.is_none() {
                sim.apply(&mut c, 0.0)?;
            }
            session.apply(&mut c)?;
            calibrate(c, margin, replay.as_deref(), labels.as_deref(), only.then_some(&session.detector), write_config)
        }
    }
}

fn ctrl_c_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build();
        if let Ok(rt) = rt {
            if rt.block_on(tokio::signal::ctrl_c()).is_ok() {
                f.store(true, Ordering::Relaxed);
            }
        }
    });
    flag
}

fn run_and_report(c: &SessionConfig, output: &OutputArgs, sink: Option<Box<dyn PinSink + Send>>) -> Result<()> {
    let opts = RunOptions { stop: Some(ctrl_c_flag()), hardware_sink: sink };
    let summary = run_with(c, &mut (), opts)?;
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(summary.event_log_text().as_bytes())?;
    if let Some(p) = &output.pulses {
        std::fs::write(p, summary.pulse_log.to_text()).with_context(|| format!("writing {}", p.display()))?;
    }
    report(&summary);
    Ok(())
}

fn report(s: &SessionSummary) {
    eprintln!("frames {}  spectra {}  wall {:.3} s", s.frames, s.windows, s.wall_time.as_secs_f64());
    for (id, n) in &s.events_per_detector {
        eprintln!("{id}: {n} events");
    }
    if let Some(l) = &s.latency {
        eprintln!(
            "latency onset->event median {:.3} s max {:.3} s; onset->pin median {:.3} s max {:.3} s",
            l.median_s, l.max_s, l.median_end_to_end_s, l.max_end_to_end_s
        );
    }
    for g in &s.gaps {
        eprintln!("gap after {} ns: {} frames lost ({})", g.after_t_ns, g.frames_lost, g.reason);
    }
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
}

fn serve(c: SessionConfig, addr: SocketAddr, static_dir: Option<PathBuf>) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    let summary = rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| SessionError::Source(format!("binding {addr}: {e}")))?;
        let server = LiveServer::start(c, None)?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        Ok::<_, anyhow::Error>(server.serve(listener, static_dir, shutdown).await?)
    })?;
    if let Some(s) = summary {
        report(&s);
    }
    Ok(())
}

fn calibrate(
    mut c: SessionConfig,
    margin: f64,
    replay: Option<&Path>,
    labels: Option<&Path>,
    only: Option<&String>,
    write_config: Option<PathBuf>,
) -> Result<()> {
    c.validate()?;
    let (device, frames, labels) = match replay {
        Some(path) => {
            let reader = ReplayReader::open(path)?;
            let header: RecordingHeader = *reader.header();
            let frames = reader.collect::<Result<Vec<_>, _>>()?;
            let labels_path = labels.expect("clap enforces --labels with --replay");
            let text = std::fs::read_to_string(labels_path)
                .map_err(|e| config_error(format!("reading {}: {e}", labels_path.display())))?;
            let script = BlinkScript::parse(&text).map_err(|e| config_error(e.to_string()))?;
            let device = header.device_config();
            let t0 = frames.first().map_or(0, |(t, _)| *t);
            let labels = label_script(&script, &device, t0);
            (device, frames, labels)
        }
        None => {
            let SourceConfig::Simulate { duration_s, script, noise, .. } = &c.source else {
                unreachable!("simulation source set above");
            };
            let sim = generate(*duration_s, &c.device, script, noise)?;
            let labels = sim.labels().to_vec();
            (c.device.clone(), sim.collect(), labels)
        }
    };
    let ids: Vec<String> = c
        .detectors
        .iter()
        .map(|d| d.detector_id.clone())
        .filter(|id| only.is_none_or(|o| o == id))
        .collect();
    let mut out = std::io::stdout().lock();
    for id in ids {
        let d = c.detector_mut(&id).expect("listed above");
        let band = (d.band_low_hz, d.band_high_hz);
        let mut calib = SessionConfig { device: device.clone(), ..c.clone() };
        if device.sample_rate_sps != c.device.sample_rate_sps {
            calib.window = WindowSpec::for_rate(device.sample_rate_sps);
        }
        let r = calibrate_threshold(&frames, &labels, &device, &calib, band, margin)?;
        writeln!(
            out,
            "{id} {}:{} Hz  threshold {:.3} uV  (noise p99 {:.3} uV over {} windows, blink median {:.3} uV over {} windows)",
            band.0,
            band.1,
            r.threshold_uv,
            r.noise_p99_uv,
            r.noise_peaks_uv.len(),
            r.blink_median_uv,
            r.blink_peaks_uv.len()
        )?;
        let d = c.detector_mut(&id).expect("listed above");
        d.threshold_uv = Some(r.threshold_uv);
        d.enabled = true;
    }
    if let Some(path) = write_config {
        std::fs::write(&path, config::to_toml(&c)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
