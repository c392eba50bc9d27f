use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use pieeg_core::dsp::WindowSpec;
use pieeg_core::session::{standard, SessionError, SourceConfig};
use pieeg_core::sim::{BlinkScript, NoiseModel};
use pieeg_core::{PinSpec, SessionConfig};

/// Flags shared by every subcommand. Each overrides the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct SessionArgs {
    /// TOML file mirroring the session configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Sample rate in SPS. Also resets the analysis window to 1 s with a 0.25 s hop.
    #[arg(long)]
    pub rate: Option<u32>,
    #[arg(long)]
    pub gain: Option<u8>,
    /// Analysis channel index (0 = Fz).
    #[arg(long)]
    pub channel: Option<usize>,
    /// Detector that --band, --threshold, --refractory and --pin apply to.
    #[arg(long, default_value = "bandA")]
    pub detector: String,
    /// Detector band in Hz.
    #[arg(long, value_name = "LO:HI", value_parser = parse_band)]
    pub band: Option<(f64, f64)>,
    /// Detector threshold in uV; also enables the detector.
    #[arg(long, value_name = "UV")]
    pub threshold: Option<f64>,
    /// Minimum seconds between events of the detector.
    #[arg(long, value_name = "S")]
    pub refractory: Option<f64>,
    /// Header pin (board numbering) the detector pulses.
    #[arg(long, value_name = "N")]
    pub pin: Option<u8>,
    /// Write every frame to a recording file.
    #[arg(long, value_name = "PATH")]
    pub record: Option<PathBuf>,
    /// Playback speed multiplier; 0 runs as fast as possible.
    #[arg(long, value_name = "X")]
    pub speed: Option<f64>,
}

/// Flags that only make sense for the simulator.
#[derive(Args, Debug, Clone, Default)]
pub struct SimArgs {
    /// Blink script, one `onset_s,duration_s,amplitude_uv` per line.
    #[arg(long, value_name = "PATH")]
    pub script: Option<PathBuf>,
    /// Simulated seconds.
    #[arg(long, value_name = "S")]
    pub duration: Option<f64>,
    /// Noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable all simulated noise.
    #[arg(long)]
    pub no_noise: bool,
}

pub fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("band low {lo:?}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("band high {hi:?}: {e}"))?;
    Ok((lo, hi))
}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    SessionError::Config(msg.into()).into()
}

pub fn load(path: Option<&Path>) -> Result<SessionConfig> {
    let Some(path) = path else {
        return Ok(SessionConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("reading {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

pub fn to_toml(config: &SessionConfig) -> Result<String> {
    toml::to_string_pretty(config).context("serializing configuration")
}

impl SessionArgs {
    pub fn apply(&self, c: &mut SessionConfig) -> Result<()> {
        if let Some(rate) = self.rate {
            c.device.sample_rate_sps = rate;
            c.window = WindowSpec::for_rate(rate);
        }
        if let Some(gain) = self.gain {
            c.device.gain = gain;
        }
        if let Some(ch) = self.channel {
            c.analysis_channel = ch;
        }
        let touches_detector =
            self.band.is_some() || self.threshold.is_some() || self.refractory.is_some() || self.pin.is_some();
        if touches_detector {
            let id = self.detector.clone();
            let d = c
                .detector_mut(&id)
                .ok_or_else(|| config_error(format!("unknown detector {id}")))?;
            if let Some((lo, hi)) = self.band {
                d.band_low_hz = lo;
                d.band_high_hz = hi;
            }
            if let Some(t) = self.threshold {
                d.threshold_uv = Some(t);
                d.enabled = true;
            }
            if let Some(r) = self.refractory {
                d.refractory_s = r;
            }
            if let Some(pin) = self.pin {
                let spec = c.pin_map.entries.entry(id).or_insert_with(|| PinSpec::new(pin));
                spec.pin = pin;
            }
        }
        if let Some(p) = &self.record {
            c.record_path = Some(p.clone());
        }
        if let Some(s) = self.speed {
            match &mut c.source {
                SourceConfig::Simulate { speed, .. } | SourceConfig::Replay { speed, .. } => *speed = s,
                SourceConfig::Hardware { .. } => bail!(config_error("--speed does not apply to hardware")),
            }
        }
        Ok(())
    }
}

impl SimArgs {
    /// Makes `c` a simulation, keeping simulation settings from the file.
    pub fn apply(&self, c: &mut SessionConfig, default_speed: f64) -> Result<()> {
        let (mut duration_s, speed, mut script, mut noise) = match &c.source {
            SourceConfig::Simulate { duration_s, speed, script, noise } => (*duration_s, *speed, script.clone(), *noise),
            _ => (standard::DURATION_S, default_speed, standard::standard_script(), NoiseModel::default()),
        };
        if let Some(path) = &self.script {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_error(format!("reading {}: {e}", path.display())))?;
            let parsed = BlinkScript::parse(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            script = BlinkScript { events: parsed.events, channel_gains: script.channel_gains };
        }
        if let Some(d) = self.duration {
            duration_s = d;
        } else if let Some(last) = script.events.iter().map(|e| e.onset_s + e.duration_s).reduce(f64::max) {
            // Keep the default length unless the script runs past it.
            duration_s = duration_s.max((last + 2.0).ceil());
        }
        if let Some(seed) = self.seed {
            noise.seed = seed;
        }
        if self.no_noise {
            noise = NoiseModel::silent().with_seed(noise.seed);
        }
        c.source = SourceConfig::Simulate { duration_s, speed, script, noise };
        Ok(())
    }
}
