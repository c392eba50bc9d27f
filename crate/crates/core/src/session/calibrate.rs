//! Threshold suggestion from labelled data.
//!
//! Band peaks are collected for windows that fully contain a blink and for
//! windows well clear of any blink. The suggestion sits `margin` of the way
//! from the noise 99th percentile up to the blink median.

use serde::{Deserialize, Serialize};

use crate::dsp::{band_peak, BandpassFilter, SpectrumAnalyzer, WindowBuffer};
use crate::frame::{raw_to_volts, DeviceConfig, RawFrame};
use crate::sim::BlinkLabel;

use super::{SessionConfig, SessionError};

/// Blink-free signal needed before a noise estimate is trusted.
pub const MIN_NOISE_S: f64 = 5.0;
/// Windows starting this soon after a blink ends still hold filter ringing.
const POST_BLINK_GUARD_NS: u64 = 1_000_000_000;
const PRE_BLINK_GUARD_NS: u64 = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPeak {
    pub start_ns: u64,
    pub end_ns: u64,
    pub peak_hz: f64,
    pub peak_uv: f64,
}

/// Runs the feature path of `config` over `frames` and returns the band
/// peak of every window.
pub fn band_peak_series(
    frames: &[(u64, RawFrame)],
    device: &DeviceConfig,
    config: &SessionConfig,
    band: (f64, f64),
) -> Result<Vec<WindowPeak>, SessionError> {
    let rate = f64::from(device.sample_rate_sps);
    let mut filter = BandpassFilter::new(&config.filter, rate)?;
    let mut windows = WindowBuffer::new(config.window)?;
    let mut analyzer = SpectrumAnalyzer::new(config.window.length_samples, config.window.taper);
    let span_ns = (config.window.length_samples as u64 - 1) * device.sample_period_ns();
    let mut out = Vec::new();
    for (t, f) in frames {
        let uv = raw_to_volts(f.channel_raw[config.analysis_channel], device) * 1e6;
        if let Some(w) = windows.push(*t, filter.process_sample(uv))? {
            let s = analyzer.analyze(&w.samples, w.t_end_ns, rate)?;
            let (peak_hz, peak_uv) = band_peak(&s, band.0, band.1)?;
            out.push(WindowPeak {
                start_ns: w.t_end_ns.saturating_sub(span_ns),
                end_ns: w.t_end_ns,
                peak_hz,
                peak_uv,
            });
        }
    }
    Ok(out)
}

/// Linear-interpolated percentile, `p` in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub margin: f64,
    pub threshold_uv: f64,
    pub noise_p99_uv: f64,
    pub blink_median_uv: f64,
    pub noise_peaks_uv: Vec<f64>,
    pub blink_peaks_uv: Vec<f64>,
}

pub fn calibrate_threshold(
    frames: &[(u64, RawFrame)],
    labels: &[BlinkLabel],
    device: &DeviceConfig,
    config: &SessionConfig,
    band: (f64, f64),
    margin: f64,
) -> Result<CalibrationReport, SessionError> {
    if !(0.0..=1.0).contains(&margin) {
        return Err(SessionError::Config(format!("margin {margin} must be within [0, 1]")));
    }
    if labels.is_empty() {
        return Err(SessionError::CalibrationInput("no labelled blinks".into()));
    }
    let total_s = frames.len() as f64 / f64::from(device.sample_rate_sps);
    let blink_s = blink_coverage_s(labels);
    if total_s - blink_s < MIN_NOISE_S {
        return Err(SessionError::CalibrationInput(format!(
            "only {:.2} s of blink-free signal, need {MIN_NOISE_S} s",
            total_s - blink_s
        )));
    }

    let series = band_peak_series(frames, device, config, band)?;
    let mut blink_peaks = Vec::new();
    let mut noise_peaks = Vec::new();
    for w in &series {
        let contains_blink = labels.iter().any(|l| w.start_ns <= l.onset_ns && l.end_ns() <= w.end_ns);
        let clear = labels.iter().all(|l| {
            w.end_ns + PRE_BLINK_GUARD_NS < l.onset_ns || w.start_ns > l.end_ns() + POST_BLINK_GUARD_NS
        });
        if contains_blink {
            blink_peaks.push(w.peak_uv);
        } else if clear {
            noise_peaks.push(w.peak_uv);
        }
    }
    if blink_peaks.is_empty() || noise_peaks.is_empty() {
        return Err(SessionError::CalibrationInput(format!(
            "{} blink windows and {} noise windows; need at least one of each",
            blink_peaks.len(),
            noise_peaks.len()
        )));
    }
    let noise_p99_uv = percentile(&noise_peaks, 99.0);
    let blink_median_uv = percentile(&blink_peaks, 50.0);
    if blink_median_uv <= noise_p99_uv {
        return Err(SessionError::CalibrationInfeasible {
            blink_median_uv,
            noise_p99_uv,
        });
    }
    Ok(CalibrationReport {
        band_low_hz: band.0,
        band_high_hz: band.1,
        margin,
        threshold_uv: noise_p99_uv + margin * (blink_median_uv - noise_p99_uv),
        noise_p99_uv,
        blink_median_uv,
        noise_peaks_uv: noise_peaks,
        blink_peaks_uv: blink_peaks,
    })
}

/// Seconds covered by the union of all blink spans.
fn blink_coverage_s(labels: &[BlinkLabel]) -> f64 {
    let mut spans: Vec<(u64, u64)> = labels.iter().map(|l| (l.onset_ns, l.end_ns())).collect();
    spans.sort_unstable();
    let mut total = 0u64;
    let mut cur: Option<(u64, u64)> = None;
    for (a, b) in spans {
        cur = match cur {
            Some((ca, cb)) if a <= cb => Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                total += cb - ca;
                Some((a, b))
            }
            None => Some((a, b)),
        };
    }
    if let Some((a, b)) = cur {
        total += b - a;
    }
    total as f64 / 1e9
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::standard;
    use crate::sim::{generate, blink_rate_script, NoiseModel};

    fn sim(seed: Option<u64>) -> (Vec<(u64, RawFrame)>, Vec<BlinkLabel>, SessionConfig) {
        let config = standard::standard_config(seed.unwrap_or(0), seed.is_none());
        let script = standard::standard_script();
        let noise = seed.map_or(NoiseModel::silent(), |s| NoiseModel::default().with_seed(s));
        let g = generate(standard::DURATION_S, &config.device, &script, &noise).unwrap();
        let labels = g.labels().to_vec();
        (g.collect(), labels, config)
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert_eq!(percentile(&v, 50.0), 2.5);
        assert!((percentile(&v, 99.0) - 3.97).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_threshold_between_zero_and_blink_peak() {
        let (frames, labels, config) = sim(None);
        let r = calibrate_threshold(&frames, &labels, &config.device, &config, (3.0, 7.0), 0.5).unwrap();
        // Only quantisation and filter ringing remain between blinks.
        assert!(r.noise_p99_uv < 0.05 * r.blink_median_uv, "{r:?}");
        let max_blink = r.blink_peaks_uv.iter().copied().fold(0.0, f64::max);
        assert!(r.threshold_uv > r.noise_p99_uv && r.threshold_uv < max_blink, "{r:?}");
    }

    #[test]
    fn margin_endpoints() {
        let (frames, labels, config) = sim(Some(3));
        let r0 = calibrate_threshold(&frames, &labels, &config.device, &config, (1.0, 3.0), 0.0).unwrap();
        assert_eq!(r0.threshold_uv, r0.noise_p99_uv);
        let r1 = calibrate_threshold(&frames, &labels, &config.device, &config, (1.0, 3.0), 1.0).unwrap();
        assert_eq!(r1.threshold_uv, r1.blink_median_uv);
        assert!(r0.noise_p99_uv > 0.0);
        assert!(calibrate_threshold(&frames, &labels, &config.device, &config, (1.0, 3.0), 1.5).is_err());
    }

    #[test]
    fn infeasible_when_blinks_drown() {
        let config = standard::standard_config(0, false);
        let script = blink_rate_script(1.0, 3, 7.0, 0.05).unwrap();
        let noise = NoiseModel { pink_rms_uv: 20.0, ..NoiseModel::default() };
        let g = generate(12.0, &config.device, &script, &noise).unwrap();
        let labels = g.labels().to_vec();
        let frames: Vec<_> = g.collect();
        let err = calibrate_threshold(&frames, &labels, &config.device, &config, (3.0, 7.0), 0.5).unwrap_err();
        assert!(matches!(err, SessionError::CalibrationInfeasible { .. }), "{err}");
    }

    #[test]
    fn needs_quiet_signal_and_labels() {
        let config = standard::standard_config(0, true);
        let script = blink_rate_script(1.0, 5, 0.5, 100.0).unwrap();
        let g = generate(6.0, &config.device, &script, &NoiseModel::silent()).unwrap();
        let labels = g.labels().to_vec();
        let frames: Vec<_> = g.collect();
        assert!(matches!(
            calibrate_threshold(&frames, &labels, &config.device, &config, (3.0, 7.0), 0.5),
            Err(SessionError::CalibrationInput(_))
        ));
        assert!(calibrate_threshold(&frames, &[], &config.device, &config, (3.0, 7.0), 0.5).is_err());
    }
}
