use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DspError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterDesign {
    #[default]
    Butterworth,
}

/// Bandpass design parameters.
///
/// `order` is the order of the lowpass prototype, as in the usual
/// `butter(order, [low, high], "bandpass")` convention: the bandpass itself
/// has `2 * order` poles, realized as `order` second-order sections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    #[serde(default)]
    pub design: FilterDesign,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            low_hz: 1.0,
            high_hz: 30.0,
            order: 4,
            design: FilterDesign::Butterworth,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, rate_sps: f64) -> Result<(), DspError> {
        let nyquist = rate_sps / 2.0;
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz) {
            return Err(DspError::Filter(format!(
                "need 0 < low ({}) < high ({})",
                self.low_hz, self.high_hz
            )));
        }
        if self.high_hz >= nyquist {
            return Err(DspError::Filter(format!(
                "high cutoff {} Hz at or above Nyquist {} Hz",
                self.high_hz, nyquist
            )));
        }
        if self.order < 2 || self.order % 2 != 0 {
            return Err(DspError::Filter(format!("order {} must be even and >= 2", self.order)));
        }
        Ok(())
    }

    fn prewarped(&self, rate_sps: f64) -> (f64, f64) {
        let warp = |f: f64| 2.0 * rate_sps * (PI * f / rate_sps).tan();
        (warp(self.low_hz), warp(self.high_hz))
    }

    /// Frequency at which the designed response is exactly unity.
    pub fn center_hz(&self, rate_sps: f64) -> f64 {
        let (w1, w2) = self.prewarped(rate_sps);
        rate_sps / PI * ((w1 * w2).sqrt() / (2.0 * rate_sps)).atan()
    }
}

/// One second-order section, `a0` normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn response(&self, freq_hz: f64, rate_sps: f64) -> Complex64 {
        let zi = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / rate_sps);
        let zi2 = zi * zi;
        let num = self.b[0] + self.b[1] * zi + self.b[2] * zi2;
        let den = 1.0 + self.a[0] * zi + self.a[1] * zi2;
        num / den
    }
}

/// Designs a Butterworth bandpass via the bilinear transform with both band
/// edges prewarped, and returns it as cascaded second-order sections.
///
/// Each section carries one conjugate pole pair and the zero pair at z = ±1,
/// and is scaled to unit gain at the band center.
pub fn design_bandpass(spec: &FilterSpec, rate_sps: f64) -> Result<Vec<Biquad>, DspError> {
    spec.validate(rate_sps)?;
    let n = spec.order;
    let (w1, w2) = spec.prewarped(rate_sps);
    let bw = w2 - w1;
    let w0_sq = w1 * w2;
    let fs2 = 2.0 * rate_sps;

    let mut poles = Vec::with_capacity(2 * n);
    for k in 0..n {
        let theta = PI * (2 * k + 1) as f64 / (2 * n) as f64;
        let proto = Complex64::new(-theta.sin(), theta.cos());
        // lowpass -> bandpass: s^2 - p*bw*s + w0^2 = 0
        let half = proto * bw / 2.0;
        let disc = (half * half - w0_sq).sqrt();
        for s in [half + disc, half - disc] {
            poles.push((fs2 + s) / (fs2 - s));
        }
    }

    let mut upper: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
    let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re).collect();
    upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    real.sort_by(f64::total_cmp);

    let mut sections: Vec<Biquad> = upper
        .iter()
        .map(|p| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    for pair in real.chunks(2) {
        let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-(r1 + r2), r1 * r2],
        });
    }
    debug_assert_eq!(sections.len(), n);

    let fc = spec.center_hz(rate_sps);
    for s in &mut sections {
        let g = s.response(fc, rate_sps).norm();
        for b in &mut s.b {
            *b /= g;
        }
    }
    Ok(sections)
}

/// Magnitude response of the analog Butterworth bandpass evaluated at the
/// prewarped frequency. The bilinear transform maps this exactly onto the
/// digital filter, so it serves as a closed-form reference.
pub fn analog_bandpass_magnitude(spec: &FilterSpec, rate_sps: f64, freq_hz: f64) -> f64 {
    let (w1, w2) = spec.prewarped(rate_sps);
    let w = 2.0 * rate_sps * (PI * freq_hz / rate_sps).tan();
    if w == 0.0 {
        return 0.0;
    }
    let x = (w * w - w1 * w2) / ((w2 - w1) * w);
    1.0 / (1.0 + x.powi(2 * spec.order as i32)).sqrt()
}

/// Streaming cascaded-biquad filter (transposed direct form II).
#[derive(Clone, Debug)]
pub struct BandpassFilter {
    sections: Vec<Biquad>,
    state: Vec<[f64; 2]>,
}

impl BandpassFilter {
    pub fn new(spec: &FilterSpec, rate_sps: f64) -> Result<Self, DspError> {
        Ok(Self::from_sections(design_bandpass(spec, rate_sps)?))
    }

    pub fn from_sections(sections: Vec<Biquad>) -> Self {
        let state = vec![[0.0; 2]; sections.len()];
        Self { sections, state }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn response(&self, freq_hz: f64, rate_sps: f64) -> Complex64 {
        self.sections
            .iter()
            .map(|s| s.response(freq_hz, rate_sps))
            .product()
    }

    #[inline]
    pub fn process_sample(&mut self, x: f64) -> f64 {
        let mut v = x;
        for (s, z) in self.sections.iter().zip(self.state.iter_mut()) {
            let y = s.b[0] * v + z[0];
            z[0] = s.b[1] * v - s.a[0] * y + z[1];
            z[1] = s.b[2] * v - s.a[1] * y;
            v = y;
        }
        v
    }

    pub fn process(&mut self, samples: &mut [f64]) {
        for x in samples {
            *x = self.process_sample(*x);
        }
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|z| *z = [0.0; 2]);
    }
}
