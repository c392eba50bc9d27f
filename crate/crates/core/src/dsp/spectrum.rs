use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::DspError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    #[default]
    Rectangular,
    Hann,
}

impl Taper {
    /// Periodic weights, so an exact-bin tone sees the full coherent gain.
    pub fn weights(self, len: usize) -> Vec<f64> {
        match self {
            Taper::Rectangular => vec![1.0; len],
            Taper::Hann => (0..len)
                .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / len as f64).cos()))
                .collect(),
        }
    }
}

/// Single-sided amplitude spectrum of one window.
///
/// A tone of peak amplitude `A` centered on a bin reads `A` in that bin.
/// DC and (for even lengths) Nyquist are not doubled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFrame {
    pub t_end_ns: u64,
    pub bin_hz: f64,
    pub amplitudes_uv: Vec<f64>,
}

impl SpectrumFrame {
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.bin_hz
    }

    /// Sum of squared time-domain samples implied by this spectrum for a
    /// rectangular window of `window_len` samples (Parseval).
    pub fn time_domain_energy(&self, window_len: usize) -> f64 {
        let n = window_len as f64;
        let last = self.amplitudes_uv.len() - 1;
        self.amplitudes_uv
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let unhalved = k == 0 || (window_len % 2 == 0 && k == last);
                if unhalved {
                    n * a * a
                } else {
                    n * a * a / 2.0
                }
            })
            .sum()
    }
}

/// Reusable FFT plan for one window length and taper.
pub struct SpectrumAnalyzer {
    len: usize,
    taper: Taper,
    weights: Vec<f64>,
    weight_sum: f64,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for SpectrumAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumAnalyzer")
            .field("len", &self.len)
            .field("taper", &self.taper)
            .finish()
    }
}

impl SpectrumAnalyzer {
    pub fn new(len: usize, taper: Taper) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        let weights = taper.weights(len);
        let weight_sum = weights.iter().sum();
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        Self {
            len,
            taper,
            weights,
            weight_sum,
            fft,
            buf: vec![Complex64::default(); len],
            scratch,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn analyze(&mut self, window: &[f64], t_end_ns: u64, rate_sps: f64) -> Result<SpectrumFrame, DspError> {
        if window.len() != self.len {
            return Err(DspError::LengthMismatch {
                expected: self.len,
                actual: window.len(),
            });
        }
        for ((dst, &x), &w) in self.buf.iter_mut().zip(window).zip(&self.weights) {
            *dst = Complex64::new(x * w, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);

        let bins = self.len / 2 + 1;
        let nyquist = (self.len % 2 == 0).then_some(self.len / 2);
        let amplitudes_uv = self.buf[..bins]
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let scale = if k == 0 || Some(k) == nyquist { 1.0 } else { 2.0 };
                scale * c.norm() / self.weight_sum
            })
            .collect();
        Ok(SpectrumFrame {
            t_end_ns,
            bin_hz: rate_sps / self.len as f64,
            amplitudes_uv,
        })
    }
}

/// One-shot amplitude spectrum. Prefer [`SpectrumAnalyzer`] in loops.
pub fn fft_amplitude(window: &[f64], taper: Taper, rate_sps: f64, t_end_ns: u64) -> SpectrumFrame {
    SpectrumAnalyzer::new(window.len(), taper)
        .analyze(window, t_end_ns, rate_sps)
        .expect("analyzer sized from window")
}

/// Largest amplitude among bins whose center lies in `[low_hz, high_hz]`
/// (both edges inclusive). Ties go to the lower frequency.
pub fn band_peak(spectrum: &SpectrumFrame, low_hz: f64, high_hz: f64) -> Result<(f64, f64), DspError> {
    let invalid = |reason: &str| DspError::InvalidBand {
        low_hz,
        high_hz,
        reason: reason.to_string(),
    };
    if !(low_hz >= 0.0) {
        return Err(invalid("low edge is negative"));
    }
    if !(low_hz < high_hz) {
        return Err(invalid("low >= high"));
    }
    let top = spectrum.bin_frequency(spectrum.amplitudes_uv.len() - 1);
    let eps = spectrum.bin_hz * 1e-9;
    if high_hz > top + spectrum.bin_hz / 2.0 + eps {
        return Err(invalid("high edge above Nyquist"));
    }
    let first = ((low_hz - eps) / spectrum.bin_hz).ceil().max(0.0) as usize;
    let last = (((high_hz + eps) / spectrum.bin_hz).floor() as usize).min(spectrum.amplitudes_uv.len() - 1);
    if first > last {
        return Err(DspError::EmptyBand {
            low_hz,
            high_hz,
            bin_hz: spectrum.bin_hz,
        });
    }
    let mut best = first;
    for k in first + 1..=last {
        if spectrum.amplitudes_uv[k] > spectrum.amplitudes_uv[best] {
            best = k;
        }
    }
    Ok((spectrum.bin_frequency(best), spectrum.amplitudes_uv[best]))
}
