use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{DspError, Taper};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length_samples: usize,
    pub hop_samples: usize,
    #[serde(default)]
    pub taper: Taper,
}

impl WindowSpec {
    /// One second of data, advanced every quarter second (rounded up, so four
    /// hops never fall short of one second).
    pub fn for_rate(rate_sps: u32) -> Self {
        let length = rate_sps as usize;
        Self {
            length_samples: length,
            hop_samples: length.div_ceil(4),
            taper: Taper::Rectangular,
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.length_samples < 2 {
            return Err(DspError::Window(format!(
                "length {} must be at least 2",
                self.length_samples
            )));
        }
        if self.hop_samples == 0 || self.hop_samples > self.length_samples {
            return Err(DspError::Window(format!(
                "hop {} must be in 1..={}",
                self.hop_samples, self.length_samples
            )));
        }
        Ok(())
    }
}

/// A full analysis window, oldest sample first.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub t_end_ns: u64,
    /// Index (from stream start) of the newest sample.
    pub end_index: u64,
    pub samples: Vec<f64>,
}

/// Ring buffer that cuts a sample stream into overlapping windows.
#[derive(Clone, Debug)]
pub struct WindowBuffer {
    spec: WindowSpec,
    ring: VecDeque<f64>,
    since_emit: usize,
    last_t_ns: Option<u64>,
    pushed: u64,
}

impl WindowBuffer {
    pub fn new(spec: WindowSpec) -> Result<Self, DspError> {
        spec.validate()?;
        Ok(Self {
            spec,
            ring: VecDeque::with_capacity(spec.length_samples),
            since_emit: 0,
            last_t_ns: None,
            pushed: 0,
        })
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    pub fn samples_pushed(&self) -> u64 {
        self.pushed
    }

    /// Adds one sample. Returns a window when the hop schedule says so:
    /// first when the buffer fills, then every `hop_samples` samples.
    pub fn push(&mut self, t_ns: u64, value: f64) -> Result<Option<Window>, DspError> {
        if let Some(prev) = self.last_t_ns {
            if t_ns <= prev {
                return Err(DspError::StreamIntegrity {
                    prev_ns: prev,
                    got_ns: t_ns,
                });
            }
        }
        self.last_t_ns = Some(t_ns);
        self.pushed += 1;
        if self.ring.len() == self.spec.length_samples {
            self.ring.pop_front();
        }
        self.ring.push_back(value);
        self.since_emit += 1;

        let full = self.ring.len() == self.spec.length_samples;
        let first = self.pushed == self.spec.length_samples as u64;
        if full && (first || self.since_emit >= self.spec.hop_samples) {
            self.since_emit = 0;
            let (a, b) = self.ring.as_slices();
            let mut samples = Vec::with_capacity(self.spec.length_samples);
            samples.extend_from_slice(a);
            samples.extend_from_slice(b);
            return Ok(Some(Window {
                t_end_ns: t_ns,
                end_index: self.pushed - 1,
                samples,
            }));
        }
        Ok(None)
    }

    /// Pushes a run of `(t_ns, value)` samples and collects every window it
    /// completes. On error, samples before the offending one are kept.
    pub fn push_all(
        &mut self,
        samples: impl IntoIterator<Item = (u64, f64)>,
    ) -> Result<Vec<Window>, DspError> {
        let mut out = Vec::new();
        for (t, v) in samples {
            if let Some(w) = self.push(t, v)? {
                out.push(w);
            }
        }
        Ok(out)
    }

    pub fn reset(&mut self) {
        self.ring.clear();
        self.since_emit = 0;
        self.last_t_ns = None;
        self.pushed = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(len: usize, hop: usize) -> WindowSpec {
        WindowSpec {
            length_samples: len,
            hop_samples: hop,
            taper: Taper::Rectangular,
        }
    }

    fn ramp(from: u64, n: u64) -> impl Iterator<Item = (u64, f64)> {
        (from..from + n).map(|i| (i * 4_000_000, i as f64))
    }

    #[test]
    fn fill_then_hop() {
        let mut b = WindowBuffer::new(spec(256, 64)).unwrap();
        let w1 = b.push_all(ramp(0, 256)).unwrap();
        assert_eq!(w1.len(), 1);
        assert_eq!(w1[0].t_end_ns, 255 * 4_000_000);
        let w2 = b.push_all(ramp(256, 64)).unwrap();
        assert_eq!(w2.len(), 1);
        assert_eq!(&w1[0].samples[64..], &w2[0].samples[..192]);
        assert_eq!(w2[0].samples[255], 319.0);
        assert!(b.push_all(ramp(320, 63)).unwrap().is_empty());
    }

    #[test]
    fn partial_fill_emits_nothing() {
        let mut b = WindowBuffer::new(spec(256, 64)).unwrap();
        assert!(b.push_all(ramp(0, 255)).unwrap().is_empty());
    }

    #[test]
    fn non_monotone_rejected() {
        let mut b = WindowBuffer::new(spec(4, 2)).unwrap();
        b.push(10, 0.0).unwrap();
        assert_eq!(
            b.push(10, 0.0),
            Err(DspError::StreamIntegrity { prev_ns: 10, got_ns: 10 })
        );
        assert!(b.push(5, 0.0).is_err());
        assert!(b.push(11, 0.0).is_ok());
    }

    #[test]
    fn spec_validation() {
        assert!(spec(1, 1).validate().is_err());
        assert!(spec(8, 9).validate().is_err());
        assert!(spec(8, 0).validate().is_err());
        assert!(spec(8, 8).validate().is_ok());
        assert_eq!(WindowSpec::for_rate(250), spec(250, 63));
        assert_eq!(WindowSpec::for_rate(16000), spec(16000, 4000));
    }

    proptest! {
        // Every window is exactly the `length` samples ending at its index,
        // and ends follow the hop schedule with nothing skipped.
        #[test]
        fn lossless_hop_schedule(len in 2usize..64, hop_frac in 0.0f64..1.0, n in 0u64..400, chunk in 1usize..50) {
            let hop = 1 + ((len - 1) as f64 * hop_frac) as usize;
            let mut b = WindowBuffer::new(spec(len, hop)).unwrap();
            let all: Vec<(u64, f64)> = ramp(0, n).collect();
            let mut windows = Vec::new();
            for c in all.chunks(chunk) {
                windows.extend(b.push_all(c.iter().copied()).unwrap());
            }
            let expected: Vec<u64> = if n < len as u64 { vec![] } else {
                (0..).map(|k| len as u64 - 1 + k * hop as u64).take_while(|&e| e < n).collect()
            };
            let ends: Vec<u64> = windows.iter().map(|w| w.end_index).collect();
            prop_assert_eq!(ends, expected);
            for w in &windows {
                let want: Vec<f64> = ((w.end_index + 1 - len as u64)..=w.end_index).map(|i| i as f64).collect();
                prop_assert_eq!(&w.samples, &want);
            }
        }
    }
}
