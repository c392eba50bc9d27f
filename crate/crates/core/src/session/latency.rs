use serde::{Deserialize, Serialize};

use crate::detector::DetectionEvent;
use crate::sim::BlinkLabel;

/// An event counts as detecting a blink when it lands this soon after onset.
pub const MATCH_WINDOW_NS: u64 = 2_000_000_000;
/// Events farther than this from every blink span are false.
pub const FALSE_MARGIN_NS: u64 = 1_000_000_000;

/// One matched blink/detection pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyEntry {
    pub detector_id: String,
    pub blink_onset_ns: u64,
    pub event_t_ns: u64,
    /// Event time plus the measured processing delay up to the pin command.
    pub actuation_assert_ns: u64,
}

impl LatencyEntry {
    pub fn detection_latency_s(&self) -> f64 {
        (self.event_t_ns - self.blink_onset_ns) as f64 / 1e9
    }

    pub fn end_to_end_s(&self) -> f64 {
        (self.actuation_assert_ns - self.blink_onset_ns) as f64 / 1e9
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub entries: Vec<LatencyEntry>,
    /// Onset to event, seconds.
    pub median_s: f64,
    pub max_s: f64,
    /// Onset to pin command, seconds.
    pub median_end_to_end_s: f64,
    pub max_end_to_end_s: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl LatencyReport {
    pub fn from_entries(entries: Vec<LatencyEntry>) -> Option<Self> {
        if entries.is_empty() {
            return None;
        }
        let det: Vec<f64> = entries.iter().map(LatencyEntry::detection_latency_s).collect();
        let e2e: Vec<f64> = entries.iter().map(LatencyEntry::end_to_end_s).collect();
        Some(Self {
            median_s: median(det.clone()),
            max_s: det.iter().copied().fold(f64::MIN, f64::max),
            median_end_to_end_s: median(e2e.clone()),
            max_end_to_end_s: e2e.iter().copied().fold(f64::MIN, f64::max),
            entries,
        })
    }

    pub fn for_detector(&self, detector_id: &str) -> Option<LatencyReport> {
        Self::from_entries(
            self.entries
                .iter()
                .filter(|e| e.detector_id == detector_id)
                .cloned()
                .collect(),
        )
    }
}

/// How one detector did against ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionScore {
    pub detector_id: String,
    pub blinks: usize,
    pub detected: usize,
    /// Events farther than the margin from every blink.
    pub false_events: usize,
    pub matched: Vec<LatencyEntry>,
}

/// Matches `detector_id`'s events to blinks one-to-one: each event goes to
/// the earliest still-unmatched blink with `onset <= t <= onset +
/// match_window_ns`. `processing_ns[i]` is the processing delay of
/// `events[i]`.
pub fn score_detections(
    labels: &[BlinkLabel],
    events: &[DetectionEvent],
    processing_ns: &[u64],
    detector_id: &str,
    match_window_ns: u64,
    false_margin_ns: u64,
) -> DetectionScore {
    let mut matched_blink = vec![false; labels.len()];
    let mut matched = Vec::new();
    let mut false_events = 0;
    for (i, e) in events.iter().enumerate().filter(|(_, e)| e.detector_id == detector_id) {
        let near_any = labels.iter().any(|l| {
            e.t_ns + false_margin_ns >= l.onset_ns && e.t_ns <= l.end_ns() + false_margin_ns
        });
        if !near_any {
            false_events += 1;
        }
        let candidate = labels
            .iter()
            .enumerate()
            .find(|(k, l)| !matched_blink[*k] && l.onset_ns <= e.t_ns && e.t_ns <= l.onset_ns + match_window_ns);
        if let Some((k, l)) = candidate {
            matched_blink[k] = true;
            matched.push(LatencyEntry {
                detector_id: detector_id.to_string(),
                blink_onset_ns: l.onset_ns,
                event_t_ns: e.t_ns,
                actuation_assert_ns: e.t_ns + processing_ns.get(i).copied().unwrap_or(0),
            });
        }
    }
    DetectionScore {
        detector_id: detector_id.to_string(),
        blinks: labels.len(),
        detected: matched.len(),
        false_events,
        matched,
    }
}
