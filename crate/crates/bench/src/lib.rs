//! Shared inputs for the benchmarks.

use pieeg_core::session::standard;
use pieeg_core::sim::{generate, NoiseModel};
use pieeg_core::{DeviceConfig, RawFrame};

/// `seconds` of the reference blink scenario at `rate` SPS, gain 24.
pub fn frames(rate: u32, seconds: f64) -> (DeviceConfig, Vec<(u64, RawFrame)>) {
    let device = DeviceConfig::new(rate, 24).expect("supported rate");
    let mut script = standard::standard_script();
    script.events.retain(|e| e.onset_s < seconds);
    let frames = generate(seconds, &device, &script, &NoiseModel::default().with_seed(1))
        .expect("valid scenario")
        .collect();
    (device, frames)
}

/// One channel of filtered-looking test signal.
pub fn tone(len: usize, rate: f64) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let t = i as f64 / rate;
            40.0 * (std::f64::consts::TAU * 5.0 * t).sin() + 10.0 * (std::f64::consts::TAU * 11.0 * t).sin()
        })
        .collect()
}
