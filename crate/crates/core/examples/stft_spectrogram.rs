//! Short-time Fourier transform of a two-tone signal: prints the loudest
//! bin of each frame, then writes the map for external plotting.

use std::f64::consts::PI;

use trls::signal::{stft, StftConfig};

fn main() -> trls::Result<()> {
    let sr = 64.0;
    // 4 Hz for the first half, 12 Hz for the second.
    let x: Vec<f64> = (0..256)
        .map(|i| {
            let t = i as f64 / sr;
            let f = if i < 128 { 4.0 } else { 12.0 };
            (2.0 * PI * f * t).sin()
        })
        .collect();
    let cfg = StftConfig {
        hop: Some(16),
        ..StftConfig::default()
    };
    let spec = stft(&x, 1, sr, &cfg)?;
    println!("{} frames x {} bins", spec.frames(), spec.bins());
    for f in 0..spec.frames() {
        let peak = (0..spec.bins())
            .max_by(|&a, &b| spec.data.at(&[f, a, 0]).total_cmp(&spec.data.at(&[f, b, 0])))
            .unwrap();
        println!("t={:5.2}s  peak {:5.1} Hz", spec.frame_times[f], spec.bin_freqs[peak]);
    }
    let out = std::env::temp_dir().join("trls-spectrogram");
    spec.export(&out)?;
    println!("written to {}", out.display());
    Ok(())
}
