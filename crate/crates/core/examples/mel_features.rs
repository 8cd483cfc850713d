//! Log-mel spectrogram of a pure tone: the brightest band sits at the tone.

use asc::signal::{mel_spectrogram, AudioSnippet, MelConfig, MelExtractor};
use asc::Result;

fn main() -> Result<()> {
    let cfg = MelConfig::default();
    let sr = cfg.sample_rate_hz as f64;
    let freq = 1000.0;
    // one clip of 2.25 s / 11 at 16 kHz
    let n = (2.25 / 11.0 * sr).round() as usize;
    let samples = (0..n).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin()).collect();
    let audio = AudioSnippet::new(samples, cfg.sample_rate_hz)?;
    let mel = mel_spectrogram(&audio, &cfg)?;
    println!("{} samples -> {} bands x {} frames", n, mel.n_mels(), mel.n_frames());

    let frame = mel.n_frames() / 2;
    let (band, value) = (0..mel.n_mels())
        .map(|b| (b, mel.get(b, frame)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("bands");
    let centers = MelExtractor::new(cfg)?.band_centers_hz().to_vec();
    println!("tone {freq} Hz: peak band {band} (center {:.0} Hz), log energy {value:.2}", centers[band]);
    Ok(())
}
