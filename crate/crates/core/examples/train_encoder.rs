//! Trains the two-stream short-term encoder on a small synthetic set and
//! embeds every detection into a cache.
//!
//! Usage: `cargo run --example train_encoder -- [EPOCHS]`

use asc::dataset::synthetic::{generate_synthetic, SyntheticConfig};
use asc::dataset::ClipSpec;
use asc::encoder::EncoderConfig;
use asc::signal::MelConfig;
use asc::train::{embed_tracks, train_ste, SteTrainConfig};
use asc::Result;

fn main() -> Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let ds = generate_synthetic(
        &SyntheticConfig {
            videos: 6,
            duration_s: 20.0,
            ..SyntheticConfig::default()
        },
        1,
    )?;
    let enc = EncoderConfig::default();
    let spec = ClipSpec::new(&enc, 2.25 / 11.0, MelConfig::default())?;
    println!(
        "{} tracks; clips of {} frames + {} audio samples",
        ds.tracks.len(),
        spec.frames,
        spec.audio_samples()
    );
    let out = train_ste(
        &ds,
        &ds.tracks,
        &spec,
        enc,
        &SteTrainConfig {
            epochs,
            val_fraction: 0.34,
            verbose: true,
            ..SteTrainConfig::default()
        },
    )?;
    println!("kept epoch {} after {} steps", out.best_epoch, out.steps);

    let cache = embed_tracks(&out.encoder, &ds, &ds.tracks, &spec, 32)?;
    let n: usize = cache.tracks().iter().map(|t| t.len()).sum();
    let path = std::env::temp_dir().join("asc_example.emb");
    cache.save(&path)?;
    println!("{n} embeddings of size {} written to {}", cache.dim(), path.display());
    Ok(())
}
