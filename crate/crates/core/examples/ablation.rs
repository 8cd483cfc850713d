//! The whole chain at desk scale: synthetic data, encoder training,
//! embedding, then the context ablation arms trained and scored side by
//! side. Takes several minutes.

use asc::context::EmbeddingCache;
use asc::dataset::synthetic::{generate_synthetic, SyntheticConfig};
use asc::dataset::ClipSpec;
use asc::encoder::EncoderConfig;
use asc::eval::{format_ablation_csv, run_ablation, AblationConfig, AblationData, AblationSuite};
use asc::signal::MelConfig;
use asc::train::{embed_tracks, train_ste, AscTrainConfig, Schedule, SteTrainConfig};
use asc::Result;

fn main() -> Result<()> {
    let syn = SyntheticConfig::default();
    let enc = EncoderConfig::default();
    let spec = ClipSpec::new(&enc, 2.25 / 11.0, MelConfig::default())?;

    let ste_data = generate_synthetic(&SyntheticConfig { videos: 8, ..syn.clone() }, 1)?;
    let encoder = train_ste(
        &ste_data,
        &ste_data.tracks,
        &spec,
        enc,
        &SteTrainConfig {
            epochs: 8,
            clips_per_track: 2,
            verbose: true,
            ..SteTrainConfig::default()
        },
    )?
    .encoder;

    let train = generate_synthetic(&SyntheticConfig { videos: 8, ..syn.clone() }, 2)?;
    let eval = generate_synthetic(&SyntheticConfig { videos: 4, ..syn }, 3)?;
    let a = embed_tracks(&encoder, &train, &train.tracks, &spec, 32)?;
    let b = embed_tracks(&encoder, &eval, &eval.tracks, &spec, 32)?;
    let n = a.tracks().len();
    let mut all = a.tracks().to_vec();
    all.extend(b.tracks().iter().cloned());
    let cache = EmbeddingCache::new(a.dim(), all)?;
    let tracks: Vec<_> = train.tracks.iter().chain(&eval.tracks).cloned().collect();
    let train_idx: Vec<usize> = (0..n).collect();
    let eval_idx: Vec<usize> = (n..cache.tracks().len()).collect();

    let cfg = AblationConfig {
        seeds: vec![0],
        train: AscTrainConfig {
            epochs: 4,
            max_samples_per_epoch: 1500,
            schedule: Schedule {
                initial_lr: 3e-4,
                ..Schedule::ASC
            },
            ..AscTrainConfig::default()
        },
        ..AblationConfig::default()
    };
    let data = AblationData {
        cache: &cache,
        tracks: &tracks,
        train: &train_idx,
        eval: &eval_idx,
        encoder: Some(&encoder),
    };
    let rows = run_ablation(AblationSuite::Main, &data, &cfg)?;
    print!("{}", format_ablation_csv(&rows));
    Ok(())
}
