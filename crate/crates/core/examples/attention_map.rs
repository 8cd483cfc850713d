//! Trains a small context model, then writes the pairwise attention of one
//! ensemble as text, metadata CSV and a PNG heat map.
//!
//! Usage: `cargo run --example attention_map -- [OUT_DIR]`

use asc::context::{assemble, Distortion, EmbeddingCache, EnsembleConfig, TrackEmbeddings};
use asc::dataset::synthetic::{generate_synthetic, SyntheticConfig};
use asc::eval::{export_attention, mean_row_entropy};
use asc::refine::AscConfig;
use asc::train::{split_cache, train_asc, AscTrainConfig, Schedule};
use asc::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const D: usize = 8;

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("asc_attention"));
    let ds = generate_synthetic(
        &SyntheticConfig {
            videos: 8,
            speaker_weights: vec![0.0, 0.0, 1.0],
            ..SyntheticConfig::default()
        },
        21,
    )?;
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let tracks = ds
        .tracks
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| TrackEmbeddings {
            video_id: t.video_id.clone(),
            track_id: t.track_id.clone(),
            timestamps: t.timestamps(),
            labels: t.detections.iter().map(|d| d.label).collect(),
            values: t
                .detections
                .iter()
                .flat_map(|d| {
                    let cue = 2.0 * d.label as f64 - 1.0;
                    (0..D).map(|j| if j == 0 { cue } else { 0.0 } + noise.sample(&mut rng)).collect::<Vec<_>>()
                })
                .collect(),
        })
        .collect();
    let cache = EmbeddingCache::new(D, tracks)?;
    let (tr, va) = split_cache(&cache, 0.25, &mut ChaCha8Rng::seed_from_u64(1));
    let ens = EnsembleConfig::default();
    let model = train_asc(
        &cache,
        &tr,
        &va,
        AscConfig::for_embedding(D),
        &ens,
        &AscTrainConfig {
            epochs: 3,
            max_samples_per_epoch: 1500,
            schedule: Schedule {
                initial_lr: 1e-3,
                ..Schedule::ASC
            },
            ..AscTrainConfig::default()
        },
    )?
    .model;

    // first speaking and first silent detection of a held-out track
    let track = va[0];
    let t = cache.track(track);
    for (name, want) in [("speaking", 1u8), ("silent", 0u8)] {
        let Some(j) = t.labels.iter().position(|&y| y == want) else {
            continue;
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = assemble(&cache, t.timestamps[j], track, &ens, &mut rng, Distortion::None)?;
        let (score, state) = model.asc_forward(&e.to_tensor()?)?;
        let state = state.expect("full model has attention");
        let files = export_attention(&e, &state, &out, name)?;
        let n = e.clips * e.speakers;
        println!(
            "{name} reference at {:.2} s: score {score:.3}, mean row entropy {:.3} nats (uniform {:.3})",
            t.timestamps[j],
            mean_row_entropy(state.b.data(), n),
            (n as f64).ln()
        );
        println!("  {}", files.image.display());
    }
    Ok(())
}
