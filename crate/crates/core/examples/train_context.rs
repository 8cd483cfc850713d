//! Trains the context model and its linear baseline on embeddings that
//! carry a noisy per-clip speaking cue, then scores held-out videos.

use asc::context::{Distortion, EmbeddingCache, EnsembleConfig, TrackEmbeddings};
use asc::dataset::synthetic::{generate_synthetic, SyntheticConfig, SyntheticDataset};
use asc::eval::{average_precision, mean_ap, score_asc, AblationData, ApMode};
use asc::refine::{AscConfig, AscVariant};
use asc::train::{split_cache, train_asc, AscTrainConfig, Schedule};
use asc::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const D: usize = 8;

/// Dimension 0 is the label plus heavy noise; the rest is noise.
fn noisy_cache(ds: &SyntheticDataset, seed: u64) -> Result<EmbeddingCache> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
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
                    (0..D)
                        .map(|j| if j == 0 { cue } else { 0.0 } + 1.5 * noise.sample(&mut rng))
                        .collect::<Vec<_>>()
                })
                .collect(),
        })
        .collect();
    EmbeddingCache::new(D, tracks)
}

fn main() -> Result<()> {
    let syn = SyntheticConfig {
        videos: 12,
        ..SyntheticConfig::default()
    };
    let cache = noisy_cache(&generate_synthetic(&syn, 11)?, 0)?;
    let (train, eval) = split_cache(&cache, 0.25, &mut ChaCha8Rng::seed_from_u64(0));
    let cue: Vec<(f64, u8)> = eval
        .iter()
        .flat_map(|&i| {
            let t = cache.track(i);
            (0..t.len()).map(move |j| (t.embedding(j, D)[0], t.labels[j]))
        })
        .collect();
    println!("single-clip cue AP {:.4}", average_precision(&cue)?);
    let ens = EnsembleConfig::default();
    let cfg = AscTrainConfig {
        epochs: 4,
        max_samples_per_epoch: 2000,
        schedule: Schedule {
            initial_lr: 1e-3,
            ..Schedule::ASC
        },
        verbose: true,
        ..AscTrainConfig::default()
    };
    for variant in [AscVariant::ContextLinear, AscVariant::Full] {
        println!("{variant:?}");
        let asc = AscConfig {
            variant,
            ..AscConfig::for_embedding(D)
        };
        let sub = EmbeddingCache::new(D, train.iter().map(|&i| cache.track(i).clone()).collect())?;
        let (tr, va) = split_cache(&sub, 0.2, &mut ChaCha8Rng::seed_from_u64(1));
        let out = train_asc(&sub, &tr, &va, asc, &ens, &cfg)?;
        let data = AblationData {
            cache: &cache,
            tracks: &[],
            train: &train,
            eval: &eval,
            encoder: None,
        };
        let dets = score_asc(&out.model, &data, &ens, Distortion::None, 0, 640.0, 64)?;
        println!("  held-out mAP {:.4}", mean_ap(&dets, ApMode::PerVideo)?);
    }
    Ok(())
}
