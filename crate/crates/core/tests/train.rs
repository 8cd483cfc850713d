use std::collections::BTreeMap;

use asc::context::{EmbeddingCache, EnsembleConfig, TrackEmbeddings};
use asc::dataset::synthetic::{generate_synthetic, SyntheticConfig};
use asc::dataset::ClipSpec;
use asc::encoder::EncoderConfig;
use asc::refine::AscConfig;
use asc::signal::MelConfig;
use asc::tensor::{ParamStore, Tensor};
use asc::train::{format_metrics, lr_at, train_asc, train_ste, Adam, AscTrainConfig, Schedule, SteTrainConfig};
use asc::Error;
use proptest::prelude::*;

fn store(values: &[f64]) -> ParamStore {
    let mut p = ParamStore::new();
    p.insert("w", Tensor::param(values.to_vec(), &[values.len()]).unwrap());
    p
}

fn grads(g: &[f64]) -> BTreeMap<String, Vec<f64>> {
    BTreeMap::from([("w".to_string(), g.to_vec())])
}

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let mut p = store(&[0.5, -1.0, 2.0]);
    let mut adam = Adam::default();
    adam.apply(&mut p, &grads(&[0.0; 3]), 1e-2).unwrap();
    assert_eq!(p.get("w").unwrap().to_vec(), vec![0.5, -1.0, 2.0]);
    assert_eq!(adam.step, 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    // m_hat = g and v_hat = g^2 after one step, so the update is lr * g / (|g| + eps).
    let mut p = store(&[1.0]);
    let mut adam = Adam::default();
    adam.apply(&mut p, &grads(&[1.0]), 1e-3).unwrap();
    let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
    assert!((p.get("w").unwrap().to_vec()[0] - expected).abs() < 1e-15);
}

#[test]
fn adam_matches_a_hand_rolled_trace() {
    let gs = [0.3, -0.7, 0.2, 1.5, -0.1];
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.01);
    let (mut x, mut m, mut v) = (0.25f64, 0.0f64, 0.0f64);
    let mut p = store(&[x]);
    let mut adam = Adam::default();
    for (t, &g) in gs.iter().enumerate() {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32 + 1));
        let vh = v / (1.0 - b2.powi(t as i32 + 1));
        x -= lr * mh / (vh.sqrt() + eps);
        adam.apply(&mut p, &grads(&[g]), lr).unwrap();
    }
    assert!((p.get("w").unwrap().to_vec()[0] - x).abs() < 1e-14);
    assert!((adam.first_moment("w").unwrap()[0] - m).abs() < 1e-15);
    assert!((adam.second_moment("w").unwrap()[0] - v).abs() < 1e-15);
}

#[test]
fn adam_rejects_non_finite_gradients_by_path() {
    let mut p = store(&[1.0, 2.0]);
    let mut adam = Adam::default();
    let err = adam.apply(&mut p, &grads(&[f64::NAN, 0.0]), 1e-3).unwrap_err();
    match err {
        Error::NonFinite(msg) => assert!(msg.contains('w'), "{msg}"),
        other => panic!("unexpected error {other:?}"),
    }
    assert_eq!(p.get("w").unwrap().to_vec(), vec![1.0, 2.0]);
    assert_eq!(adam.step, 0);
}

#[test]
fn schedule_examples() {
    assert!((lr_at(&Schedule::STE, 0) - 3e-4).abs() < 1e-18);
    assert!((lr_at(&Schedule::STE, 39) - 3e-4).abs() < 1e-18);
    assert!((lr_at(&Schedule::STE, 40) - 3e-5).abs() < 1e-18);
    assert!((lr_at(&Schedule::ASC, 25) - 3e-8).abs() < 1e-20);
}

proptest! {
    #[test]
    fn adam_zero_learning_rate_is_identity(
        x in prop::collection::vec(-5.0f64..5.0, 1..6),
        seed in 0u64..1000,
    ) {
        let g: Vec<f64> = x.iter().enumerate().map(|(i, v)| (v * 1.7 + i as f64 + seed as f64).sin()).collect();
        let mut p = store(&x);
        let mut adam = Adam::default();
        adam.apply(&mut p, &grads(&g), 0.0).unwrap();
        prop_assert_eq!(p.get("w").unwrap().to_vec(), x);
    }

    #[test]
    fn step_decay_is_piecewise_constant(epoch in 0usize..200) {
        let s = Schedule::STE;
        let expected = 3e-4 * 0.1f64.powi((epoch / 40) as i32);
        prop_assert!((lr_at(&s, epoch) - expected).abs() <= 1e-18);
    }
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        frames: 3,
        crop_height: 8,
        crop_width: 8,
        mel_bands: 8,
        mel_frames: 21,
        stage_widths: vec![2, 3],
        blocks_per_stage: 1,
        stem_kernel: 3,
        ..EncoderConfig::default()
    }
}

fn tiny_mel() -> MelConfig {
    MelConfig {
        n_mels: 8,
        ..MelConfig::default()
    }
}

#[test]
fn ste_takes_one_step_per_track_at_batch_one() {
    let ds = generate_synthetic(
        &SyntheticConfig {
            videos: 2,
            duration_s: 6.0,
            ..SyntheticConfig::default()
        },
        4,
    )
    .unwrap();
    let tracks: Vec<_> = ds.tracks.iter().filter(|t| !t.is_empty()).take(10).cloned().collect();
    assert!(tracks.len() >= 2);
    let spec = ClipSpec::new(&tiny_encoder(), 2.25 / 11.0, tiny_mel()).unwrap();
    let cfg = SteTrainConfig {
        epochs: 1,
        batch_size: 1,
        val_fraction: 0.0,
        ..SteTrainConfig::default()
    };
    let out = train_ste(&ds, &tracks, &spec, tiny_encoder(), &cfg).unwrap();
    assert_eq!(out.steps as usize, tracks.len());
    assert_eq!(out.log.len(), 1);
}

#[test]
fn ste_training_is_reproducible() {
    let ds = generate_synthetic(
        &SyntheticConfig {
            videos: 2,
            duration_s: 6.0,
            ..SyntheticConfig::default()
        },
        9,
    )
    .unwrap();
    let spec = ClipSpec::new(&tiny_encoder(), 2.25 / 11.0, tiny_mel()).unwrap();
    let cfg = SteTrainConfig {
        epochs: 2,
        batch_size: 4,
        val_fraction: 0.5,
        ..SteTrainConfig::default()
    };
    let a = train_ste(&ds, &ds.tracks, &spec, tiny_encoder(), &cfg).unwrap();
    let b = train_ste(&ds, &ds.tracks, &spec, tiny_encoder(), &cfg).unwrap();
    assert_eq!(format_metrics(&a.log), format_metrics(&b.log));
    assert_eq!(a.encoder.params.to_checkpoint(), b.encoder.params.to_checkpoint());
}

/// Two videos of three tracks; the speaking track has embeddings shifted
/// along the first axis.
fn toy_cache(d: usize) -> EmbeddingCache {
    let mut tracks = Vec::new();
    for v in 0..2 {
        for k in 0..3 {
            let timestamps: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
            let labels: Vec<u8> = timestamps.iter().map(|&t| u8::from((t as usize) % 3 == k)).collect();
            let values = labels
                .iter()
                .enumerate()
                .flat_map(|(i, &y)| (0..d).map(move |j| if j == 0 { y as f64 * 2.0 - 1.0 } else { ((i * 7 + j * 3 + k) as f64).sin() }))
                .collect();
            tracks.push(TrackEmbeddings {
                video_id: format!("v{v}"),
                track_id: format!("t{k}"),
                timestamps,
                labels,
                values,
            });
        }
    }
    EmbeddingCache::new(d, tracks).unwrap()
}

#[test]
fn asc_training_is_reproducible_and_logs_each_epoch() {
    let d = 6;
    let cache = toy_cache(d);
    let ens = EnsembleConfig::with_spacing(3, 2, 0.2);
    let asc = AscConfig {
        clips: 3,
        speakers: 2,
        embedding_dim: d,
        ..AscConfig::for_embedding(d)
    };
    let cfg = AscTrainConfig {
        epochs: 2,
        schedule: Schedule {
            initial_lr: 1e-3,
            ..Schedule::ASC
        },
        ..AscTrainConfig::default()
    };
    let a = train_asc(&cache, &[0, 1, 2], &[3, 4, 5], asc.clone(), &ens, &cfg).unwrap();
    let b = train_asc(&cache, &[0, 1, 2], &[3, 4, 5], asc, &ens, &cfg).unwrap();
    assert_eq!(a.log.len(), 4);
    assert_eq!(format_metrics(&a.log), format_metrics(&b.log));
    assert_eq!(a.steps, 2 * 90u64.div_ceil(8));
    assert_eq!(a.model.params.to_checkpoint(), b.model.params.to_checkpoint());
}

#[test]
fn asc_training_rejects_mismatched_shapes() {
    let cache = toy_cache(6);
    let ens = EnsembleConfig::with_spacing(3, 2, 0.2);
    let asc = AscConfig {
        clips: 5,
        speakers: 2,
        embedding_dim: 6,
        ..AscConfig::for_embedding(6)
    };
    assert!(train_asc(&cache, &[0], &[], asc, &ens, &AscTrainConfig::default()).is_err());
}

#[test]
fn asc_training_leaves_the_embedding_cache_untouched() {
    let d = 6;
    let cache = toy_cache(d);
    let before = {
        let mut buf = Vec::new();
        cache.write_to(&mut buf).unwrap();
        buf
    };
    let ens = EnsembleConfig::with_spacing(3, 2, 0.2);
    let asc = AscConfig {
        clips: 3,
        speakers: 2,
        embedding_dim: d,
        ..AscConfig::for_embedding(d)
    };
    let cfg = AscTrainConfig {
        epochs: 1,
        ..AscTrainConfig::default()
    };
    train_asc(&cache, &[0, 1, 2], &[3, 4, 5], asc, &ens, &cfg).unwrap();
    let mut after = Vec::new();
    cache.write_to(&mut after).unwrap();
    assert_eq!(before, after);
}
