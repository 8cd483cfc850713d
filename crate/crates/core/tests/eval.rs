use asc::context::{assemble, Distortion, EmbeddingCache, EnsembleConfig, TrackEmbeddings};
use asc::eval::{
    average_precision, breakdown, export_attention, format_ablation_csv, format_matrix, map_over_videos,
    mean_row_entropy, parse_matrix, parse_scored_csv, pooled_ap, read_matrix, serialize_scored_csv, smooth_scores,
    AblationArm, AblationResult, AblationSuite, ApMode, FaceCountBucket, FaceSizeBucket, ScoredDetection,
};
use asc::refine::{AscConfig, AscModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Precision at each positive, with each item's rank counted directly:
/// strictly higher scores plus equal scores earlier in the input.
fn brute_force_ap(scored: &[(f64, u8)]) -> f64 {
    let rank = |i: usize| {
        1 + scored
            .iter()
            .enumerate()
            .filter(|&(j, s)| s.0 > scored[i].0 || (s.0 == scored[i].0 && j < i))
            .count()
    };
    let positives: Vec<usize> = (0..scored.len()).filter(|&i| scored[i].1 == 1).collect();
    let mut total = 0.0;
    for &p in &positives {
        let r = rank(p);
        let hits = positives.iter().filter(|&&q| rank(q) <= r).count();
        total += hits as f64 / r as f64;
    }
    total / positives.len() as f64
}

fn det(video: &str, track: &str, t: f64, score: f64, label: u8) -> ScoredDetection {
    ScoredDetection {
        video_id: video.into(),
        track_id: track.into(),
        timestamp: t,
        score,
        label,
        face_width_px: 100.0,
        face_count: 1,
    }
}

#[test]
fn ap_agrees_with_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.random_range(1..40);
        // Coarse scores so that ties are common.
        let scored: Vec<(f64, u8)> = (0..n)
            .map(|_| (rng.random_range(0..8) as f64 / 8.0, u8::from(rng.random_bool(0.4))))
            .collect();
        if scored.iter().all(|s| s.1 == 0) {
            assert!(average_precision(&scored).is_err());
            continue;
        }
        let a = average_precision(&scored).unwrap();
        assert!((a - brute_force_ap(&scored)).abs() < 1e-12, "{scored:?}");
        checked += 1;
    }
}

#[test]
fn ap_hand_examples() {
    assert_eq!(average_precision(&[(0.9, 1), (0.8, 1), (0.1, 0)]).unwrap(), 1.0);
    // ranks of positives 2 and 3: (1/2 + 2/3) / 2
    let ap = average_precision(&[(0.9, 0), (0.8, 1), (0.7, 1)]).unwrap();
    assert!((ap - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn ap_is_invariant_to_monotone_transforms(
        items in prop::collection::vec((0.0f64..1.0, 0u8..2), 1..50),
    ) {
        prop_assume!(items.iter().any(|x| x.1 == 1));
        let a = average_precision(&items).unwrap();
        let mapped: Vec<(f64, u8)> = items.iter().map(|&(s, y)| ((3.0 * s).exp() - 2.0, y)).collect();
        prop_assert!((a - average_precision(&mapped).unwrap()).abs() < 1e-12);
        prop_assert!(a > 0.0 && a <= 1.0);
    }

    #[test]
    fn smoothing_matches_a_direct_median(
        scores in prop::collection::vec(0.0f64..1.0, 1..25),
        window in 0.0f64..1.0,
    ) {
        let dets: Vec<ScoredDetection> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| det("v", "a", i as f64 * 0.1, s, 0))
            .collect();
        let smoothed = smooth_scores(&dets, window).unwrap();
        for (i, d) in smoothed.iter().enumerate() {
            let mut w: Vec<f64> = (0..scores.len())
                .filter(|&j| ((j as f64 - i as f64) * 0.1).abs() <= window / 2.0 + 1e-9)
                .map(|j| scores[j])
                .collect();
            w.sort_by(f64::total_cmp);
            let m = w.len();
            let median = if m % 2 == 1 { w[m / 2] } else { (w[m / 2 - 1] + w[m / 2]) / 2.0 };
            prop_assert!((d.score - median).abs() < 1e-15);
            prop_assert_eq!(d.label, dets[i].label);
        }
    }

    #[test]
    fn csv_round_trip_preserves_detections(
        rows in prop::collection::vec((0u32..3, 0u32..4, 0.0f64..100.0, 0.0f64..1.0, 0u8..2, 10.0f64..300.0, 1usize..6), 0..20),
    ) {
        let dets: Vec<ScoredDetection> = rows
            .iter()
            .map(|&(v, k, t, s, y, w, c)| ScoredDetection {
                video_id: format!("vid{v}"),
                track_id: format!("t{k}"),
                timestamp: t,
                score: s,
                label: y,
                face_width_px: w,
                face_count: c,
            })
            .collect();
        let mut buf = Vec::new();
        serialize_scored_csv(&dets, &mut buf).unwrap();
        prop_assert_eq!(parse_scored_csv(buf.as_slice()).unwrap(), dets);
    }
}

#[test]
fn smoothing_below_the_detection_gap_is_identity() {
    let dets: Vec<ScoredDetection> =
        (0..10).map(|i| det("v", "a", i as f64 * 0.04, (i * 37 % 11) as f64 / 11.0, 0)).collect();
    assert_eq!(smooth_scores(&dets, 0.07).unwrap(), dets);
}

#[test]
fn smoothing_stays_within_a_track() {
    let dets = vec![det("v", "a", 0.0, 0.0, 0), det("v", "b", 0.0, 1.0, 1), det("v", "a", 0.1, 0.2, 0)];
    let s = smooth_scores(&dets, 1.0).unwrap();
    assert_eq!(s[1].score, 1.0);
    assert!((s[0].score - 0.1).abs() < 1e-15);
}

#[test]
fn map_fixture() {
    let dets = vec![
        // video a: AP 1
        det("a", "x", 0.0, 0.9, 1),
        det("a", "x", 0.1, 0.2, 0),
        // video b: positive ranked second, AP 1/2
        det("b", "y", 0.0, 0.8, 0),
        det("b", "y", 0.1, 0.7, 1),
        // video c has no positive and is skipped
        det("c", "z", 0.0, 0.5, 0),
    ];
    assert!((map_over_videos(&dets).unwrap() - 0.75).abs() < 1e-15);
    // pooled ranking: .9+ .8- .7+ .5- .2- -> (1 + 2/3) / 2
    assert!((pooled_ap(&dets).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
}

#[test]
fn breakdown_fixture() {
    let mut dets = vec![
        det("a", "x", 0.0, 0.9, 1),
        det("a", "x", 0.1, 0.8, 0),
        det("a", "y", 0.0, 0.7, 1),
        det("a", "y", 0.1, 0.1, 0),
    ];
    dets[0].face_count = 1;
    dets[1].face_count = 1;
    dets[2].face_count = 3;
    dets[3].face_count = 3;
    dets[0].face_width_px = 40.0;
    dets[1].face_width_px = 200.0;
    dets[2].face_width_px = 40.0;
    dets[3].face_width_px = 200.0;
    let r = breakdown(&dets, ApMode::Pooled).unwrap();
    assert!((r.overall_map - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    assert_eq!(r.by_face_count[&FaceCountBucket::One], 1.0);
    assert_eq!(r.by_face_count[&FaceCountBucket::ThreeOrMore], 1.0);
    assert!(!r.by_face_count.contains_key(&FaceCountBucket::Two));
    assert_eq!(r.by_face_size[&FaceSizeBucket::Small], 1.0);
    // the large bucket holds no positive
    assert!(!r.by_face_size.contains_key(&FaceSizeBucket::Large));
}

#[test]
fn bucket_boundaries() {
    assert_eq!(FaceSizeBucket::of(63.9), FaceSizeBucket::Small);
    assert_eq!(FaceSizeBucket::of(64.0), FaceSizeBucket::Medium);
    assert_eq!(FaceSizeBucket::of(128.0), FaceSizeBucket::Medium);
    assert_eq!(FaceSizeBucket::of(128.1), FaceSizeBucket::Large);
    assert_eq!(FaceCountBucket::of(2), FaceCountBucket::Two);
    assert_eq!(FaceCountBucket::of(7).name(), "3+");
}

#[test]
fn uniform_matrix_entropy_and_round_trip() {
    let n = 6;
    let values = vec![1.0 / n as f64; n * n];
    assert!((mean_row_entropy(&values, n) - (n as f64).ln()).abs() < 1e-12);
    let (back, m) = parse_matrix(&format_matrix(&values, n)).unwrap();
    assert_eq!(m, n);
    assert_eq!(back, values);
    assert!(parse_matrix("1 2\n3\n").is_err());
}

fn toy_cache(d: usize) -> EmbeddingCache {
    let tracks = (0..3)
        .map(|k| {
            let timestamps: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
            TrackEmbeddings {
                video_id: "v".into(),
                track_id: format!("t{k}"),
                labels: vec![u8::from(k == 0); timestamps.len()],
                values: (0..timestamps.len() * d).map(|i| ((i * 13 + k) as f64 * 0.37).sin()).collect(),
                timestamps,
            }
        })
        .collect();
    EmbeddingCache::new(d, tracks).unwrap()
}

#[test]
fn attention_export_round_trips() {
    let d = 4;
    let cache = toy_cache(d);
    let ens = EnsembleConfig::with_spacing(3, 3, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = AscModel::new(
        AscConfig {
            clips: 3,
            speakers: 3,
            ..AscConfig::for_embedding(d)
        },
        &mut rng,
    )
    .unwrap();
    let e = assemble(&cache, 1.0, 0, &ens, &mut rng, Distortion::None).unwrap();
    let (_, state) = model.asc_forward(&e.to_tensor().unwrap()).unwrap();
    let state = state.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = export_attention(&e, &state, dir.path(), "att").unwrap();
    let (values, n) = read_matrix(&files.matrix).unwrap();
    assert_eq!(n, 9);
    for (a, b) in values.iter().zip(state.b.data()) {
        assert!((a - b).abs() < 1e-9);
    }
    for row in values.chunks(n) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let meta = std::fs::read_to_string(&files.metadata).unwrap();
    assert_eq!(meta.lines().filter(|l| !l.starts_with('#')).count(), 1 + 9);
    let img = image::open(&files.image).unwrap();
    assert_eq!(img.width(), img.height());
}

#[test]
fn ablation_csv_uses_arm_names() {
    let rows: Vec<AblationResult> = AblationSuite::Table2
        .arms()
        .into_iter()
        .map(|arm| AblationResult {
            arm,
            clips: 11,
            speakers: 3,
            window_s: None,
            seed: 0,
            map: 0.5,
            pooled_ap: 0.5,
        })
        .collect();
    let csv = format_ablation_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("arm,clips,speakers,window_s,seed,map,pooled_ap"));
    let names: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    for arm in AblationSuite::Table2.arms() {
        assert!(names.contains(&arm.name()));
        assert_eq!(arm.name().parse::<AblationArm>().unwrap(), arm);
    }
    assert!(names.contains(&"no_context") && names.contains(&"full"));
    assert!("all".parse::<AblationSuite>().is_ok());
    assert!("bogus".parse::<AblationSuite>().is_err());
}
