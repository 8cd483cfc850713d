//! Average precision, per-bucket breakdowns and temporal median smoothing
//! on scored detections, written to and read back from CSV.

use asc::dataset::synthetic::{generate_synthetic, SyntheticConfig};
use asc::dataset::faces_at;
use asc::eval::{breakdown, mean_ap, read_scored_csv, smooth_scores, write_scored_csv, ApMode, ScoredDetection};
use asc::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<()> {
    let ds = generate_synthetic(
        &SyntheticConfig {
            videos: 8,
            ..SyntheticConfig::default()
        },
        5,
    )?;
    // A scorer that sees the label through independent per-detection noise,
    // squashed to a probability.
    let noise = Normal::new(0.0, 0.8).expect("valid normal");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut dets = Vec::new();
    for t in &ds.tracks {
        for d in &t.detections {
            dets.push(ScoredDetection {
                video_id: t.video_id.clone(),
                track_id: t.track_id.clone(),
                timestamp: d.timestamp,
                score: 1.0 / (1.0 + (-(d.label as f64 + noise.sample(&mut rng))).exp()),
                label: d.label,
                face_width_px: d.width_px(640.0),
                face_count: faces_at(&ds.tracks, &t.video_id, d.timestamp, 0.1).max(1),
            });
        }
    }
    let report = breakdown(&dets, ApMode::PerVideo)?;
    println!("{} detections, mAP {:.4}", dets.len(), report.overall_map);
    for (bucket, ap) in &report.by_face_count {
        println!("  {} face(s): {ap:.4}", bucket.name());
    }
    for (bucket, ap) in &report.by_face_size {
        println!("  size {}: {ap:.4}", bucket.name());
    }
    for window in [0.5, 1.0, 2.25, 4.0] {
        let smoothed = smooth_scores(&dets, window)?;
        println!("median over {window} s: mAP {:.4}", mean_ap(&smoothed, ApMode::PerVideo)?);
    }
    let path = std::env::temp_dir().join("asc_scores.csv");
    write_scored_csv(&dets, &path)?;
    assert_eq!(read_scored_csv(&path)?.len(), dets.len());
    println!("scores written to {}", path.display());
    Ok(())
}
