//! Generates a synthetic conversation set and writes it to disk.
//!
//! Usage: `cargo run --example synthetic_data -- [OUT_DIR]`

use asc::dataset::synthetic::{generate_synthetic, SyntheticConfig, SyntheticDataset};
use asc::Result;

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("asc_synthetic"));
    let cfg = SyntheticConfig {
        videos: 6,
        ..SyntheticConfig::default()
    };
    let ds = generate_synthetic(&cfg, 7)?;
    let detections: usize = ds.tracks.iter().map(|t| t.len()).sum();
    let positives: usize = ds.tracks.iter().flat_map(|t| &t.detections).filter(|d| d.label == 1).count();
    println!(
        "{} videos, {} tracks, {detections} detections, {:.1}% speaking",
        ds.videos.len(),
        ds.tracks.len(),
        100.0 * positives as f64 / detections as f64
    );
    for v in &ds.videos {
        let visible = v.speakers.iter().filter(|s| s.visible).count();
        println!(
            "  {}: {visible} visible speakers, {} utterances, {} distractor episodes",
            v.video_id,
            v.utterances.len(),
            v.distractors.len()
        );
    }
    ds.save(&out)?;
    let back = SyntheticDataset::load(&out)?;
    assert_eq!(back.tracks, ds.tracks);
    println!("saved to {}", out.display());
    Ok(())
}
