//! Assembles context ensembles from cached embeddings: which speakers fill
//! the slots, and which clip times each slot reads.

use asc::context::{assemble, Distortion, EmbeddingCache, EnsembleConfig, TrackEmbeddings};
use asc::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    // Four faces on a 0.225 s grid; "late" only appears after 3 s.
    let spans = [("anna", 0.0, 8.0), ("ben", 0.0, 8.0), ("cara", 1.0, 6.0), ("late", 3.0, 8.0)];
    let d = 2;
    let tracks = spans
        .iter()
        .enumerate()
        .map(|(k, &(name, a, b))| {
            let timestamps: Vec<f64> = (0..)
                .map(|i| a + 0.225 * i as f64)
                .take_while(|&t| t <= b + 1e-9)
                .collect();
            TrackEmbeddings {
                video_id: "demo".into(),
                track_id: name.into(),
                labels: vec![0; timestamps.len()],
                values: timestamps.iter().flat_map(|&t| [k as f64, t]).collect(),
                timestamps,
            }
        })
        .collect();
    let cache = EmbeddingCache::new(d, tracks)?;
    let cfg = EnsembleConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reference = cache.find("demo", "anna").expect("track");

    for t in [2.0, 5.0] {
        let e = assemble(&cache, t, reference, &cfg, &mut rng, Distortion::None)?;
        println!("t = {t} s, {} faces present", cache.present("demo", t, cfg.cooccurrence_tolerance_s).len());
        for (s, id) in e.slot_track_ids.iter().enumerate() {
            let times: Vec<String> = e.source_times[s].iter().map(|x| format!("{x:.2}")).collect();
            println!("  slot {s} {id:5} reads {}", times.join(" "));
        }
    }
    for distortion in [Distortion::ShuffleTime, Distortion::OutOfContext] {
        let e = assemble(&cache, 5.0, reference, &cfg, &mut rng, distortion)?;
        println!("{distortion:?}:");
        for (s, id) in e.slot_track_ids.iter().enumerate() {
            let times: Vec<String> = e.source_times[s].iter().map(|x| format!("{x:.2}")).collect();
            println!("  slot {s} {id:5} reads {}", times.join(" "));
        }
    }
    Ok(())
}
