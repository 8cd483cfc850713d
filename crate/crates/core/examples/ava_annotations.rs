//! Reads face-track annotations in the AVA-ActiveSpeaker CSV layout.
//!
//! Usage: `cargo run --example ava_annotations -- [CSV]`

use asc::dataset::read_ava_csv;
use asc::Result;

fn main() -> Result<()> {
    let path = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ava_50.csv")
    });
    let tracks = read_ava_csv(&path)?;
    println!("{}: {} tracks", path.display(), tracks.len());
    for t in &tracks {
        let speaking = t.detections.iter().filter(|d| d.label == 1).count();
        println!(
            "  {}/{}: {} detections over {:.2}-{:.2} s, {speaking} speaking",
            t.video_id,
            t.track_id,
            t.len(),
            t.start(),
            t.end()
        );
    }
    Ok(())
}
