use std::fs;
use std::path::{Path, PathBuf};

use crate::context::ContextEnsemble;
use crate::error::{Error, Result};
use crate::refine::AttentionState;

/// Pixels per matrix cell in the rendered heat map.
const CELL_PX: u32 = 12;

/// Files written by [`export_attention`].
#[derive(Clone, Debug)]
pub struct AttentionExport {
    pub matrix: PathBuf,
    pub metadata: PathBuf,
    pub image: PathBuf,
}

/// Writes `B` (the first entry when batched) as `<stem>.txt` (one row per line,
/// shortest round-trip floats), `<stem>.meta.csv` (row index, clip, slot,
/// track, sample time) and a `<stem>.png` heat map with values clipped to
/// [0, 1].
pub fn export_attention(
    ensemble: &ContextEnsemble,
    attention: &AttentionState,
    dir: &Path,
    stem: &str,
) -> Result<AttentionExport> {
    let shape = attention.b.shape();
    let n = ensemble.clips * ensemble.speakers;
    let r = shape.len();
    if !(r == 2 || r == 3) || shape[r - 2] != n || shape[r - 1] != n {
        return Err(Error::shape(
            "export_attention",
            format!("attention {shape:?} does not match an ensemble of {n} entries"),
        ));
    }
    let b = &attention.b.data()[..n * n];
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let matrix = dir.join(format!("{stem}.txt"));
    fs::write(&matrix, format_matrix(b, n)).map_err(|e| Error::io(&matrix, e))?;

    let metadata = dir.join(format!("{stem}.meta.csv"));
    let mut meta = format!(
        "# video {} reference {} at {}\nrow,clip,slot,track_id,sample_time\n",
        ensemble.video_id, ensemble.reference_track_id, ensemble.reference_time
    );
    for l in 0..ensemble.clips {
        for s in 0..ensemble.speakers {
            meta.push_str(&format!(
                "{},{l},{s},{},{}\n",
                l * ensemble.speakers + s,
                ensemble.slot_track_ids[s],
                ensemble.sample_times[s][l]
            ));
        }
    }
    fs::write(&metadata, meta).map_err(|e| Error::io(&metadata, e))?;

    let image = dir.join(format!("{stem}.png"));
    render_heatmap(b, n).save(&image).map_err(|e| Error::Data(format!("{}: {e}", image.display())))?;
    Ok(AttentionExport { matrix, metadata, image })
}

pub fn format_matrix(values: &[f64], n: usize) -> String {
    let mut out = String::new();
    for row in values.chunks(n) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

/// Parses a square matrix written by [`format_matrix`] into (values, n).
pub fn parse_matrix(text: &str) -> Result<(Vec<f64>, usize)> {
    let mut values = Vec::new();
    let mut n = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|x| x.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                detail: e.to_string(),
            })?;
        if *n.get_or_insert(row.len()) != row.len() {
            return Err(Error::Parse {
                line: i + 1,
                detail: "ragged matrix".into(),
            });
        }
        values.extend(row);
    }
    let n = n.unwrap_or(0);
    if values.len() != n * n {
        return Err(Error::Parse {
            line: values.len() / n.max(1),
            detail: "matrix is not square".into(),
        });
    }
    Ok((values, n))
}

pub fn read_matrix(path: &Path) -> Result<(Vec<f64>, usize)> {
    parse_matrix(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn render_heatmap(b: &[f64], n: usize) -> image::RgbImage {
    let side = n as u32 * CELL_PX;
    image::RgbImage::from_fn(side, side, |x, y| {
        let v = b[(y / CELL_PX) as usize * n + (x / CELL_PX) as usize].clamp(0.0, 1.0);
        // dark blue through yellow
        let r = (255.0 * v) as u8;
        let g = (255.0 * v.sqrt()) as u8;
        let bl = (120.0 * (1.0 - v)) as u8;
        image::Rgb([r, g, bl])
    })
}

/// Mean Shannon entropy (nats) of the rows of a row-stochastic matrix.
pub fn mean_row_entropy(values: &[f64], n: usize) -> f64 {
    let rows = values.chunks(n);
    let count = rows.len().max(1);
    rows.map(|r| r.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum::<f64>())
        .sum::<f64>()
        / count as f64
}
