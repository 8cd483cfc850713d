use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::ScoredDetection;
use crate::error::{Error, Result};

/// Reads `video_id, track_id, timestamp, score, label, face_width,
/// face_count` rows; a header row starting with `video_id` is skipped.
pub fn parse_scored_csv(input: impl Read) -> Result<Vec<ScoredDetection>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(row + 1, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        if row == 0 && record.get(0) == Some("video_id") {
            continue;
        }
        if record.len() != 7 {
            return Err(Error::Parse {
                line,
                detail: format!("expected 7 columns, found {}", record.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            line,
            detail: format!("bad {what}"),
        };
        let num = |i: usize, what: &str| record[i].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(what));
        let score = num(3, "score")?;
        if !(0.0..=1.0).contains(&score) {
            return Err(bad("score"));
        }
        let label: u8 = record[4].parse().ok().filter(|l| *l <= 1).ok_or_else(|| bad("label"))?;
        out.push(ScoredDetection {
            video_id: record[0].to_string(),
            track_id: record[1].to_string(),
            timestamp: num(2, "timestamp")?,
            score,
            label,
            face_width_px: num(5, "face_width")?,
            face_count: record[6].parse().map_err(|_| bad("face_count"))?,
        });
    }
    Ok(out)
}

pub fn read_scored_csv(path: &Path) -> Result<Vec<ScoredDetection>> {
    parse_scored_csv(File::open(path).map_err(|e| Error::io(path, e))?)
}

pub fn serialize_scored_csv(detections: &[ScoredDetection], output: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    let err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["video_id", "track_id", "timestamp", "score", "label", "face_width", "face_count"])
        .map_err(err)?;
    for d in detections {
        w.write_record([
            d.video_id.clone(),
            d.track_id.clone(),
            d.timestamp.to_string(),
            d.score.to_string(),
            d.label.to_string(),
            d.face_width_px.to_string(),
            d.face_count.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scored_csv(detections: &[ScoredDetection], path: &Path) -> Result<()> {
    serialize_scored_csv(detections, File::create(path).map_err(|e| Error::io(path, e))?)
}
