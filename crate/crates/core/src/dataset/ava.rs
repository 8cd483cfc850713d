use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Detection, FaceTrack};
use crate::error::{Error, Result};

pub const LABEL_SPEAKING: &str = "SPEAKING_AUDIBLE";
pub const LABEL_NOT_SPEAKING: &str = "NOT_SPEAKING";

const COLUMNS: usize = 8;

/// Parses rows of `video_id, frame_timestamp, x1, y1, x2, y2, label,
/// face_track_id` into tracks, in order of first appearance. A leading
/// header row starting with `video_id` is skipped. Every label other than
/// `SPEAKING_AUDIBLE` maps to not speaking.
pub fn parse_ava_csv(input: impl Read) -> Result<Vec<FaceTrack>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut tracks: Vec<FaceTrack> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(row + 1, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        if row == 0 && record.get(0) == Some("video_id") {
            continue;
        }
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != COLUMNS {
            return Err(Error::Parse {
                line,
                detail: format!("expected {COLUMNS} columns, found {}", record.len()),
            });
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    detail: format!("{name} {:?} is not a number", &record[i]),
                })
        };
        let timestamp = num(1, "frame_timestamp")?;
        let bbox = [num(2, "x1")?, num(3, "y1")?, num(4, "x2")?, num(5, "y2")?];
        let label_text = &record[6];
        if label_text.is_empty() {
            return Err(Error::Parse {
                line,
                detail: "empty label".into(),
            });
        }
        let label = u8::from(label_text == LABEL_SPEAKING);
        let key = (record[0].to_string(), record[7].to_string());
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            tracks.push(FaceTrack {
                video_id: key.0.clone(),
                track_id: key.1.clone(),
                detections: Vec::new(),
            });
            tracks.len() - 1
        });
        let track = &mut tracks[slot];
        if let Some(last) = track.detections.last() {
            if timestamp <= last.timestamp {
                return Err(Error::Parse {
                    line,
                    detail: format!(
                        "timestamp {timestamp} does not follow {} in track {}/{}",
                        last.timestamp, key.0, key.1
                    ),
                });
            }
        }
        track.detections.push(Detection { timestamp, bbox, label });
    }
    for t in &tracks {
        t.validate()?;
    }
    Ok(tracks)
}

pub fn read_ava_csv(path: &Path) -> Result<Vec<FaceTrack>> {
    parse_ava_csv(File::open(path).map_err(|e| Error::io(path, e))?)
}

/// Writes tracks in the same column layout, one row per detection, without
/// a header. Timestamps use the shortest representation that parses back
/// to the same value.
pub fn serialize_ava_csv(tracks: &[FaceTrack], output: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(output);
    for t in tracks {
        for d in &t.detections {
            let label = if d.label == 1 { LABEL_SPEAKING } else { LABEL_NOT_SPEAKING };
            w.write_record([
                t.video_id.as_str(),
                &d.timestamp.to_string(),
                &d.bbox[0].to_string(),
                &d.bbox[1].to_string(),
                &d.bbox[2].to_string(),
                &d.bbox[3].to_string(),
                label,
                t.track_id.as_str(),
            ])
            .map_err(|e| Error::Data(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ava_csv(tracks: &[FaceTrack], path: &Path) -> Result<()> {
    serialize_ava_csv(tracks, File::create(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_gives_no_tracks() {
        assert!(parse_ava_csv("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn two_rows_one_track() {
        let csv = "v1,0.5,0.1,0.1,0.3,0.4,NOT_SPEAKING,v1:0\nv1,0.54,0.1,0.1,0.3,0.4,SPEAKING_AUDIBLE,v1:0\n";
        let t = parse_ava_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].detections.len(), 2);
        assert_eq!(t[0].detections[1].label, 1);
        assert_eq!(t[0].detections[0].label, 0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let csv = "v1,0.5,0.1,0.1,0.3,0.4,NOT_SPEAKING,a\nv1,zz,0.1,0.1,0.3,0.4,NOT_SPEAKING,a\n";
        match parse_ava_csv(csv.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let short = "v1,0.5,0.1\n";
        assert!(matches!(parse_ava_csv(short.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let backwards = "v,1.0,0.1,0.1,0.3,0.4,NOT_SPEAKING,a\nv,2.0,0.1,0.1,0.3,0.4,NOT_SPEAKING,b\nv,0.5,0.1,0.1,0.3,0.4,NOT_SPEAKING,a\n";
        assert!(matches!(parse_ava_csv(backwards.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn header_row_is_skipped() {
        let csv = "video_id,frame_timestamp,x1,y1,x2,y2,label,face_track_id\nv,0.1,0.1,0.1,0.3,0.4,SPEAKING_NOT_AUDIBLE,a\n";
        let t = parse_ava_csv(csv.as_bytes()).unwrap();
        assert_eq!(t[0].detections[0].label, 0);
    }
}
