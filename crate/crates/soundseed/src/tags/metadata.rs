//! Line-delimited corpus metadata: one JSON record per track.

use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TagSet;

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One corpus entry: where the audio lives and what describes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackMetadata {
    /// Corpus-relative file path.
    pub path: String,
    pub tags: TagSet,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bpm: Option<u32>,
    pub duration_s: f64,
}

impl TrackMetadata {
    fn validate(&self) -> Result<(), String> {
        if self.duration_s <= 0.0 || !self.duration_s.is_finite() {
            return Err(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if let Some(bpm) = self.bpm {
            if !(40..=240).contains(&bpm) {
                return Err(format!("bpm {bpm} outside [40, 240]"));
            }
        }
        Ok(())
    }
}

pub fn write_metadata(entries: &[TrackMetadata], path: &Path) -> Result<(), MetadataError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut w, e)
            .map_err(|err| MetadataError::Parse { line: 0, reason: err.to_string() })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metadata(path: &Path) -> Result<Vec<TrackMetadata>, MetadataError> {
    parse_metadata(&std::fs::read_to_string(path)?)
}

pub fn parse_metadata(text: &str) -> Result<Vec<TrackMetadata>, MetadataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: TrackMetadata =
            serde_json::from_str(line).map_err(|err| MetadataError::Parse {
                line: lineno,
                reason: err.to_string(),
            })?;
        entry.validate().map_err(|reason| MetadataError::Parse {
            line: lineno,
            reason,
        })?;
        out.push(entry);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<TrackMetadata> {
        vec![
            TrackMetadata {
                path: "track_0000.wav".into(),
                tags: TagSet::from_raw(["Sine", "Low", "Note A3"]),
                bpm: None,
                duration_s: 4.096,
            },
            TrackMetadata {
                path: "track_0001.wav".into(),
                tags: TagSet::from_raw(["Click-Track", "120 BPM"]),
                bpm: Some(120),
                duration_s: 4.096,
            },
            TrackMetadata {
                path: "track_0002.wav".into(),
                tags: TagSet::from_raw(["Chord", "C Major", "High"]),
                bpm: None,
                duration_s: 4.096,
            },
        ]
    }

    #[test]
    fn round_trip_equality() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let entries = sample();
        write_metadata(&entries, &path).unwrap();
        let back = read_metadata(&path).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn missing_tags_field_reports_line() {
        let text = "{\"path\":\"a.wav\",\"tags\":[],\"duration_s\":1.0}\n{\"path\":\"b.wav\",\"duration_s\":1.0}\n";
        let err = parse_metadata(text).unwrap_err();
        match err {
            MetadataError::Parse { line, reason } => {
                assert_eq!(line, 2);
                assert!(reason.contains("tags"), "{reason}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_empty_list() {
        assert!(parse_metadata("").unwrap().is_empty());
    }

    #[test]
    fn bpm_out_of_range_rejected() {
        let text = "{\"path\":\"a.wav\",\"tags\":[\"X\"],\"bpm\":300,\"duration_s\":1.0}\n";
        let err = parse_metadata(text).unwrap_err();
        assert!(err.to_string().contains("bpm"), "{err}");
    }
}
