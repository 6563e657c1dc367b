use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::DataError;

/// One historical behavior; `time_index` 1 is the oldest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorRecord {
    pub text: String,
    pub time_index: u32,
}

/// One labeled prediction instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub user_id: String,
    pub behaviors: Vec<BehaviorRecord>,
    #[serde(rename = "target")]
    pub target_text: String,
    pub label: u8,
}

impl Sample {
    /// Checks the record-level invariants: binary label, positive, unique,
    /// ascending time indices.
    pub fn validate(&self) -> Result<(), String> {
        if self.label > 1 {
            return Err(format!("label must be 0 or 1, got {}", self.label));
        }
        let mut prev = 0u32;
        for b in &self.behaviors {
            if b.time_index == 0 {
                return Err("time_index must be positive".into());
            }
            if b.time_index <= prev {
                return Err(format!(
                    "time_index must be unique and ascending, got {} after {prev}",
                    b.time_index
                ));
            }
            prev = b.time_index;
        }
        Ok(())
    }
}

const REQUIRED: [&str; 4] = ["user_id", "behaviors", "target", "label"];

fn parse_line(line: &str, line_no: usize) -> Result<Sample, DataError> {
    let value: Value = serde_json::from_str(line).map_err(|e| DataError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| DataError::Parse {
        line: line_no,
        message: "record is not an object".into(),
    })?;
    for field in REQUIRED {
        if !obj.contains_key(field) {
            return Err(DataError::Schema {
                line: line_no,
                message: format!("missing field `{field}`"),
            });
        }
    }
    let sample: Sample = serde_json::from_value(value).map_err(|e| DataError::Schema {
        line: line_no,
        message: e.to_string(),
    })?;
    sample.validate().map_err(|message| DataError::Schema {
        line: line_no,
        message,
    })?;
    Ok(sample)
}

/// Reads line-delimited JSON records; blank lines are skipped and line
/// numbers in errors are 1-based.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>, DataError> {
    let file = File::open(path.as_ref()).map_err(|e| DataError::Io(format!("{}: {e}", path.as_ref().display())))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, idx + 1)?);
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[Sample]) -> Result<(), DataError> {
    let file = File::create(path.as_ref()).map_err(|e| DataError::Io(format!("{}: {e}", path.as_ref().display())))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s).map_err(|e| DataError::Io(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| DataError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"user_id":"u1","behaviors":[{"text":"cat1 item3","time_index":1},{"text":"cat2 item9","time_index":2}],"target":"cat1 item4","label":1}"#;

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn empty_file_is_empty_collection() {
        let f = write(&[]);
        assert!(read_dataset(f.path()).unwrap().is_empty());
    }

    #[test]
    fn one_line_echo() {
        let f = write(&[GOOD]);
        let got = read_dataset(f.path()).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].user_id, "u1");
        assert_eq!(got[0].target_text, "cat1 item4");
        assert_eq!(got[0].label, 1);
        assert_eq!(got[0].behaviors[1].time_index, 2);
    }

    #[test]
    fn corrupt_line_named() {
        let mut lines = vec![GOOD; 10];
        lines[6] = r#"{"user_id":"u1","behaviors":[{"text":"#;
        let f = write(&lines);
        match read_dataset(f.path()) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_schema_error() {
        let f = write(&[GOOD, r#"{"user_id":"u2","behaviors":[],"label":0}"#]);
        match read_dataset(f.path()) {
            Err(DataError::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("target"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn non_binary_label_rejected() {
        let f = write(&[r#"{"user_id":"u","behaviors":[],"target":"x","label":2}"#]);
        assert!(matches!(read_dataset(f.path()), Err(DataError::Schema { line: 1, .. })));
    }
}
