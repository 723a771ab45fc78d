//! CSV and JSON helpers shared by the record types.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: missing required column(s): {}", missing.join(", "))]
    MissingColumns { path: String, missing: Vec<String> },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl DataError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Read typed CSV rows, checking that every `required` column is present.
pub fn read_csv<T: DeserializeOwned, R: Read>(reader: R, required: &[&str], label: &str) -> Result<Vec<T>, DataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let malformed = |e: csv::Error| DataError::Malformed {
        path: label.to_string(),
        message: e.to_string(),
    };
    let headers = rdr.headers().map_err(malformed)?.clone();
    let missing: Vec<String> = required
        .iter()
        .filter(|c| !headers.iter().any(|h| h == **c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(DataError::MissingColumns {
            path: label.to_string(),
            missing,
        });
    }
    rdr.deserialize().map(|row| row.map_err(malformed)).collect()
}

pub fn read_csv_file<T: DeserializeOwned>(path: &Path, required: &[&str]) -> Result<Vec<T>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_csv(BufReader::new(file), required, &path.display().to_string())
}

pub fn write_csv<T: Serialize, W: Write>(writer: W, rows: &[T]) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row).map_err(|e| DataError::Invalid(e.to_string()))?;
    }
    wtr.flush().map_err(|e| DataError::Invalid(e.to_string()))
}

pub fn write_csv_file<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    write_csv(BufWriter::new(file), rows)
}

/// Write pretty JSON via a temporary file and rename, so readers never see a
/// partial document.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let tmp = path.with_extension("json.tmp");
    let text = serde_json::to_string_pretty(value).map_err(|e| DataError::Invalid(e.to_string()))?;
    std::fs::write(&tmp, text + "\n").map_err(|e| DataError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| DataError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DataError::Malformed {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
