//! JSON-lines reading and writing.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> JsonlError + '_ {
    move |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads every non-blank line. A malformed line is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| JsonlError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads complete records, silently dropping a torn or unparsable tail.
/// Used when resuming after an interrupted run.
pub fn read_jsonl_lenient<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        if !line.ends_with('\n') {
            break;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if line.trim().is_empty() => {}
            Err(_) => break,
        }
    }
    Ok(out)
}

/// Complete, parsable lines as raw text, stopping at a torn tail.
pub fn read_lines_lenient(path: &Path) -> Result<Vec<String>, JsonlError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        if !line.ends_with('\n') || serde_json::from_str::<serde_json::Value>(line).is_err() {
            if line.trim().is_empty() {
                continue;
            }
            break;
        }
        out.push(line.trim_end_matches('\n').to_string());
    }
    Ok(out)
}

/// Writes pre-serialized lines to `path` via a temporary file and rename.
pub fn write_lines(path: &Path, lines: &[&str]) -> Result<(), JsonlError> {
    let tmp = path.with_extension("jsonl.tmp");
    let mut text = String::new();
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    std::fs::write(&tmp, text).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes `records` to `path` via a temporary file and rename.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
        for r in records {
            serde_json::to_writer(&mut w, r).map_err(|e| io_err(&tmp)(e.into()))?;
            w.write_all(b"\n").map_err(io_err(&tmp))?;
        }
        w.flush().map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_torn_tail() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x.jsonl");
        write_jsonl(&p, &[1, 2]).unwrap();
        append_jsonl(&p, &[3]).unwrap();
        assert_eq!(read_jsonl::<i32>(&p).unwrap(), vec![1, 2, 3]);
        std::fs::write(&p, "1\n2\n{\"a\":").unwrap();
        assert_eq!(read_jsonl_lenient::<i32>(&p).unwrap(), vec![1, 2]);
        assert!(read_jsonl::<i32>(&p).is_err());
    }
}
