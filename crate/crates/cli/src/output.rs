//! Artifact writing: atomic file replacement, CSV framing and the run sidecar.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Write via a temporary sibling file and rename, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp = path.to_path_buf();
    tmp.set_file_name(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// A CSV document with a schema comment line and a header row.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        Csv {
            text: format!("# schema: {schema}\n{}\n", header.join(",")),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Rows of a CSV written by [`Csv`]: checks the schema line and returns the
/// header and the data rows split on commas.
pub fn read_csv(text: &str, schema: &str) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines();
    let want = format!("# schema: {schema}");
    if lines.next() != Some(want.as_str()) {
        return Err(CliError::Parse(format!("expected `{want}`")));
    }
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Parse("missing header row".into()))?
        .split(',')
        .map(String::from)
        .collect();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    if let Some(r) = rows.iter().find(|r| r.len() != header.len()) {
        return Err(CliError::Parse(format!("row has {} fields, header has {}", r.len(), header.len())));
    }
    Ok((header, rows))
}

/// Shortest decimal that reads back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Sidecar describing a run. Holds the only non-reproducible fields (the timestamp).
#[derive(Serialize)]
pub struct RunMeta<'a> {
    pub command: &'a str,
    pub args: Vec<String>,
    pub version: &'a str,
    pub seed: u64,
    pub unix_time: u64,
    pub artifacts: Vec<String>,
}

pub fn write_run_meta(out: &Path, command: &str, seed: u64, artifacts: &[PathBuf]) -> CliResult<PathBuf> {
    let meta = RunMeta {
        command,
        args: std::env::args().collect(),
        version: env!("CARGO_PKG_VERSION"),
        seed,
        unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        artifacts: artifacts
            .iter()
            .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
            .collect(),
    };
    let path = out.join("run-meta.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Runtime(e.to_string()))?;
    atomic_write(&path, text.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut c = Csv::new("demo v1", &["a", "b"]);
        c.row(&[num(0.1), num(1e8)]);
        c.row(&["x".into(), num(-2.5)]);
        let (h, rows) = read_csv(c.as_str(), "demo v1").unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.1);
        assert_eq!(rows[0][1].parse::<f64>().unwrap(), 1e8);
        assert!(read_csv(c.as_str(), "demo v2").is_err());
        assert!(read_csv("# schema: demo v1\na,b\n1\n", "demo v1").is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.csv");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        let names: Vec<_> = std::fs::read_dir(dir.path().join("sub")).unwrap().collect();
        assert_eq!(names.len(), 1);
    }
}
