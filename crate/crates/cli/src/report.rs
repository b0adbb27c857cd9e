//! Report assembly and atomic file output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

/// Write via a temp file in the same directory plus rename, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

pub struct ReportBuilder {
    config_echo: Value,
    records: Vec<Value>,
    outputs: Vec<String>,
}

impl ReportBuilder {
    pub fn new(config_echo: Value) -> Self {
        Self {
            config_echo,
            records: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn push_record(&mut self, record: Value) {
        self.records.push(record);
    }

    pub fn note_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Write a CSV artifact and record it in the report.
    pub fn write_csv(&mut self, dir: &Path, name: &str, body: &str) -> std::io::Result<PathBuf> {
        let path = dir.join(name);
        write_atomic(&path, body)?;
        self.note_output(&path);
        Ok(path)
    }

    pub fn finish(self, dir: &Path) -> std::io::Result<PathBuf> {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let report = json!({
            "provenance": {
                "artifact": env!("CARGO_PKG_NAME"),
                "version": env!("CARGO_PKG_VERSION"),
                "timestamp_unix": timestamp,
            },
            "config": self.config_echo,
            "records": self.records,
            "outputs": self.outputs,
        });
        let path = dir.join("report.json");
        write_atomic(&path, &serde_json::to_string_pretty(&report).unwrap())?;
        Ok(path)
    }
}
