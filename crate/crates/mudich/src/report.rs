//! Deterministic report emission: JSON with a fixed-field header (the
//! timestamp is isolated to a single header key) and plain CSV plot data.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Report header; every emitted JSON document starts with one. All fields
/// are reproducible except `generated_at`.
#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub scenario: String,
    pub seed: u64,
    pub generated_at: u64,
}

impl Header {
    pub fn new(command: &str, scenario: &str, seed: u64) -> Header {
        let generated_at = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Header {
            tool: "mudich".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            scenario: scenario.into(),
            seed,
            generated_at,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report<T: Serialize> {
    pub header: Header,
    pub body: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &str, scenario: &str, seed: u64, body: T) -> Report<T> {
        Report {
            header: Header::new(command, scenario, seed),
            body,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }
}

/// Writes CSV with a header row; numeric cells use Rust's shortest-float
/// formatting, which is reproducible run to run.
pub fn write_csv(path: &Path, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = String::new();
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Strips the timestamp line so reruns can be compared byte for byte.
pub fn strip_timestamp(report_json: &str) -> String {
    report_json
        .lines()
        .filter(|line| !line.trim_start().starts_with("\"generated_at\""))
        .collect::<Vec<_>>()
        .join("\n")
}
