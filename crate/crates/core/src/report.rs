//! Machine-readable reports: JSON with a deterministic body, CSV tables, atomic writes.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::RunConfig;
use crate::convergence::{Check, CheckKind};

pub const TOOL: &str = "minsurf-lab";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub checks: usize,
    pub enforced: usize,
    pub passed: usize,
    pub failed: Vec<String>,
    pub all_passed: bool,
}

/// The deterministic part of a report: identical configs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportBody {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub checks: Vec<Check>,
    pub data: serde_json::Value,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub metadata: Metadata,
    pub body: ReportBody,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl ReportBody {
    pub fn new(
        command: &str,
        config: &RunConfig,
        checks: Vec<Check>,
        data: serde_json::Value,
    ) -> Self {
        let enforced: Vec<&Check> = checks
            .iter()
            .filter(|c| c.kind != CheckKind::Info)
            .collect();
        let failed: Vec<String> = enforced
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.clone())
            .collect();
        let summary = Summary {
            checks: checks.len(),
            enforced: enforced.len(),
            passed: enforced.len() - failed.len(),
            all_passed: failed.is_empty(),
            failed,
        };
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config: config.clone(),
            config_hash: config.hash(),
            checks,
            data,
            summary,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report body serializes")
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

/// A CSV table with a fixed header.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(
            row.len(),
            self.header.len(),
            "row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_counts_only_enforced_checks() {
        let checks = vec![
            Check::upper_bound("a", "x", &[17], vec![0.0], 1e-10),
            Check::upper_bound("b", "x", &[17], vec![1.0], 1e-10),
            Check::info("c", "x", &[17], vec![3.0]),
        ];
        let body = ReportBody::new(
            "analyze",
            &RunConfig::default(),
            checks,
            serde_json::Value::Null,
        );
        assert_eq!(body.summary.enforced, 2);
        assert_eq!(body.summary.failed, vec!["b".to_string()]);
        assert!(!body.summary.all_passed);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = std::env::temp_dir().join(format!("minsurf-report-{}", std::process::id()));
        let p = dir.join("r.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn csv_renders_header_then_rows() {
        let mut t = CsvTable::new(&["u", "v", "q"]);
        t.push(vec!["0".into(), "1".into(), "2.5".into()]);
        assert_eq!(t.render(), "u,v,q\n0,1,2.5\n");
    }
}
