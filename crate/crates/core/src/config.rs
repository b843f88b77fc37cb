//! Run configuration: `key = value` files with command-line overrides.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::immersion::{JetMode, DEFAULT_RANK_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
    Both,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "both" => Ok(Self::Both),
            other => Err(LabError::InvalidConfig(format!(
                "unknown format `{other}` (expected json, csv or both)"
            ))),
        }
    }

    pub fn json(self) -> bool {
        matches!(self, Self::Json | Self::Both)
    }

    pub fn csv(self) -> bool {
        matches!(self, Self::Csv | Self::Both)
    }
}

/// Everything that determines a report body. Output location and format are excluded from the hash.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub surface: Option<String>,
    pub synthetic: Option<String>,
    pub params: BTreeMap<String, String>,
    pub resolutions: Vec<usize>,
    pub jet: String,
    /// Smallest admissible singular value of the chart Jacobian.
    pub metric_tol: f64,
    pub solver_tol: f64,
    /// Tolerance for machine-precision identities.
    pub identity_tol: f64,
    /// Tolerance for the normal complex structure axioms of a found structure.
    pub axiom_tol: f64,
    pub min_order: f64,
    /// Number of random ambient directions in the algebraic suite.
    pub directions: usize,
    pub seed: u64,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
    #[serde(skip)]
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            surface: None,
            synthetic: None,
            params: BTreeMap::new(),
            resolutions: vec![33, 65, 129],
            jet: "analytic".into(),
            metric_tol: DEFAULT_RANK_TOL,
            solver_tol: 1e-9,
            identity_tol: 1e-10,
            axiom_tol: 1e-8,
            min_order: 1.9,
            directions: 12,
            seed: 1,
            out_dir: None,
            format: OutputFormat::Json,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| LabError::InvalidConfig(format!("{key} = {v} is not a number")))
}

pub fn parse_resolutions(v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| LabError::InvalidConfig(format!("bad resolution `{s}`")))
        })
        .collect()
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "surface" => self.surface = Some(v.to_string()),
            "synthetic" => self.synthetic = Some(v.to_string()),
            "k" | "tmax" => {
                self.params.insert(key.trim().to_string(), v.to_string());
            }
            "res" | "resolutions" => self.resolutions = parse_resolutions(v)?,
            "jet" => {
                JetMode::parse(v).map_err(|e| LabError::InvalidConfig(e.to_string()))?;
                self.jet = v.to_string();
            }
            "metric_tol" => self.metric_tol = parse_f64(key, v)?,
            "solver_tol" => self.solver_tol = parse_f64(key, v)?,
            "identity_tol" => self.identity_tol = parse_f64(key, v)?,
            "axiom_tol" => self.axiom_tol = parse_f64(key, v)?,
            "min_order" => self.min_order = parse_f64(key, v)?,
            "directions" => {
                self.directions = v.parse().map_err(|_| {
                    LabError::InvalidConfig(format!("directions = {v} is not an integer"))
                })?
            }
            "seed" => {
                self.seed = v
                    .parse()
                    .map_err(|_| LabError::InvalidConfig(format!("seed = {v} is not an integer")))?
            }
            "out" => self.out_dir = Some(PathBuf::from(v)),
            "format" => self.format = OutputFormat::parse(v)?,
            k if k.starts_with("param.") => {
                self.params
                    .insert(k["param.".len()..].to_string(), v.to_string());
            }
            other => return Err(LabError::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `K=V` surface parameter.
    pub fn set_param(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| LabError::InvalidConfig(format!("parameter `{kv}` is not K=V")))?;
        self.params
            .insert(k.trim().to_string(), v.trim().to_string());
        Ok(())
    }

    /// Reads `key = value` lines; blank lines and `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                LabError::InvalidConfig(format!("line {}: expected key = value", n + 1))
            })?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(LabError::InvalidConfig("no resolutions given".into()));
        }
        if self.resolutions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::InvalidConfig(format!(
                "resolutions {:?} are not strictly increasing",
                self.resolutions
            )));
        }
        if let Some(r) = self.resolutions.iter().find(|r| **r < 8) {
            return Err(LabError::InvalidConfig(format!(
                "resolution {r} is below the minimum of 8"
            )));
        }
        for (name, v) in [
            ("metric_tol", self.metric_tol),
            ("solver_tol", self.solver_tol),
            ("identity_tol", self.identity_tol),
            ("axiom_tol", self.axiom_tol),
            ("min_order", self.min_order),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LabError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.directions == 0 {
            return Err(LabError::InvalidConfig(
                "directions must be at least 1".into(),
            ));
        }
        if let Some(s) = &self.synthetic {
            if s != "so4" {
                return Err(LabError::InvalidConfig(format!(
                    "unknown synthetic connection `{s}` (expected so4)"
                )));
            }
        }
        Ok(())
    }

    pub fn jet_mode(&self) -> Result<JetMode> {
        JetMode::parse(&self.jet)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_files_and_rejects_bad_values() {
        let cfg = RunConfig::from_text(
            "# study\nsurface = holo_graph\nparam.p = z^3\nres = 17, 33\nformat = both\n",
        )
        .unwrap();
        assert_eq!(cfg.surface.as_deref(), Some("holo_graph"));
        assert_eq!(cfg.params["p"], "z^3");
        assert_eq!(cfg.resolutions, vec![17, 33]);
        assert!(cfg.format.csv() && cfg.format.json());
        assert!(RunConfig::from_text("res = 65, 33")
            .unwrap()
            .validate()
            .is_err());
        assert!(RunConfig::from_text("solver_tol = -1")
            .unwrap()
            .validate()
            .is_err());
        assert!(RunConfig::from_text("colour = red").is_err());
        assert!(RunConfig::from_text("jet = spline").is_err());
    }

    #[test]
    fn hash_ignores_output_location() {
        let mut a = RunConfig::default();
        let b = a.clone();
        a.out_dir = Some("/tmp/x".into());
        a.format = OutputFormat::Both;
        assert_eq!(a.hash(), b.hash());
        a.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
