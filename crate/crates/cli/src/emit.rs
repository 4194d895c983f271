//! Artifact writing. Every file carries the run's config and its hash.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

pub struct Artifacts {
    dir: PathBuf,
    config_line: String,
    config: Value,
    sha: String,
    written: Vec<PathBuf>,
}

/// Full-precision, locale-independent float cell.
pub fn num(x: f64) -> String {
    format!("{x:.17e}")
}

impl Artifacts {
    pub fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let dir = cfg.out_dir();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self {
            dir,
            config_line: cfg.canonical(),
            config: serde_json::to_value(cfg).expect("config serializes"),
            sha: cfg.sha256(),
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut s = String::new();
        let _ = writeln!(s, "# config: {}", self.config_line);
        let _ = writeln!(s, "# config_sha256: {}", self.sha);
        s.push_str(&header.join(","));
        s.push('\n');
        for r in rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.write(name, s)
    }

    /// Pretty JSON with `config` and `config_sha256` added at the top level.
    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<(), CliError> {
        let mut v = serde_json::to_value(body).map_err(|e| CliError::internal(format!("serialize {name}: {e}")))?;
        if let Value::Object(m) = &mut v {
            m.insert("config".into(), self.config.clone());
            m.insert("config_sha256".into(), json!(self.sha));
        }
        let text = serde_json::to_string_pretty(&v).expect("value serializes");
        self.write(name, text + "\n")
    }

    fn write(&mut self, name: &str, content: String) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, content).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }
}

pub fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|a| format!("{prefix}_{a}")).collect()
}
