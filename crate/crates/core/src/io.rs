//! Report writers. Every command writes `manifest.json` next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::energy::SCHEMA_VERSION;
use crate::error::Result;

/// Self-description of a run.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub schema_version: u32,
    pub command: String,
    /// Scenario echoed as TOML.
    pub scenario: Option<String>,
    pub eta: Option<f64>,
    /// Window end times.
    pub windows: Vec<f64>,
    pub tolerances: serde_json::Value,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub pass: bool,
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Manifest {
        Manifest {
            tool: "crackbal",
            version: env!("CARGO_PKG_VERSION"),
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            scenario: None,
            eta: None,
            windows: Vec::new(),
            tolerances: serde_json::Value::Null,
            seed,
            outputs: Vec::new(),
            pass: false,
        }
    }
}

/// Output directory that records what it writes.
pub struct OutDir {
    pub root: PathBuf,
    pub written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<OutDir> {
        fs::create_dir_all(root)?;
        Ok(OutDir { root: root.to_path_buf(), written: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.root.join(name)
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(p)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        fs::write(p, s)?;
        Ok(())
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(p, body)?;
        Ok(())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<()> {
        manifest.outputs = self.written.clone();
        self.json("manifest.json", &manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        a: f64,
        b: usize,
    }

    #[test]
    fn writes_and_lists_outputs() {
        let dir = std::env::temp_dir().join(format!("crackbal-io-{}", std::process::id()));
        let mut out = OutDir::create(&dir).unwrap();
        out.csv("t.csv", &[Row { a: 0.5, b: 1 }]).unwrap();
        out.finish(Manifest::new("test", 0)).unwrap();
        assert_eq!(fs::read_to_string(dir.join("t.csv")).unwrap(), "a,b\n0.5,1\n");
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["outputs"][0], "t.csv");
        fs::remove_dir_all(dir).unwrap();
    }
}
