//! Artifact writing and the run manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, MANIFEST_VERSION};

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskSeed {
    pub task: String,
    pub base_seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub subcommand: String,
    pub config_hash: String,
    pub code_version: String,
    pub seeds: Vec<TaskSeed>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<OutputEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Collects the files of one subcommand run under `dir`.
pub struct Run {
    pub dir: PathBuf,
    subcommand: String,
    started: f64,
    outputs: Vec<OutputEntry>,
    pub seeds: Vec<TaskSeed>,
    pub gnuplot: bool,
}

impl Run {
    pub fn new(root: &Path, subcommand: &str, gnuplot: bool) -> std::io::Result<Self> {
        let dir = root.join(subcommand);
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, subcommand: subcommand.into(), started: now(), outputs: Vec::new(), seeds: Vec::new(), gnuplot })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.outputs.retain(|o| o.path != name);
        self.outputs.push(OutputEntry { path: name.into(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        self.write(name, &bytes)
    }

    /// A gnuplot script plotting `y` against `x` columns of a CSV file.
    pub fn plot(&mut self, csv: &str, x: usize, ys: &[(usize, &str)], logy: bool) -> std::io::Result<()> {
        if !self.gnuplot {
            return Ok(());
        }
        let stem = csv.trim_end_matches(".csv");
        let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\n");
        if logy {
            s.push_str("set logscale y\n");
        }
        s.push_str(&format!("set terminal pngcairo size 800,500\nset output '{stem}.png'\nplot "));
        let parts: Vec<String> = ys.iter().map(|(c, style)| format!("'{csv}' using {x}:{c} with {style}")).collect();
        s.push_str(&parts.join(", "));
        s.push('\n');
        self.write(&format!("{stem}.gp"), s.as_bytes())
    }

    /// Write `config.json` and `manifest.json`; the manifest lists every
    /// other file with its checksum.
    pub fn finish(mut self, config: &ExperimentConfig) -> std::io::Result<RunManifest> {
        let cfg = config.to_json();
        self.write("config.json", cfg.as_bytes())?;
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let m = RunManifest {
            manifest_version: MANIFEST_VERSION,
            subcommand: self.subcommand.clone(),
            config_hash: sha256_hex(cfg.as_bytes()),
            code_version: env!("CARGO_PKG_VERSION").into(),
            seeds: self.seeds.clone(),
            started_unix: self.started,
            finished_unix: now(),
            outputs: self.outputs.clone(),
        };
        let mut text = serde_json::to_string_pretty(&m).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(m)
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_checksums_match_files() {
        let root = std::env::temp_dir().join(format!("tunnelqmc-out-{}", std::process::id()));
        let mut run = Run::new(&root, "unit", true).unwrap();
        run.write_csv("a.csv", &["x", "y"], &[vec![num(1.0), num(0.5)]]).unwrap();
        run.plot("a.csv", 1, &[(2, "lines")], false).unwrap();
        let dir = run.dir.clone();
        let m = run.finish(&ExperimentConfig::default()).unwrap();
        assert_eq!(m.outputs.len(), 3);
        for o in &m.outputs {
            let bytes = std::fs::read(dir.join(&o.path)).unwrap();
            assert_eq!(sha256_hex(&bytes), o.sha256);
        }
        std::fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
