use std::path::{Path, PathBuf};
use std::process::Command;

use rrsitr::{Hyper, NoiseSpec, TrainOptions};
use serde::Serialize;

/// Everything needed to reproduce one invocation, written before any work.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hyper: Option<Hyper>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub options: Option<TrainOptions>,
    pub seed: u64,
    pub datasets: Vec<DatasetRef>,
    pub outputs: Vec<PathBuf>,
    pub git: String,
    pub version: &'static str,
}

#[derive(Debug, Serialize)]
pub struct DatasetRef {
    pub role: &'static str,
    pub path: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_owned(),
            args: std::env::args().skip(1).collect(),
            hyper: None,
            options: None,
            seed,
            datasets: Vec::new(),
            outputs: Vec::new(),
            git: git_describe(),
            version: env!("CARGO_PKG_VERSION"),
        }
    }

    pub fn dataset(&mut self, role: &'static str, path: &Path, noise: Option<NoiseSpec>) {
        self.datasets.push(DatasetRef {
            role,
            path: path.to_owned(),
            noise,
        });
    }

    pub fn write(&self, path: &Path) -> rrsitr::Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_owned())
}

/// `dir/name`, recorded as an output.
pub fn output(manifest: &mut RunManifest, dir: &Path, name: &str) -> PathBuf {
    let p = dir.join(name);
    manifest.outputs.push(p.clone());
    p
}
