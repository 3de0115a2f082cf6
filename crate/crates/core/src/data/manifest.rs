use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_dataset, Dataset, NoiseSpec};
use crate::error::Result;

/// JSON sidecar naming an RRSE file and how its noise was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Dataset file, resolved relative to the manifest's directory.
    pub file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Loads either a raw `.rrse` file or a `.json` manifest pointing at one.
/// Returns the noise provenance when a manifest supplies it.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<(Dataset, Option<NoiseSpec>)> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let manifest = DatasetManifest::read(path)?;
        let file = match path.parent() {
            Some(dir) if manifest.file.is_relative() => dir.join(&manifest.file),
            _ => manifest.file.clone(),
        };
        Ok((read_dataset(file)?, manifest.noise))
    } else {
        Ok((read_dataset(path)?, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, write_dataset};

    #[test]
    fn manifest_resolves_relative_file() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(5, 2, 4, 1, 1, 0.3, 0).unwrap();
        write_dataset(&ds, dir.path().join("a.rrse")).unwrap();
        let m = DatasetManifest {
            file: "a.rrse".into(),
            noise: Some(NoiseSpec { rho: 0.2, seed: 4 }),
        };
        m.write(dir.path().join("a.json")).unwrap();
        let (loaded, noise) = load_dataset(dir.path().join("a.json")).unwrap();
        assert_eq!(loaded, ds);
        assert_eq!(noise, m.noise);
    }
}
