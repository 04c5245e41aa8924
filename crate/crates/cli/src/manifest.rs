use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use graphyr::Result;

/// Provenance record written next to each artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_clock_s: f64,
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// `<artifact>.manifest.json`, or `manifest.json` inside a directory.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        artifact.join("manifest.json")
    } else {
        let name = artifact.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        artifact.with_file_name(format!("{name}.manifest.json"))
    }
}

impl RunManifest {
    pub fn write_next_to(&self, artifact: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&manifest_path(artifact), json.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data.csv");
        write_atomic(&out, b"x\n").unwrap();
        let m = RunManifest {
            command: "gen-data".into(),
            config: BTreeMap::from([("count".into(), "3".into())]),
            inputs: vec![],
            outputs: vec![out.clone()],
            seed: Some(4),
            version: "0.1.0".into(),
            wall_clock_s: 0.5,
        };
        m.write_next_to(&out).unwrap();
        let text = std::fs::read_to_string(dir.path().join("data.csv.manifest.json")).unwrap();
        assert_eq!(serde_json::from_str::<RunManifest>(&text).unwrap(), m);
        assert_eq!(manifest_path(dir.path()), dir.path().join("manifest.json"));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    }
}
