use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Provenance record written next to every output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub parameters: BTreeMap<String, String>,
    /// `None` for commands that draw no random numbers.
    pub seed: Option<u64>,
    pub tool_version: String,
    pub timestamp: String,
    pub outputs: Vec<String>,
    pub warning_count: usize,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.to_string(),
            parameters: BTreeMap::new(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            outputs: Vec::new(),
            warning_count: 0,
            warnings: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn warn(&mut self, message: String) {
        self.warning_count += 1;
        self.warnings.push(message);
    }
}

/// `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    sibling(out, "manifest.json")
}

/// `out` with `.suffix` appended to the full file name.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    out.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_names() {
        assert_eq!(manifest_path(Path::new("a/train.ds")), PathBuf::from("a/train.ds.manifest.json"));
        assert_eq!(sibling(Path::new("m.json"), "loss.csv"), PathBuf::from("m.json.loss.csv"));
    }

    #[test]
    fn warnings_are_counted() {
        let mut m = RunManifest::new("trace-extract", None);
        m.warn("a".into());
        m.warn("b".into());
        assert_eq!(m.warning_count, 2);
        let json = serde_json::to_string(&m).unwrap();
        let back: RunManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
