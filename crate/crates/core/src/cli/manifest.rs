use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{invalid, runtime, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

/// Record of one command invocation. Contains no timestamps so re-running
/// the same command reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved settings.
    pub config: Value,
    /// SHA-256 of the compact JSON form of `config`.
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileRef>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileRef>,
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Input files read so far, in read order.
#[derive(Debug, Default)]
pub struct Inputs(Vec<FileRef>);

impl Inputs {
    pub fn read(&mut self, path: &Path) -> CliResult<String> {
        let bytes = fs::read(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let text = String::from_utf8(bytes).map_err(|_| invalid(format!("{}: not UTF-8", path.display())))?;
        let r = FileRef { path: path.display().to_string(), sha256: sha256(text.as_bytes()) };
        if !self.0.contains(&r) {
            self.0.push(r);
        }
        Ok(text)
    }
}

/// Output directory of one command being written.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn new(
        dir: &Path,
        command: &str,
        config: Value,
        seeds: BTreeMap<String, u64>,
        inputs: Inputs,
    ) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
        let compact = serde_json::to_string(&config).expect("config serializes");
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                config_hash: sha256(compact.as_bytes()),
                config,
                seeds,
                inputs: inputs.0,
                outputs: Vec::new(),
            },
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn citation(&self) -> Value {
        serde_json::json!({"file": MANIFEST_FILE, "config_hash": self.manifest.config_hash})
    }

    fn record(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        self.manifest.outputs.push(FileRef { path: name.into(), sha256: sha256(bytes) });
        Ok(())
    }

    /// Writes `value` as pretty JSON with a `manifest` citation added to
    /// the top-level object.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut v = serde_json::to_value(value).map_err(runtime)?;
        if let Value::Object(map) = &mut v {
            map.insert("manifest".into(), self.citation());
        }
        let text = serde_json::to_string_pretty(&v).expect("value serializes");
        self.record(name, text.as_bytes())
    }

    /// Writes text. JSON objects and SVG documents get a citation; any other
    /// text is written unchanged.
    pub fn write_text(&mut self, name: &str, text: &str) -> CliResult<()> {
        if name.ends_with(".json") {
            let v: Value = serde_json::from_str(text).map_err(runtime)?;
            return self.write_json(name, &v);
        }
        if name.ends_with(".svg") {
            let hash = &self.manifest.config_hash;
            let cited = match text.find('>') {
                Some(i) => format!("{}\n<!-- manifest: {MANIFEST_FILE} config_hash {hash} -->{}", &text[..=i], &text[i + 1..]),
                None => text.to_string(),
            };
            return self.record(name, cited.as_bytes());
        }
        self.record(name, text.as_bytes())
    }

    /// Cites and records a file some other writer already put in the
    /// output directory.
    pub fn adopt(&mut self, name: &str) -> CliResult<()> {
        let path = self.path(name);
        let text = fs::read_to_string(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        self.write_text(name, &text)
    }

    pub fn finish(self) -> CliResult<()> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        let path = self.path(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
    }
}
