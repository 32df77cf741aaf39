//! Run manifests: the resolved configuration of a command plus content hashes
//! of everything it read and wrote.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    /// SHA-256 over `blob <len>\0` followed by the content, as git does.
    pub oid: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn blob_oid(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        bytes: bytes.len() as u64,
        oid: blob_oid(&bytes),
    })
}

/// Where the manifest of `output` goes: `<output>.manifest.json`, or
/// `manifest.json` inside a directory.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("manifest.json")
    } else {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}

impl Manifest {
    pub fn new(command: &str, config: impl Serialize) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.push(digest_file(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        self.outputs.push(digest_file(path)?);
        Ok(self)
    }

    /// Writes the manifest next to `anchor` and returns its path.
    pub fn write_for(&self, anchor: &Path) -> Result<PathBuf> {
        let path = manifest_path(anchor);
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Object keys present in `given` but absent from `known`, as dotted paths.
pub fn unknown_keys(given: &Value, known: &Value) -> Vec<String> {
    fn walk(given: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
        let (Value::Object(g), Value::Object(k)) = (given, known) else {
            return;
        };
        for (key, v) in g {
            let path = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            match k.get(key) {
                Some(kv) => walk(v, kv, &path, out),
                None => out.push(path),
            }
        }
    }
    let mut out = Vec::new();
    walk(given, known, "", &mut out);
    out
}

/// Reads a JSON config file. Missing fields take their defaults; fields the
/// type does not know about are rejected so that typos do not pass silently.
pub fn load_config<T>(path: &Path) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let raw: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let parsed: T = serde_json::from_value(raw.clone())
        .with_context(|| format!("{} does not match the expected schema", path.display()))?;
    let unknown = unknown_keys(&raw, &serde_json::to_value(&parsed)?);
    if !unknown.is_empty() {
        anyhow::bail!("{}: unknown field(s) {}", path.display(), unknown.join(", "));
    }
    Ok(parsed)
}
