use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gip_core::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads an input file, mapping failures to input errors that name the path.
pub fn read_input(path: &Path) -> Result<Vec<u8>, Error> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// `flag`, `config` or `drawn`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_source: Option<&'static str>,
    pub config: serde_json::Value,
    /// Input path to sha256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to sha256 of its contents.
    pub outputs: BTreeMap<String, String>,
    pub notes: Vec<String>,
    pub wall_seconds: f64,
}

/// Collects everything a command writes under its output directory.
pub struct RunOutput {
    dir: PathBuf,
    started: Instant,
    manifest: RunManifest,
}

impl RunOutput {
    pub fn create(dir: &Path, command: &str) -> anyhow::Result<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| anyhow::anyhow!("cannot create output directory {}: {e}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: None,
                seed_source: None,
                config: serde_json::Value::Null,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                notes: Vec::new(),
                wall_seconds: 0.0,
            },
        })
    }

    pub fn set_seed(&mut self, seed: u64, source: &'static str) {
        self.manifest.seed = Some(seed);
        self.manifest.seed_source = Some(source);
    }

    pub fn set_config(&mut self, config: serde_json::Value) {
        self.manifest.config = config;
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.manifest.notes.push(note.into());
    }

    /// Reads and digests an input.
    pub fn input(&mut self, path: &Path) -> Result<Vec<u8>, Error> {
        let bytes = read_input(path)?;
        self.manifest.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.manifest.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.write(name, &text)
    }

    pub fn finish(mut self) -> anyhow::Result<PathBuf> {
        self.manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_vec_pretty(&self.manifest)?;
        text.push(b'\n');
        write_atomic(&path, &text)?;
        Ok(path)
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        anyhow::anyhow!("cannot write {}: {e}", path.display())
    })
}
