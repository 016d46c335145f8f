//! Run manifests: what a command was asked to do and the hashes of what it
//! read and wrote.
//!
//! A manifest sits next to the outputs as `<command>.run_manifest.json`.
//! File paths are stored relative to the manifest's directory so that two
//! runs with the same layout produce the same manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mcf_core::hashing::sha256_hex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub use mcf_core::synth::PIPELINE_VERSION;
pub const MANIFEST_SUFFIX: &str = ".run_manifest.json";

/// Prefix for inputs that are compiled into the binary rather than read from disk.
pub const BUNDLED_PREFIX: &str = "bundled:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub pipeline_version: String,
    pub seed: u64,
    pub config: Value,
    pub config_hash: String,
    pub catalog_versions: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Hash of this manifest with this field blank.
    pub manifest_hash: String,
}

pub fn manifest_path(dir: &Path, command: &str) -> PathBuf {
    dir.join(format!("{command}{MANIFEST_SUFFIX}"))
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    Ok(sha256_hex(bytes))
}

fn relative_to(path: &Path, base: &Path) -> String {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let rel = pathdiff::diff_paths(abs(path), abs(base)).unwrap_or_else(|| abs(path));
    rel.to_string_lossy().replace('\\', "/")
}

pub struct ManifestBuilder {
    dir: PathBuf,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, config: &impl Serialize, dir: &Path) -> Self {
        let config = serde_json::to_value(config).expect("config serializes");
        let config_hash = sha256_hex(
            serde_json::to_vec(&(command, PIPELINE_VERSION, seed, &config))
                .expect("config serializes"),
        );
        Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                pipeline_version: PIPELINE_VERSION.to_string(),
                seed,
                config,
                config_hash,
                catalog_versions: BTreeMap::new(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                manifest_hash: String::new(),
            },
        }
    }

    pub fn catalog(&mut self, system: impl ToString, version: &str) -> &mut Self {
        self.manifest
            .catalog_versions
            .insert(system.to_string(), version.to_string());
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self, CliError> {
        let h = hash_file(path)?;
        self.manifest.inputs.insert(relative_to(path, &self.dir), h);
        Ok(self)
    }

    pub fn bundled_input(&mut self, name: &str, content: &str) -> &mut Self {
        self.manifest
            .inputs
            .insert(format!("{BUNDLED_PREFIX}{name}"), sha256_hex(content));
        self
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self, CliError> {
        let h = hash_file(path)?;
        self.manifest
            .outputs
            .insert(relative_to(path, &self.dir), h);
        Ok(self)
    }

    /// Registers every output that exists, skipping absent optional files.
    pub fn outputs_if_present(&mut self, paths: &[PathBuf]) -> Result<&mut Self, CliError> {
        for p in paths.iter().filter(|p| p.exists()) {
            self.output(p)?;
        }
        Ok(self)
    }

    pub fn write(mut self) -> Result<RunManifest, CliError> {
        self.manifest.manifest_hash = self_hash(&self.manifest);
        std::fs::create_dir_all(&self.dir).map_err(CliError::io(&self.dir))?;
        let path = manifest_path(&self.dir, &self.manifest.command);
        let text =
            serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(CliError::io(&path))?;
        Ok(self.manifest)
    }
}

fn self_hash(m: &RunManifest) -> String {
    let mut blank = m.clone();
    blank.manifest_hash.clear();
    sha256_hex(serde_json::to_vec(&blank).expect("manifest serializes"))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub path: String,
    pub expected: String,
    /// `None` when the file is gone.
    pub actual: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verification {
    pub manifest_hash_ok: bool,
    pub checked: usize,
    pub mismatches: Vec<Mismatch>,
}

impl Verification {
    pub fn ok(&self) -> bool {
        self.manifest_hash_ok && self.mismatches.is_empty()
    }
}

/// Re-hashes every recorded file. Bundled inputs are checked against
/// `bundled`, which maps their names to the content this binary carries.
pub fn verify(
    path: &Path,
    bundled: &dyn Fn(&str) -> Option<&'static str>,
) -> Result<Verification, CliError> {
    let m = read_manifest(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for (rel, expected) in m.inputs.iter().chain(&m.outputs) {
        checked += 1;
        let actual = match rel.strip_prefix(BUNDLED_PREFIX) {
            Some(name) => bundled(name).map(sha256_hex),
            None => std::fs::read(dir.join(rel)).ok().map(sha256_hex),
        };
        if actual.as_deref() != Some(expected.as_str()) {
            mismatches.push(Mismatch {
                path: rel.clone(),
                expected: expected.clone(),
                actual,
            });
        }
    }
    Ok(Verification {
        manifest_hash_ok: self_hash(&m) == m.manifest_hash,
        checked,
        mismatches,
    })
}

/// Catalog version recorded by whichever manifest in `file`'s directory
/// lists `file` among its outputs.
pub fn recorded_catalog_version(file: &Path, system: &str) -> Option<String> {
    let dir = file
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = file.file_name()?.to_string_lossy().to_string();
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .collect();
    entries.sort();
    entries
        .iter()
        .filter(|p| p.to_string_lossy().ends_with(MANIFEST_SUFFIX))
        .filter_map(|p| read_manifest(p).ok())
        .find(|m| m.outputs.contains_key(&name))
        .and_then(|m| m.catalog_versions.get(system).cloned())
}
