//! Run manifests: what was run, on which inputs, with which settings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// SHA-256 of a byte string, hex encoded.
pub fn digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Describes one invocation. The hash covers the subcommand, the resolved
/// settings, the input contents, the seed and the tool version; paths are
/// recorded but excluded, so the same experiment run from different
/// directories carries the same hash.
#[derive(Debug, Default)]
pub struct Manifest {
    subcommand: String,
    config_path: Option<PathBuf>,
    settings: String,
    inputs: Vec<(String, PathBuf, String)>,
    seed: Option<u64>,
    output: Option<PathBuf>,
}

impl Manifest {
    pub fn new(subcommand: &str) -> Self {
        Manifest {
            subcommand: subcommand.to_owned(),
            ..Default::default()
        }
    }

    pub fn config_path(mut self, path: Option<&Path>) -> Self {
        self.config_path = path.map(Path::to_path_buf);
        self
    }

    /// Resolved settings as `key=value` lines.
    pub fn settings(mut self, settings: impl Into<String>) -> Self {
        self.settings = settings.into();
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn output(mut self, dir: &Path) -> Self {
        self.output = Some(dir.to_path_buf());
        self
    }

    /// Reads an input file, records its content hash and returns its text.
    pub fn read_input(&mut self, role: &str, path: &Path) -> Result<String> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.add_input(role, path, text.as_bytes());
        Ok(text)
    }

    pub fn read_input_bytes(&mut self, role: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.add_input(role, path, &bytes);
        Ok(bytes)
    }

    fn add_input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        self.inputs.push((role.to_owned(), path.to_path_buf(), digest(bytes)));
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let mut field = |k: &str, v: &str| {
            h.update(k.as_bytes());
            h.update([0]);
            h.update(v.as_bytes());
            h.update([0]);
        };
        field("subcommand", &self.subcommand);
        field("settings", &self.settings);
        for (role, _, sum) in &self.inputs {
            field(role, sum);
        }
        field("seed", &self.seed.map_or(String::new(), |s| s.to_string()));
        field("version", VERSION);
        hex(&h.finalize())[..16].to_owned()
    }

    /// CSV comment payload, `manifest=<hash>`.
    pub fn tag(&self) -> String {
        format!("manifest={}", self.hash())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: &str| {
            let _ = writeln!(out, "{k}={v}");
        };
        put("hash", &self.hash());
        put("subcommand", &self.subcommand);
        put("version", VERSION);
        if let Some(seed) = self.seed {
            put("seed", &seed.to_string());
        }
        if let Some(p) = &self.config_path {
            put("config", &p.display().to_string());
        }
        if let Some(p) = &self.output {
            put("output", &p.display().to_string());
        }
        for (role, path, sum) in &self.inputs {
            put(&format!("input.{role}"), &path.display().to_string());
            put(&format!("input.{role}.sha256"), sum);
        }
        for line in self.settings.lines() {
            put("setting", line);
        }
        out
    }

    /// Creates the output directory and writes `manifest.txt` into it.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("manifest.txt");
        fs::write(&path, self.to_text()).with_context(|| format!("writing {}", path.display()))
    }
}
