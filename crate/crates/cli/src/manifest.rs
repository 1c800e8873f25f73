//! Run manifests: enough to reproduce a command and to trace its outputs.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub sfe: &'static str,
    pub cli: &'static str,
    pub space_format: u32,
    pub benchmark_schema: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub prng: &'static str,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub versions: Versions,
    pub started_at: String,
    pub finished_at: Option<String>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut r = BufReader::new(File::open(path)?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = r.read(&mut buf)?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Manifest location for an output file or directory: `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

impl RunManifest {
    pub fn new(command: &'static str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command_line: std::env::args().collect(),
            command,
            config,
            seed,
            prng: sfe::optimizer::PRNG_NAME,
            inputs: Vec::new(),
            outputs: Vec::new(),
            versions: Versions {
                sfe: sfe::VERSION,
                cli: env!("CARGO_PKG_VERSION"),
                space_format: sfe::persist::FORMAT_VERSION,
                benchmark_schema: sfe::benchmark::SCHEMA_VERSION,
            },
            started_at: now(),
            finished_at: None,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> std::io::Result<()> {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn finish(&mut self) {
        self.finished_at = Some(now());
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")
    }
}
