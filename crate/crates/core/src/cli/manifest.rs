use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const RUN_LOG: &str = "log.jsonl";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Every regular file under `dir`, relative and sorted.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                out.push(path.strip_prefix(root).expect("walk stays under root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

/// Provenance of one subcommand run. Only `unix_time` and `workers` vary between
/// reruns of the same configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub workers: usize,
    pub unix_time: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64, config_sha256: String, workers: usize) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.into(),
            seed,
            config_sha256,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            workers,
            unix_time: 0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), digest_file(path)?);
        Ok(())
    }

    /// Digests every file in `dir` except the manifest itself, then writes it.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        for rel in list_files(dir)? {
            if rel != Path::new(RUN_MANIFEST) {
                self.outputs.insert(rel.display().to_string(), digest_file(&dir.join(&rel))?);
            }
        }
        self.unix_time = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let path = dir.join(RUN_MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&self).expect("manifests serialize")).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Serialize)]
struct LogLine<'a> {
    level: &'a str,
    stage: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    frame: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    code: Option<&'a str>,
    message: &'a str,
}

/// Structured progress and warning log, one JSON object per line.
pub struct RunLog {
    stage: String,
    out: BufWriter<File>,
    path: PathBuf,
}

impl RunLog {
    pub fn create(dir: &Path, stage: &str) -> Result<Self> {
        let path = dir.join(RUN_LOG);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            stage: stage.into(),
            out: BufWriter::new(file),
            path,
        })
    }

    fn write(&mut self, line: LogLine<'_>) -> Result<()> {
        let text = serde_json::to_string(&line).expect("log lines serialize");
        writeln!(self.out, "{text}").and_then(|_| self.out.flush()).map_err(|e| Error::io(&self.path, e))
    }

    pub fn info(&mut self, message: &str) -> Result<()> {
        let stage = self.stage.clone();
        self.write(LogLine {
            level: "info",
            stage: &stage,
            frame: None,
            code: None,
            message,
        })
    }

    pub fn warn(&mut self, frame: Option<usize>, code: &str, message: &str) -> Result<()> {
        let stage = self.stage.clone();
        self.write(LogLine {
            level: "warn",
            stage: &stage,
            frame,
            code: Some(code),
            message,
        })
    }
}
