use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::CliError;

/// Where a command sends one output document.
#[derive(Clone, Debug)]
pub enum Sink {
    Stdout,
    File(PathBuf),
}

impl Sink {
    pub fn parse(arg: &Path) -> Self {
        if arg.as_os_str() == "-" {
            Sink::Stdout
        } else {
            Sink::File(arg.to_path_buf())
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Sink::Stdout => "-".to_string(),
            Sink::File(p) => p.display().to_string(),
        }
    }

    /// Writes the whole document at once.
    pub fn write(&self, bytes: &[u8]) -> Result<(), CliError> {
        match self {
            Sink::Stdout => {
                let mut out = io::stdout().lock();
                out.write_all(bytes)
                    .and_then(|_| out.flush())
                    .map_err(|e| CliError::unwritable("standard output", e))
            }
            Sink::File(path) => fs::write(path, bytes)
                .map_err(|e| CliError::unwritable(&path.display().to_string(), e)),
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("in-memory JSON serialization");
    bytes.push(b'\n');
    bytes
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub tool_version: &'static str,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub fn new(command: &str, started: Instant) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION"),
            wall_clock_s: started.elapsed().as_secs_f64(),
        }
    }

    /// Writes the manifest next to `primary`; nothing is written for stdout.
    pub fn write_beside(&self, primary: &Sink) -> Result<(), CliError> {
        match primary {
            Sink::Stdout => Ok(()),
            Sink::File(path) => {
                let mut name = path.file_name().unwrap_or_default().to_os_string();
                name.push(".manifest.json");
                Sink::File(path.with_file_name(name)).write(&to_json(self))
            }
        }
    }

    pub fn write_into(&self, dir: &Path) -> Result<(), CliError> {
        Sink::File(dir.join("manifest.json")).write(&to_json(self))
    }
}
