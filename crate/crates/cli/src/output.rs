use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::CliError;

pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn ensure(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.dir).map_err(|e| CliError::Numeric(format!("cannot create {}: {e}", self.dir.display())))
    }

    pub fn bytes(&self, name: &str, data: &[u8]) -> Result<PathBuf, CliError> {
        self.ensure()?;
        let p = self.path(name);
        fs::write(&p, data).map_err(|e| CliError::Numeric(format!("cannot write {}: {e}", p.display())))?;
        Ok(p)
    }

    pub fn text(&self, name: &str, data: &str) -> Result<PathBuf, CliError> {
        self.bytes(name, data.as_bytes())
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(name, &s)
    }

    pub fn with<F>(&self, name: &str, f: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> specwass::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.bytes(name, &buf)
    }

    pub fn write_meta(&self, command: &str, seed: u64, workers: usize, started: u64, status: &str) -> Result<(), CliError> {
        self.json(
            "meta.json",
            &serde_json::json!({
                "command": command,
                "seed": seed,
                "workers": workers,
                "started_unix": started,
                "finished_unix": unix_now(),
                "status": status,
                "version": env!("CARGO_PKG_VERSION"),
            }),
        )?;
        Ok(())
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Minimal gnuplot script for a whitespace-separated data file.
pub fn gnuplot(data: &Path, title: &str, xlabel: &str, ylabel: &str, plot: &str, logx: bool) -> String {
    let name = data.file_name().and_then(|s| s.to_str()).unwrap_or("data.dat");
    let mut s = String::new();
    s.push_str(&format!("set title \"{title}\"\nset xlabel \"{xlabel}\"\nset ylabel \"{ylabel}\"\n"));
    if logx {
        s.push_str("set logscale x 2\n");
    }
    s.push_str("set key outside\n");
    s.push_str(&format!("datafile = \"{name}\"\n"));
    s.push_str(plot);
    s.push('\n');
    s
}
