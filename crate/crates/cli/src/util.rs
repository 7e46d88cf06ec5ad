//! File plumbing shared by the subcommands: atomic writes, typed
//! readers/writers for the on-disk formats, and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use gsn_core::cube::{LabelRaster, TimeSeriesCube};
use gsn_core::phenology::PhenologyMap;

/// Writes via a temp file in the same directory and renames on success, so
/// a failed run never leaves a partial output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)
        .with_context(|| format!("creating directory {}", dir.display()))?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "out".to_string());
    let tmp = dir.join(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)
            .with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
        .with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))?;
    Ok(())
}

pub fn read_cube_file(path: &Path) -> Result<TimeSeriesCube> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    gsn_core::cube::read_cube(&mut bytes.as_slice())
        .with_context(|| format!("parsing cube {}", path.display()))
}

pub fn write_cube_file(path: &Path, cube: &TimeSeriesCube) -> Result<()> {
    let mut bytes = Vec::new();
    gsn_core::cube::write_cube(cube, &mut bytes)?;
    write_atomic(path, &bytes)
}

pub fn read_labels_file(path: &Path) -> Result<LabelRaster> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    gsn_core::cube::read_labels(&mut bytes.as_slice())
        .with_context(|| format!("parsing labels {}", path.display()))
}

pub fn write_labels_file(path: &Path, labels: &LabelRaster) -> Result<()> {
    let mut bytes = Vec::new();
    gsn_core::cube::write_labels(labels, &mut bytes)?;
    write_atomic(path, &bytes)
}

pub fn read_phenology_file(path: &Path) -> Result<PhenologyMap> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    gsn_core::phenology::read_phenology(&mut bytes.as_slice())
        .with_context(|| format!("parsing phenology {}", path.display()))
}

pub fn write_phenology_file(path: &Path, map: &PhenologyMap) -> Result<()> {
    let mut bytes = Vec::new();
    gsn_core::phenology::write_phenology(map, &mut bytes)?;
    write_atomic(path, &bytes)
}

/// One manifest per command, written next to the primary output.
pub struct Manifest {
    command: String,
    entries: Vec<(String, String)>,
    started: Instant,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            entries: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn set_path(&mut self, key: &str, path: &Path) {
        self.set(key, path.display());
    }

    /// Writes `<output>.manifest`; the duration line is the only
    /// run-to-run variable content.
    pub fn write_next_to(&self, output: &Path) -> Result<()> {
        let path = manifest_path(output);
        let mut text = String::new();
        text.push_str(&format!("command={}\n", self.command));
        text.push_str(&format!("version={}\n", env!("CARGO_PKG_VERSION")));
        for (k, v) in &self.entries {
            text.push_str(&format!("{k}={v}\n"));
        }
        text.push_str(&format!(
            "duration_seconds={:.3}\n",
            self.started.elapsed().as_secs_f64()
        ));
        write_atomic(&path, text.as_bytes())
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "run".to_string());
    name.push_str(".manifest");
    output.with_file_name(name)
}

/// Worker-thread cap from GSN_THREADS; absent or invalid means "default".
pub fn thread_cap() -> usize {
    match std::env::var("GSN_THREADS") {
        Ok(v) => v.parse::<usize>().ok().filter(|&n| n >= 1).unwrap_or(1),
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    }
}
