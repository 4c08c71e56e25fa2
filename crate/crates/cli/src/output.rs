//! Run directories. Everything is staged in a hidden sibling directory and
//! renamed into place at the end, so a directory under `--out` is either
//! complete or absent.

use std::fs;
use std::path::{Path, PathBuf};

use pcdn_core::model::Catalog;
use pcdn_core::simnet::{csv_header, csv_row, RunOutput, ScenarioConfig};
use serde::Serialize;
use tempfile::TempDir;

use crate::CliError;

pub struct Staged {
    dir: TempDir,
    target: PathBuf,
}

impl Staged {
    pub fn new(target: &Path) -> Result<Self, CliError> {
        if target.exists() {
            let empty = target.is_dir() && fs::read_dir(target).map_err(CliError::io(target))?.next().is_none();
            if !empty {
                return Err(CliError::Validation(format!("output directory {} already exists and is not empty", target.display())));
            }
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(CliError::io(&parent))?;
        let name = target.file_name().map_or("out".into(), |n| n.to_string_lossy().into_owned());
        let dir = tempfile::Builder::new().prefix(&format!(".{name}.")).tempdir_in(&parent).map_err(CliError::io(&parent))?;
        Ok(Self { dir, target: target.to_path_buf() })
    }

    pub fn write(&self, rel: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.dir.path().join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(CliError::io(parent))?;
        }
        fs::write(&p, contents).map_err(CliError::io(&p))
    }

    pub fn commit(self) -> Result<PathBuf, CliError> {
        if self.target.is_dir() {
            fs::remove_dir(&self.target).map_err(CliError::io(&self.target))?;
        }
        let staged = self.dir.keep();
        fs::rename(&staged, &self.target).map_err(CliError::io(&self.target))?;
        Ok(self.target)
    }
}

/// Writes one run's files under `rel` inside the staged directory: the
/// effective config, its seed, metrics in JSON and CSV, and the event log.
/// A catalog loaded from a file is copied next to the config so the
/// directory alone reproduces the run.
pub fn write_run(staged: &Staged, rel: &Path, cfg: &ScenarioConfig, out: &RunOutput, row: &impl Serialize) -> Result<(), CliError> {
    let mut snapshot = cfg.clone();
    if let Some(entries) = &cfg.loaded_catalog {
        snapshot.catalog.file = Some("catalog.csv".into());
        staged.write(rel.join("catalog.csv"), Catalog { entries: entries.clone() }.to_csv())?;
    }
    staged.write(rel.join("config.toml"), snapshot.to_toml())?;
    staged.write(rel.join("seed"), format!("{}\n", cfg.seed))?;
    staged.write(rel.join("metrics.json"), out.report.to_json())?;
    staged.write(rel.join("metrics.csv"), csv_table([row]))?;
    let mut events = out.events.join("\n");
    if !events.is_empty() {
        events.push('\n');
    }
    staged.write(rel.join("events.jsonl"), events)
}

pub fn csv_table<'a, R: Serialize + 'a>(rows: impl IntoIterator<Item = &'a R>) -> String {
    let mut s = csv_header();
    s.push('\n');
    for r in rows {
        s.push_str(&csv_row(r));
        s.push('\n');
    }
    s
}
