//! On-disk layout of one run directory:
//!
//! ```text
//! config.json    canonical run configuration
//! steps.jsonl    one StepRecord per line, appended as steps complete
//! pending.json   the open label query, if any
//! summary.json   written once every step is done
//! trace.csv      probe trace, when enabled
//! model.bin      trained classifier (synthetic data only)
//! ```
//!
//! Whole-file writes go to a temporary name first and are renamed into place.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{MonitorError, Result};
use crate::record::{StepRecord, Summary};
use crate::session::PendingQuery;

pub const CONFIG_FILE: &str = "config.json";
pub const STEPS_FILE: &str = "steps.jsonl";
pub const PENDING_FILE: &str = "pending.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const MODEL_FILE: &str = "model.bin";

#[derive(Debug, Clone)]
pub struct RunStore {
    dir: PathBuf,
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| MonitorError::Io(std::io::Error::other("path has no file name")))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

impl RunStore {
    /// Opens the directory for `cfg`, creating it on first use. An existing
    /// directory must hold the same configuration.
    pub fn open(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.run_dir();
        fs::create_dir_all(&dir)?;
        let store = Self { dir };
        let canonical = cfg.to_canonical_json();
        let path = store.path(CONFIG_FILE);
        match fs::read_to_string(&path) {
            Ok(existing) => {
                let old: RunConfig = serde_json::from_str(&existing)?;
                if &old != cfg {
                    return Err(MonitorError::Config(format!(
                        "{} already holds a run with a different configuration",
                        store.dir.display()
                    )));
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                write_atomic(&path, canonical.as_bytes())?;
            }
            Err(e) => return Err(e.into()),
        }
        Ok(store)
    }

    /// A store over an existing directory, for read-only tools.
    pub fn at(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn read_config(&self) -> Result<RunConfig> {
        let text = fs::read_to_string(self.path(CONFIG_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Logged records. A final line cut short by a crash is dropped and
    /// trimmed from the file.
    pub fn read_records(&self) -> Result<Vec<StepRecord>> {
        let path = self.path(STEPS_FILE);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        let mut good_bytes = 0u64;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        let mut lineno = 0;
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            lineno += 1;
            if !line.ends_with('\n') {
                OpenOptions::new().write(true).open(&path)?.set_len(good_bytes)?;
                break;
            }
            let rec: StepRecord = serde_json::from_str(&line)
                .map_err(|e| MonitorError::Data(format!("{}:{lineno}: {e}", path.display())))?;
            if rec.t != out.len() + 1 {
                return Err(MonitorError::Data(format!(
                    "{}:{lineno}: step {} out of sequence",
                    path.display(),
                    rec.t
                )));
            }
            good_bytes += line.len() as u64;
            out.push(rec);
        }
        Ok(out)
    }

    pub fn append_record(&self, rec: &StepRecord) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.path(STEPS_FILE))?;
        f.write_all(rec.to_line().as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn read_pending(&self) -> Result<Option<PendingQuery>> {
        match fs::read_to_string(self.path(PENDING_FILE)) {
            Ok(s) => Ok(Some(serde_json::from_str(&s)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write_pending(&self, q: &PendingQuery) -> Result<()> {
        write_atomic(&self.path(PENDING_FILE), &serde_json::to_vec(q)?)
    }

    pub fn clear_pending(&self) -> Result<()> {
        match fs::remove_file(self.path(PENDING_FILE)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    pub fn write_summary(&self, s: &Summary) -> Result<()> {
        let mut text = serde_json::to_string_pretty(s)?;
        text.push('\n');
        write_atomic(&self.path(SUMMARY_FILE), text.as_bytes())
    }

    pub fn read_summary(&self) -> Result<Summary> {
        Ok(serde_json::from_str(&fs::read_to_string(self.path(SUMMARY_FILE))?)?)
    }

    pub fn write_trace(&self, trace: &iupm_core::probe::SmoothnessTrace) -> Result<()> {
        let mut buf = Vec::new();
        crate::data::write_trace(&mut buf, trace)?;
        write_atomic(&self.path(TRACE_FILE), &buf)
    }

    pub fn read_model(&self) -> Result<Option<iupm_core::mlp::MlpModel>> {
        match fs::read(self.path(MODEL_FILE)) {
            Ok(b) => Ok(Some(iupm_core::mlp::MlpModel::from_bytes(&b)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write_model(&self, m: &iupm_core::mlp::MlpModel) -> Result<()> {
        write_atomic(&self.path(MODEL_FILE), &m.to_bytes())
    }
}
