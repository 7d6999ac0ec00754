//! Writes a prepared stream as ingest CSV files plus a config that reads
//! them back.

use std::path::{Path, PathBuf};

use crate::config::{DataSource, ExternalSource, RunConfig};
use crate::error::Result;
use crate::prepare::Prepared;
use crate::store::write_atomic;

/// Writes `init.csv`, `step_001.csv`, ... and `config.json` into `out`.
/// The exported config keeps every setting of `cfg` except the data source
/// and the run id, which gets an `-external` suffix.
pub fn export_stream(cfg: &RunConfig, prep: &Prepared, out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let mut buf = Vec::new();
    crate::data::write_step(&mut buf, &prep.init_raw, Some(&prep.init_probs))?;
    write_atomic(&out.join("init.csv"), &buf)?;
    let mut steps = Vec::with_capacity(prep.len());
    for (k, s) in prep.steps.iter().enumerate() {
        let name = format!("step_{:03}.csv", k + 1);
        buf.clear();
        crate::data::write_step(&mut buf, &s.raw, Some(&s.probs))?;
        write_atomic(&out.join(&name), &buf)?;
        steps.push(PathBuf::from(name));
    }
    let mut ext = cfg.clone();
    ext.run_id = format!("{}-external", cfg.run_id);
    ext.data = DataSource::External(ExternalSource {
        init: PathBuf::from("init.csv"),
        steps,
    });
    let path = out.join("config.json");
    write_atomic(&path, ext.to_canonical_json().as_bytes())?;
    Ok(path)
}
