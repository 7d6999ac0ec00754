//! CSV formats: step ingest, batch export and the probe trace.
//!
//! Ingest rows are `f0..f{d-1}[,label][,p0..p{K-1}]`, keyed by header name.

use std::io::{Read, Write};
use std::path::Path;

use iupm_core::probe::SmoothnessTrace;
use iupm_core::{FeatureBatch, Matrix};

use crate::error::{MonitorError, Result};

/// Tolerance on the sum of one probability row.
pub const PROB_SUM_TOL: f64 = 1e-6;

/// One ingested step file.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFile {
    pub batch: FeatureBatch,
    /// `K x n` model probabilities, when the file carries them.
    pub probs: Option<Matrix>,
}

impl StepFile {
    pub fn classes(&self) -> Option<usize> {
        self.probs.as_ref().map(|p| p.rows())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    dim: usize,
    label: Option<usize>,
}

fn data_err(origin: &str, msg: impl std::fmt::Display) -> MonitorError {
    MonitorError::Data(format!("{origin}: {msg}"))
}

/// Finds the column positions of a `prefix0, prefix1, ...` run.
fn numbered(header: &csv::StringRecord, prefix: &str, origin: &str) -> Result<Vec<usize>> {
    let mut cols: Vec<(usize, usize)> = Vec::new();
    for (pos, name) in header.iter().enumerate() {
        if let Some(k) = name.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok()) {
            cols.push((k, pos));
        }
    }
    cols.sort_unstable();
    for (want, &(k, _)) in cols.iter().enumerate() {
        if k != want {
            return Err(data_err(origin, format!("columns {prefix}0.. are not contiguous (missing {prefix}{want})")));
        }
    }
    Ok(cols.into_iter().map(|(_, pos)| pos).collect())
}

fn layout(header: &csv::StringRecord, origin: &str) -> Result<(Layout, Vec<usize>, Vec<usize>)> {
    let f = numbered(header, "f", origin)?;
    let p = numbered(header, "p", origin)?;
    let label = header.iter().position(|h| h == "label");
    for name in header.iter() {
        let known = name == "label"
            || name.strip_prefix('f').is_some_and(|s| s.parse::<usize>().is_ok())
            || name.strip_prefix('p').is_some_and(|s| s.parse::<usize>().is_ok());
        if !known {
            return Err(data_err(origin, format!("unknown column {name:?}")));
        }
    }
    if f.is_empty() {
        return Err(data_err(origin, "no feature columns f0.."));
    }
    if p.len() == 1 {
        return Err(data_err(origin, "a single probability column cannot describe two or more classes"));
    }
    let l = Layout {
        dim: f.len(),
        label,
    };
    Ok((l, f, p))
}

fn parse_f64(s: &str, origin: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| data_err(origin, format!("row {row}: column {col}: not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(data_err(origin, format!("row {row}: column {col}: non-finite value")));
    }
    Ok(v)
}

/// Parses one step file from a reader. `origin` names the source in errors.
/// Row numbers in errors count data rows from 1.
pub fn read_step<R: Read>(reader: R, origin: &str) -> Result<StepFile> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| data_err(origin, e))?.clone();
    let (l, fcols, pcols) = layout(&header, origin)?;
    let k = pcols.len();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    let mut probs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| data_err(origin, format!("row {row}: {e}")))?;
        for (c, &pos) in fcols.iter().enumerate() {
            feats.push(parse_f64(&rec[pos], origin, row, &format!("f{c}"))?);
        }
        if let Some(pos) = l.label {
            let y: usize = rec[pos]
                .parse()
                .map_err(|_| data_err(origin, format!("row {row}: label {:?} is not a class index", &rec[pos])))?;
            if k > 0 && y >= k {
                return Err(data_err(origin, format!("row {row}: label {y} outside 0..{k}")));
            }
            labels.push(y);
        }
        if k > 0 {
            let mut sum = 0.0;
            for (c, &pos) in pcols.iter().enumerate() {
                let p = parse_f64(&rec[pos], origin, row, &format!("p{c}"))?;
                if p < 0.0 {
                    return Err(data_err(origin, format!("row {row}: negative probability p{c}")));
                }
                sum += p;
                probs.push(p);
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(data_err(origin, format!("row {row}: probabilities sum to {sum}, not 1")));
            }
        }
    }
    let n = feats.len() / l.dim;
    if n == 0 {
        return Err(data_err(origin, "no data rows"));
    }
    let features = Matrix::from_vec(n, l.dim, feats)?;
    let batch = if l.label.is_some() {
        FeatureBatch::labelled(features, labels)?
    } else {
        FeatureBatch::new(features)
    };
    let probs = if k > 0 {
        Some(Matrix::from_vec(n, k, probs)?.transpose())
    } else {
        None
    };
    Ok(StepFile { batch, probs })
}

pub fn read_step_file(path: &Path) -> Result<StepFile> {
    let file = std::fs::File::open(path).map_err(|e| data_err(&path.display().to_string(), e))?;
    read_step(std::io::BufReader::new(file), &path.display().to_string())
}

/// Reads an initial file and the step files, checking that `d` and `K` stay
/// constant. The initial file must carry labels and probabilities; every
/// step file must carry probabilities.
pub fn ingest(init: &Path, steps: &[impl AsRef<Path>]) -> Result<(StepFile, Vec<StepFile>)> {
    let first = read_step_file(init)?;
    let origin = init.display().to_string();
    if first.batch.labels.is_none() {
        return Err(data_err(&origin, "the initial file needs a label column"));
    }
    let k = first
        .classes()
        .ok_or_else(|| data_err(&origin, "missing probability columns p0.."))?;
    let d = first.batch.dim();
    let mut out = Vec::with_capacity(steps.len());
    for p in steps {
        let p = p.as_ref();
        let origin = p.display().to_string();
        let s = read_step_file(p)?;
        if s.batch.dim() != d {
            return Err(data_err(&origin, format!("{} feature columns, expected {d}", s.batch.dim())));
        }
        match s.classes() {
            Some(c) if c == k => {}
            Some(c) => return Err(data_err(&origin, format!("{c} probability columns, expected {k}"))),
            None => return Err(data_err(&origin, "missing probability columns p0..")),
        }
        out.push(s);
    }
    Ok((first, out))
}

/// Writes a batch in ingest format. Floats use the shortest text that
/// parses back to the same value; lines end in LF.
pub fn write_step<W: Write>(writer: W, batch: &FeatureBatch, probs: Option<&Matrix>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let d = batch.dim();
    let k = probs.map_or(0, |p| p.rows());
    let mut header: Vec<String> = (0..d).map(|c| format!("f{c}")).collect();
    if batch.labels.is_some() {
        header.push("label".into());
    }
    header.extend((0..k).map(|c| format!("p{c}")));
    w.write_record(&header).map_err(csv_io)?;
    for i in 0..batch.len() {
        let mut row: Vec<String> = batch.features.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(y) = &batch.labels {
            row.push(y[i].to_string());
        }
        if let Some(p) = probs {
            row.extend((0..k).map(|c| p[(c, i)].to_string()));
        }
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> MonitorError {
    MonitorError::Io(std::io::Error::other(e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Trace CSV: `t,eps_hat,L_hat,shift_strength,cum_bound`; empty cells for
/// terms that could not be computed.
pub fn write_trace<W: Write>(writer: W, trace: &SmoothnessTrace) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(["t", "eps_hat", "L_hat", "shift_strength", "cum_bound"])
        .map_err(csv_io)?;
    for s in &trace.steps {
        w.write_record([
            s.t.to_string(),
            opt(s.eps_hat),
            opt(s.l_hat),
            opt(s.shift_strength),
            opt(s.cumulative_bound),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}
