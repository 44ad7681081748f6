//! CSV ingestion and emission, and atomic file writes.
//!
//! Data files have a header `x1,...,xd,s,w,y` with optional `score_0`,
//! `score_1` (precomputed propensities, both or neither) and `label` (true
//! class of a classifier audit; when present `y` is recomputed as
//! `1{w == label}` and the `y` column may be omitted).

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CovariateSpace, Dataset, Sample};

/// Box padding, as a fraction of each covariate's range, when the box is
/// inferred from the data.
pub const DEFAULT_PAD: f64 = 0.05;

#[derive(Clone, Debug, Default)]
pub struct IngestOptions {
    /// Explicit box; inferred from the data and padded otherwise.
    pub space: Option<CovariateSpace>,
    pub pad: Option<f64>,
    pub outcome_bound: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub data: Dataset,
    pub scores: Option<Vec<[f64; 2]>>,
    pub labels: Option<Vec<u8>>,
}

struct Layout {
    dim: usize,
    s: usize,
    w: usize,
    y: Option<usize>,
    scores: Option<[usize; 2]>,
    label: Option<usize>,
}

fn layout(header: &csv::StringRecord) -> Result<Layout> {
    let find = |name: &str| header.iter().position(|h| h == name);
    let mut dim = 0;
    while find(&format!("x{}", dim + 1)).is_some() {
        dim += 1;
    }
    if dim == 0 {
        return Err(Error::Schema("missing covariate column 'x1'".into()));
    }
    let need = |name: &str| find(name).ok_or_else(|| Error::Schema(format!("missing column '{name}'")));
    let s = need("s")?;
    let w = need("w")?;
    let label = find("label");
    let y = if label.is_some() { find("y") } else { Some(need("y")?) };
    let scores = match (find("score_0"), find("score_1")) {
        (Some(a), Some(b)) => Some([a, b]),
        (None, None) => None,
        _ => return Err(Error::Schema("score_0 and score_1 must appear together".into())),
    };
    let known = |h: &str| {
        matches!(h, "s" | "w" | "y" | "label" | "score_0" | "score_1")
            || h.strip_prefix('x')
                .and_then(|k| k.parse::<usize>().ok())
                .is_some_and(|k| (1..=dim).contains(&k))
    };
    if let Some(h) = header.iter().find(|h| !known(h)) {
        return Err(Error::Schema(format!("unexpected column '{h}'")));
    }
    let mut names: Vec<&str> = header.iter().collect();
    names.sort_unstable();
    if names.windows(2).any(|p| p[0] == p[1]) {
        return Err(Error::Schema("duplicate column names".into()));
    }
    Ok(Layout { dim, s, w, y, scores, label })
}

fn cell<'a>(rec: &'a csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<&'a str> {
    match rec.get(idx).map(str::trim) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(Error::Schema(format!("row {row}, column '{name}': missing value"))),
    }
}

fn real(rec: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<f64> {
    let v = cell(rec, idx, row, name)?;
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(Error::Schema(format!("row {row}, column '{name}': expected a finite number, got '{v}'"))),
    }
}

fn binary(rec: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<u8> {
    match cell(rec, idx, row, name)? {
        "0" => Ok(0),
        "1" => Ok(1),
        v => Err(Error::Schema(format!("row {row}, column '{name}': expected 0 or 1, got '{v}'"))),
    }
}

/// Parse a data file from any reader. Rows are numbered from 1 after the
/// header.
pub fn parse_dataset(reader: impl std::io::Read, opts: &IngestOptions) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let lay = layout(&header)?;
    let mut samples = Vec::new();
    let mut scores = lay.scores.map(|_| Vec::new());
    let mut labels = lay.label.map(|_| Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Schema(format!(
                "row {row}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        let x = (0..lay.dim)
            .map(|j| {
                let name = format!("x{}", j + 1);
                let idx = header.iter().position(|h| h == name).expect("layout checked");
                real(&rec, idx, row, &name)
            })
            .collect::<Result<Vec<f64>>>()?;
        let s = binary(&rec, lay.s, row, "s")?;
        let w = binary(&rec, lay.w, row, "w")?;
        let y = match lay.label {
            Some(l) => {
                let label = binary(&rec, l, row, "label")?;
                labels.as_mut().expect("label column").push(label);
                (w == label) as u8 as f64
            }
            None => real(&rec, lay.y.expect("y column"), row, "y")?,
        };
        if let (Some(cols), Some(out)) = (lay.scores, scores.as_mut()) {
            let p = [real(&rec, cols[0], row, "score_0")?, real(&rec, cols[1], row, "score_1")?];
            for (a, v) in p.iter().enumerate() {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::Schema(format!("row {row}, column 'score_{a}': {v} lies outside [0, 1]")));
                }
            }
            out.push(p);
        }
        samples.push(Sample { x, s, w, y });
    }
    if samples.is_empty() {
        return Err(Error::Schema("no data rows".into()));
    }
    let data = match &opts.space {
        Some(space) => Dataset::new(samples, space.clone())?,
        None => Dataset::with_padded_box(samples, opts.pad.unwrap_or(DEFAULT_PAD))?,
    }
    .with_outcome_bound(opts.outcome_bound);
    Ok(Ingested { data, scores, labels })
}

pub fn read_dataset(path: &Path, opts: &IngestOptions) -> Result<Ingested> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Schema(format!("cannot open data file {}: {e}", path.display())))?;
    parse_dataset(std::io::BufReader::new(file), opts)
}

/// Serialize `data` with optional score and label columns. Numbers use the
/// shortest representation that parses back to the same value.
pub fn dataset_csv(data: &Dataset, scores: Option<&[[f64; 2]]>, labels: Option<&[u8]>) -> Result<Vec<u8>> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).collect();
    header.extend(["s", "w", "y"].map(String::from));
    if scores.is_some() {
        header.extend(["score_0", "score_1"].map(String::from));
    }
    if labels.is_some() {
        header.push("label".into());
    }
    wtr.write_record(&header)?;
    for (i, smp) in data.samples().iter().enumerate() {
        let mut rec: Vec<String> = smp.x.iter().map(|v| v.to_string()).collect();
        rec.push(smp.s.to_string());
        rec.push(smp.w.to_string());
        rec.push(smp.y.to_string());
        if let Some(sc) = scores {
            rec.push(sc[i][0].to_string());
            rec.push(sc[i][1].to_string());
        }
        if let Some(l) = labels {
            rec.push(l[i].to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Serialize rows through serde with a header line.
pub fn rows_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Write `bytes` to a temporary file beside `path`, then rename it over
/// `path`, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}
