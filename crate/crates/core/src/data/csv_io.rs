//! CSV layout: header `x0,...,x{d-1}` plus an optional trailing `label`
//! column, one sample per row. Values are written in Rust's shortest
//! round-trip form, so a save/load cycle is bit-exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

/// Loads a dataset; a `label` column makes it source data, otherwise target
/// data with an unknown class count (0) to be filled in by the caller.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let has_label = header.iter().next_back() == Some("label");
    let d = header.len() - usize::from(has_label);
    if d == 0 {
        return Err(parse_err(path, 1, "no feature columns"));
    }
    for (j, name) in header.iter().take(d).enumerate() {
        if name != format!("x{j}") {
            return Err(parse_err(path, 1, format!("column {j} is `{name}`, expected `x{j}`")));
        }
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("{} columns, expected {}", record.len(), header.len()),
            ));
        }
        for field in record.iter().take(d) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("`{field}` is not a number")))?;
            data.push(v);
        }
        if has_label {
            let field = record[d].trim();
            let y: usize = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("label `{field}` is not a non-negative integer")))?;
            labels.push(y);
        }
    }
    let n = data.len() / d;
    let inputs = Tensor::new(vec![n, d], data)?;
    if has_label {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        Dataset::source(inputs, labels, k)
    } else {
        Dataset::target(inputs, 0)
    }
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
        if ds.labels().is_some() {
            header.push("label".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..ds.len() {
            let mut fields: Vec<String> = ds.inputs().row(i).iter().map(|v| v.to_string()).collect();
            if let Some(labels) = ds.labels() {
                fields.push(labels[i].to_string());
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

/// Writes a single `label` column (used for held-out target truth).
pub fn save_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("label\n");
    for y in labels {
        out.push_str(&y.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if header.len() != 1 || &header[0] != "label" {
        return Err(parse_err(path, 1, "expected a single `label` column"));
    }
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let y = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("label `{}` is not a non-negative integer", &record[0])))?;
        labels.push(y);
    }
    Ok(labels)
}
