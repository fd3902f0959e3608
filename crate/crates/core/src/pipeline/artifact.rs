//! Artifact files: CSV with a `#` metadata line, JSON with a `meta` block.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    meta: Meta,
    artifact: String,
    data: T,
}

pub fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn write_csv(path: &Path, meta: &Meta, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "# config_hash={} seed={}", meta.config_hash, meta.seed).map_err(|e| Error::io(path, e))?;
    {
        let mut w = csv::Writer::from_writer(&mut f);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Header and string rows of a CSV artifact.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    require(path)?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

pub fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        location: path.display().to_string(),
        reason: format!("`{s}` is not a number"),
    })
}

/// Square or rectangular numeric matrix with a leading label column.
pub fn write_matrix(path: &Path, meta: &Meta, row_label: &str, m: &Array2<f64>) -> Result<()> {
    let mut header = vec![row_label.to_string()];
    header.extend((0..m.ncols()).map(|j| format!("k{j}")));
    let rows: Vec<Vec<String>> = m
        .outer_iter()
        .enumerate()
        .map(|(i, r)| {
            std::iter::once(format!("k{i}"))
                .chain(r.iter().map(|v| fmt(*v)))
                .collect()
        })
        .collect();
    write_csv(path, meta, &header, &rows)
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let (header, rows) = read_csv(path)?;
    let cols = header.len().saturating_sub(1);
    let mut m = Array2::zeros((rows.len(), cols));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols + 1 {
            return Err(Error::Parse {
                location: format!("{} row {}", path.display(), i + 1),
                reason: "wrong number of columns".into(),
            });
        }
        for j in 0..cols {
            m[[i, j]] = parse_f64(path, &r[j + 1])?;
        }
    }
    Ok(m)
}

/// Labelled rows: `id, v_0, ..., v_{m-1}`.
pub fn write_rows(path: &Path, meta: &Meta, header: &[String], ids: &[String], m: &Array2<f64>) -> Result<()> {
    let rows: Vec<Vec<String>> = ids
        .iter()
        .zip(m.outer_iter())
        .map(|(id, r)| std::iter::once(id.clone()).chain(r.iter().map(|v| fmt(*v))).collect())
        .collect();
    write_csv(path, meta, header, &rows)
}

pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<String>, Array2<f64>)> {
    let (header, rows) = read_csv(path)?;
    let cols = header.len().saturating_sub(1);
    let mut ids = Vec::with_capacity(rows.len());
    let mut m = Array2::zeros((rows.len(), cols));
    for (i, r) in rows.iter().enumerate() {
        ids.push(r[0].clone());
        for j in 0..cols {
            m[[i, j]] = parse_f64(path, &r[j + 1])?;
        }
    }
    Ok((header, ids, m))
}

pub fn write_json<T: Serialize>(path: &Path, meta: &Meta, artifact: &str, data: &T) -> Result<()> {
    let mut f = create(path)?;
    let env = Envelope {
        meta: meta.clone(),
        artifact: artifact.to_string(),
        data,
    };
    serde_json::to_writer_pretty(&mut f, &env)?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    require(path)?;
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let env: Envelope<T> = serde_json::from_reader(std::io::BufReader::new(f))?;
    Ok(env.data)
}

/// Nested rows, for readable JSON.
pub fn nested(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

pub fn from_nested(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let c = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != c) {
        return Err(Error::invalid("ragged matrix"));
    }
    Ok(Array2::from_shape_fn((rows.len(), c), |(i, j)| rows[i][j]))
}
