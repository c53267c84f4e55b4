use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{BoundarySubset, SpatialMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unsupported report format `{other}`"))),
        }
    }
}

/// Writes `rows` to `dir/stem.csv` or `dir/stem.json`.
pub fn emit_report<T: Serialize>(dir: &Path, stem: &str, format: &str, rows: &[T]) -> Result<PathBuf> {
    let format: Format = format.parse()?;
    match format {
        Format::Csv => {
            let path = dir.join(format!("{stem}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(path)
        }
        Format::Json => {
            let path = dir.join(format!("{stem}.json"));
            write_json(&path, &rows)?;
            Ok(path)
        }
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn coord_headers(dim: usize) -> &'static [&'static str] {
    if dim == 1 {
        &["x"]
    } else {
        &["x", "y"]
    }
}

/// `node_index, x[, y], sigma, in_gamma0` for every boundary node.
pub fn write_gamma0(path: &Path, mesh: &SpatialMesh, subset: &BoundarySubset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["node_index"];
    header.extend_from_slice(coord_headers(mesh.dim));
    header.extend_from_slice(&["sigma", "in_gamma0"]);
    w.write_record(&header)?;
    for (slot, b) in mesh.boundary.iter().enumerate() {
        let x = mesh.coords(b.node);
        let mut rec = vec![b.node.to_string()];
        rec.extend((0..mesh.dim).map(|a| x[a].to_string()));
        rec.push(subset.sigma[slot].to_string());
        rec.push(subset.contains(slot).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per node: index, coordinates, then one column per named field.
pub fn write_nodal(path: &Path, mesh: &SpatialMesh, fields: &[(&str, &[f64])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["node_index"];
    header.extend_from_slice(coord_headers(mesh.dim));
    header.extend(fields.iter().map(|(n, _)| *n));
    w.write_record(&header)?;
    for node in 0..mesh.node_count() {
        let x = mesh.coords(node);
        let mut rec = vec![node.to_string()];
        rec.extend((0..mesh.dim).map(|a| x[a].to_string()));
        rec.extend(fields.iter().map(|(_, v)| v[node].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
