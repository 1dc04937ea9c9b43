//! Kernel file format: one JSON header line followed by the row-major
//! little-endian `f64` payload.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::grid::TimeGrid;
use super::kernel::Kernel;
use crate::error::{DmftError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    shape: [usize; 2],
    row_samples: Vec<usize>,
    col_samples: Vec<usize>,
    #[serde(rename = "T")]
    n_steps: usize,
    dt: f64,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scheme: Option<String>,
}

pub fn write_kernel_to<W: Write>(kernel: &Kernel, mut w: W) -> Result<()> {
    let header = Header {
        shape: [kernel.values.nrows(), kernel.values.ncols()],
        row_samples: kernel.row_samples.clone(),
        col_samples: kernel.col_samples.clone(),
        n_steps: kernel.grid.n_steps(),
        dt: kernel.grid.dt(),
        name: kernel.name.clone(),
        scheme: kernel.scheme.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for i in 0..kernel.values.nrows() {
        for j in 0..kernel.values.ncols() {
            w.write_all(&kernel.values[(i, j)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_kernel_from<R: BufRead>(mut r: R) -> Result<Kernel> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())
        .map_err(|e| DmftError::Format(format!("bad header: {e}")))?;
    let [rows, cols] = header.shape;
    let mut payload = Vec::with_capacity(rows * cols * 8);
    r.read_to_end(&mut payload)?;
    if payload.len() != rows * cols * 8 {
        return Err(DmftError::Format(format!(
            "payload has {} bytes, header promises {}",
            payload.len(),
            rows * cols * 8
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
        .collect();
    let grid = TimeGrid::new(header.n_steps, header.dt)?;
    let values = DMatrix::from_row_slice(rows, cols, &data);
    let mut kernel = Kernel::new(header.name, values, header.row_samples, header.col_samples, grid)
        .map_err(|e| DmftError::Format(e.to_string()))?;
    kernel.scheme = header.scheme;
    Ok(kernel)
}

pub fn write_kernel(kernel: &Kernel, path: impl AsRef<Path>) -> Result<()> {
    write_kernel_to(kernel, BufWriter::new(File::create(path)?))
}

pub fn read_kernel(path: impl AsRef<Path>) -> Result<Kernel> {
    read_kernel_from(BufReader::new(File::open(path)?))
}

/// CSV with columns `row_sample,row_t,col_sample,col_t,value`, one line per entry.
pub fn write_kernel_csv_to<W: Write>(kernel: &Kernel, mut w: W) -> Result<()> {
    writeln!(w, "row_sample,row_t,col_sample,col_t,value")?;
    for (mu, &rs) in kernel.row_samples.iter().enumerate() {
        for k in 0..kernel.n_steps() {
            for (al, &cs) in kernel.col_samples.iter().enumerate() {
                for j in 0..kernel.n_steps() {
                    writeln!(
                        w,
                        "{rs},{},{cs},{},{:e}",
                        kernel.grid.time(k),
                        kernel.grid.time(j),
                        kernel.at(mu, k, al, j)
                    )?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_kernel_csv(kernel: &Kernel, path: impl AsRef<Path>) -> Result<()> {
    write_kernel_csv_to(kernel, BufWriter::new(File::create(path)?))
}
