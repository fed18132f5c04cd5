//! Simulated path ensembles and their on-disk formats.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! b"SWPE" | version: u32 | K: u64 | n_cells: u64
//! grid:        (n_cells + 1) × f64
//! states:      K × (n_cells + 1) × f64, row-major
//! realized_qv: K × n_cells × f64, row-major
//! ```
//!
//! Values are always stored as `f64`, whatever the in-memory scalar.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"SWPE";
pub const FORMAT_VERSION: u32 = 1;

/// `K` paths on a shared time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PathEnsemble<S: Scalar = f64> {
    pub grid: TimeGrid<S>,
    /// Row-major `K × (n_cells + 1)`.
    pub states: Vec<S>,
    /// Row-major `K × n_cells`, `Σ σ²(t_sub, x_sub) Δt_sub` per cell.
    pub realized_qv: Vec<S>,
    pub n_paths: usize,
    pub model_tag: String,
    pub master_seed: u64,
}

impl<S: Scalar> PathEnsemble<S> {
    pub fn n_points(&self) -> usize {
        self.grid.points().len()
    }

    pub fn path(&self, k: usize) -> &[S] {
        let w = self.n_points();
        &self.states[k * w..(k + 1) * w]
    }

    pub fn path_qv(&self, k: usize) -> &[S] {
        let w = self.grid.n_cells();
        &self.realized_qv[k * w..(k + 1) * w]
    }

    /// States of all paths at grid index `i`.
    pub fn column(&self, i: usize) -> Vec<S> {
        (0..self.n_paths).map(|k| self.path(k)[i]).collect()
    }

    pub fn paths(&self) -> impl Iterator<Item = &[S]> {
        self.states.chunks_exact(self.n_points())
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_paths as u64).to_le_bytes())?;
        w.write_all(&(self.grid.n_cells() as u64).to_le_bytes())?;
        for v in self.grid.points().iter().chain(&self.states).chain(&self.realized_qv) {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads the binary layout. `model_tag` and `master_seed` are not part of
    /// the layout and are left empty / zero.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, not a path ensemble".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported ensemble version {version}")));
        }
        let k = usize::try_from(read_u64(&mut r)?).map_err(|_| Error::Format("K overflow".into()))?;
        let n = usize::try_from(read_u64(&mut r)?)
            .map_err(|_| Error::Format("n_cells overflow".into()))?;
        if n == 0 {
            return Err(Error::Format("n_cells must be positive".into()));
        }
        let grid = TimeGrid::from_points(read_f64s(&mut r, n + 1)?)?;
        let states = read_f64s(&mut r, k * (n + 1))?;
        let realized_qv = read_f64s(&mut r, k * n)?;
        Ok(Self {
            grid,
            states,
            realized_qv,
            n_paths: k,
            model_tag: String::new(),
            master_seed: 0,
        })
    }

    /// CSV with columns `path_id,t,x`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "path_id,t,x")?;
        for (k, path) in self.paths().enumerate() {
            for (t, x) in self.grid.points().iter().zip(path) {
                writeln!(w, "{k},{},{}", t.as_f64(), x.as_f64())?;
            }
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<S: Scalar, R: Read>(r: &mut R, n: usize) -> Result<Vec<S>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(S::lit(f64::from_le_bytes(b)));
    }
    Ok(out)
}
