//! Rectilinear sampling grids with periodic and bounded axes.
//!
//! Everything downstream (tabulated Hamiltonians, generating-function tables,
//! cubical filtrations) shares this representation: an ordered list of axes,
//! row-major sample storage (first axis slowest), and piecewise interpolation
//! that wraps on periodic axes and clamps on bounded ones.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("axis `{0}` is degenerate: need at least {1} samples, got {2}")]
    TooFewSamples(String, usize, usize),
    #[error("axis `{0}` has an empty or non-finite range [{1}, {2}]")]
    BadRange(String, f64, f64),
    #[error("expected {expected} coordinates, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("value buffer holds {got} samples, grid wants {want}")]
    SizeMismatch { want: usize, got: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a grid-data file (bad magic or truncated header)")]
    Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisKind {
    /// Samples cover [min, max) and wrap; step = (max-min)/res.
    Periodic,
    /// Samples cover [min, max] inclusive; step = (max-min)/(res-1).
    Bounded,
}

#[derive(Debug, Clone)]
pub struct Axis {
    pub name: String,
    pub kind: AxisKind,
    pub min: f64,
    pub max: f64,
    pub res: usize,
}

impl Axis {
    pub fn periodic(name: &str, min: f64, max: f64, res: usize) -> Result<Self, GridError> {
        Self::new(name, AxisKind::Periodic, min, max, res)
    }

    pub fn bounded(name: &str, min: f64, max: f64, res: usize) -> Result<Self, GridError> {
        Self::new(name, AxisKind::Bounded, min, max, res)
    }

    fn new(name: &str, kind: AxisKind, min: f64, max: f64, res: usize) -> Result<Self, GridError> {
        if !(min.is_finite() && max.is_finite()) || max <= min {
            return Err(GridError::BadRange(name.into(), min, max));
        }
        let need = if kind == AxisKind::Periodic { 1 } else { 2 };
        if res < need {
            return Err(GridError::TooFewSamples(name.into(), need, res));
        }
        Ok(Axis { name: name.into(), kind, min, max, res })
    }

    pub fn is_periodic(&self) -> bool {
        self.kind == AxisKind::Periodic
    }

    pub fn step(&self) -> f64 {
        match self.kind {
            AxisKind::Periodic => (self.max - self.min) / self.res as f64,
            AxisKind::Bounded => (self.max - self.min) / (self.res - 1) as f64,
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.min + self.step() * i as f64
    }

    /// Fractional index of `x`; periodic axes reduce, bounded axes clamp.
    fn locate(&self, x: f64) -> f64 {
        match self.kind {
            AxisKind::Periodic => {
                let span = self.max - self.min;
                let t = (x - self.min).rem_euclid(span);
                t / self.step()
            }
            AxisKind::Bounded => {
                let t = (x - self.min) / self.step();
                t.clamp(0.0, (self.res - 1) as f64)
            }
        }
    }

    fn wrap_index(&self, i: isize) -> usize {
        match self.kind {
            AxisKind::Periodic => i.rem_euclid(self.res as isize) as usize,
            AxisKind::Bounded => i.clamp(0, self.res as isize - 1) as usize,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridSampling {
    pub axes: Vec<Axis>,
}

impl GridSampling {
    pub fn new(axes: Vec<Axis>) -> Self {
        GridSampling { axes }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.res).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of the flat sample index (row-major, first axis slowest).
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.dim()];
        for k in (0..self.dim()).rev() {
            idx[k] = flat % self.axes[k].res;
            flat /= self.axes[k].res;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        let mut flat = 0usize;
        for (k, ax) in self.axes.iter().enumerate() {
            flat = flat * ax.res + idx[k];
        }
        flat
    }

    pub fn coords(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().zip(&self.axes).map(|(&i, a)| a.coord(i)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GridData {
    pub sampling: GridSampling,
    pub values: Vec<f64>,
}

impl GridData {
    pub fn from_values(sampling: GridSampling, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != sampling.len() {
            return Err(GridError::SizeMismatch { want: sampling.len(), got: values.len() });
        }
        Ok(GridData { sampling, values })
    }

    /// Tabulate `f` at every grid node.  Nodes are independent, so the work
    /// splits across the thread pool; the result does not depend on the
    /// worker count.
    pub fn sample<F: Fn(&[f64]) -> f64 + Sync>(sampling: GridSampling, f: F) -> Self {
        use rayon::prelude::*;
        let n = sampling.len();
        let mut values = vec![0.0; n];
        values.par_iter_mut().enumerate().for_each(|(flat, v)| {
            let idx = sampling.unravel(flat);
            *v = f(&sampling.coords(&idx));
        });
        GridData { sampling, values }
    }

    fn gather(&self, base: &[isize], offsets: &[isize]) -> f64 {
        let idx: Vec<usize> = base
            .iter()
            .zip(offsets)
            .zip(&self.sampling.axes)
            .map(|((&b, &o), ax)| ax.wrap_index(b + o))
            .collect();
        self.values[self.sampling.ravel(&idx)]
    }

    /// Multilinear interpolation; periodic axes wrap, bounded axes clamp.
    pub fn value(&self, x: &[f64]) -> Result<f64, GridError> {
        self.interp(x, false)
    }

    /// Tensor-product Catmull-Rom interpolation (C^1); used where downstream
    /// code differentiates the interpolant.
    pub fn value_cubic(&self, x: &[f64]) -> Result<f64, GridError> {
        self.interp(x, true)
    }

    fn interp(&self, x: &[f64], cubic: bool) -> Result<f64, GridError> {
        let d = self.sampling.dim();
        if x.len() != d {
            return Err(GridError::DimMismatch { expected: d, got: x.len() });
        }
        let mut cell = vec![0isize; d];
        let mut frac = vec![0.0f64; d];
        for k in 0..d {
            let t = self.sampling.axes[k].locate(x[k]);
            let i = t.floor();
            cell[k] = i as isize;
            frac[k] = t - i;
        }
        Ok(self.interp_rec(&cell, &frac, &mut vec![0isize; d], 0, cubic))
    }

    fn interp_rec(
        &self,
        cell: &[isize],
        frac: &[f64],
        offsets: &mut Vec<isize>,
        k: usize,
        cubic: bool,
    ) -> f64 {
        if k == cell.len() {
            return self.gather(cell, offsets);
        }
        let t = frac[k];
        if cubic {
            let mut p = [0.0f64; 4];
            for (j, pj) in p.iter_mut().enumerate() {
                offsets[k] = j as isize - 1;
                *pj = self.interp_rec(cell, frac, offsets, k + 1, cubic);
            }
            offsets[k] = 0;
            catmull_rom(p, t)
        } else {
            offsets[k] = 0;
            let lo = self.interp_rec(cell, frac, offsets, k + 1, cubic);
            offsets[k] = 1;
            let hi = self.interp_rec(cell, frac, offsets, k + 1, cubic);
            offsets[k] = 0;
            lo + (hi - lo) * t
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), GridError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(self.sampling.dim() as u32).to_le_bytes())?;
        for ax in &self.sampling.axes {
            let kind = match ax.kind {
                AxisKind::Periodic => 0u8,
                AxisKind::Bounded => 1u8,
            };
            w.write_all(&[kind])?;
            let name = ax.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(ax.res as u64).to_le_bytes())?;
            w.write_all(&ax.min.to_le_bytes())?;
            w.write_all(&ax.max.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, GridError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| GridError::Format)?;
        if &magic != MAGIC {
            return Err(GridError::Format);
        }
        let n_axes = read_u32(&mut r)? as usize;
        let mut axes = Vec::with_capacity(n_axes);
        for _ in 0..n_axes {
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind).map_err(|_| GridError::Format)?;
            let kind = match kind[0] {
                0 => AxisKind::Periodic,
                1 => AxisKind::Bounded,
                _ => return Err(GridError::Format),
            };
            let name_len = read_u32(&mut r)? as usize;
            if name_len > 4096 {
                return Err(GridError::Format);
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(|_| GridError::Format)?;
            let name = String::from_utf8(name).map_err(|_| GridError::Format)?;
            let res = read_u64(&mut r)? as usize;
            let min = read_f64(&mut r)?;
            let max = read_f64(&mut r)?;
            axes.push(Axis::new(&name, kind, min, max, res)?);
        }
        let sampling = GridSampling::new(axes);
        let mut values = vec![0.0f64; sampling.len()];
        for v in values.iter_mut() {
            *v = read_f64(&mut r)?;
        }
        Ok(GridData { sampling, values })
    }
}

const MAGIC: &[u8; 8] = b"QMLBGRD1";

fn read_u32<R: Read>(r: &mut R) -> Result<u32, GridError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| GridError::Format)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, GridError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| GridError::Format)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, GridError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| GridError::Format)?;
    Ok(f64::from_le_bytes(b))
}

fn catmull_rom(p: [f64; 4], t: f64) -> f64 {
    // Standard uniform Catmull-Rom: interpolates p[1] at t=0 and p[2] at t=1.
    0.5 * ((2.0 * p[1])
        + (-p[0] + p[2]) * t
        + (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) * t * t
        + (-p[0] + 3.0 * p[1] - 3.0 * p[2] + p[3]) * t * t * t)
}
