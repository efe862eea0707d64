//! Uniform rectangular grids carrying density values (d <= 2).

use std::io::{Read, Write};

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Uniform rectangular lattice: origin, common spacing, node count per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub origin: Vec<f64>,
    pub spacing: f64,
    pub shape: Vec<usize>,
}

impl Grid {
    pub fn new(origin: Vec<f64>, spacing: f64, shape: Vec<usize>) -> Result<Self> {
        if origin.len() != shape.len() {
            return Err(Error::Config("grid origin/shape dimension mismatch".into()));
        }
        if origin.len() > 2 {
            return Err(Error::DimensionTooLarge(origin.len()));
        }
        if !(spacing > 0.0) || shape.iter().any(|&s| s < 2) {
            return Err(Error::Config("grid needs positive spacing and >= 2 nodes per axis".into()));
        }
        Ok(Grid { origin, spacing, shape })
    }

    /// 1-d grid symmetric around `center` with half-width `radius`.
    pub fn centered_1d(center: f64, radius: f64, spacing: f64) -> Result<Self> {
        let half = (radius / spacing).ceil() as usize;
        Grid::new(vec![center - half as f64 * spacing], spacing, vec![2 * half + 1])
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of the flat node index (row-major).
    pub fn node(&self, idx: usize) -> DVector<f64> {
        let mut rem = idx;
        let mut coords = vec![0.0; self.dim()];
        for ax in (0..self.dim()).rev() {
            let k = rem % self.shape[ax];
            rem /= self.shape[ax];
            coords[ax] = self.origin[ax] + k as f64 * self.spacing;
        }
        DVector::from_vec(coords)
    }

    /// Trapezoid quadrature weight of a node (product of per-axis 1 or 1/2 ends).
    pub fn trapezoid_weight(&self, idx: usize) -> f64 {
        let mut rem = idx;
        let mut w = self.spacing.powi(self.dim() as i32);
        for ax in (0..self.dim()).rev() {
            let k = rem % self.shape[ax];
            rem /= self.shape[ax];
            if k == 0 || k == self.shape[ax] - 1 {
                w *= 0.5;
            }
        }
        w
    }

    /// Multilinear interpolation index helper: returns None outside the grid.
    fn locate(&self, p: &[f64]) -> Option<(Vec<usize>, Vec<f64>)> {
        let mut base = Vec::with_capacity(self.dim());
        let mut frac = Vec::with_capacity(self.dim());
        for ax in 0..self.dim() {
            let t = (p[ax] - self.origin[ax]) / self.spacing;
            if t < 0.0 || t > (self.shape[ax] - 1) as f64 {
                return None;
            }
            let k = (t.floor() as usize).min(self.shape[ax] - 2);
            base.push(k);
            frac.push(t - k as f64);
        }
        Some((base, frac))
    }

    fn flat(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for ax in 0..self.dim() {
            idx = idx * self.shape[ax] + coords[ax];
        }
        idx
    }
}

/// Density values on a [`Grid`] plus mass bookkeeping.
#[derive(Debug, Clone)]
pub struct GridDensity {
    pub grid: Grid,
    pub values: Vec<f64>,
    /// Trapezoid mass over the truncated grid.
    pub mass: f64,
    /// Mass lost to truncation, accumulated across convolution steps.
    pub mass_deficit: f64,
}

impl GridDensity {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Config("grid/value length mismatch".into()));
        }
        let mut gd = GridDensity { grid, values, mass: 0.0, mass_deficit: 0.0 };
        gd.mass = gd.integrate();
        Ok(gd)
    }

    pub fn integrate(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.grid.trapezoid_weight(i))
            .sum()
    }

    /// Multilinear interpolation; 0 outside the truncated grid.
    pub fn value_at(&self, p: &DVector<f64>) -> f64 {
        let coords: Vec<f64> = p.iter().copied().collect();
        let Some((base, frac)) = self.grid.locate(&coords) else {
            return 0.0;
        };
        let d = self.grid.dim();
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut c = Vec::with_capacity(d);
            for ax in 0..d {
                if corner >> ax & 1 == 1 {
                    w *= frac[ax];
                    c.push(base[ax] + 1);
                } else {
                    w *= 1.0 - frac[ax];
                    c.push(base[ax]);
                }
            }
            acc += w * self.values[self.grid.flat(&c)];
        }
        acc
    }

    /// CSV serialization: one row per node, coordinates then value.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let d = self.grid.dim();
        let mut header: Vec<String> = (0..d).map(|i| format!("x{}", i + 1)).collect();
        header.push("value".into());
        wtr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.values.len() {
            let node = self.grid.node(i);
            let mut rec: Vec<String> = node.iter().map(|v| format!("{v}")).collect();
            rec.push(format!("{}", self.values[i]));
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })?;
        Ok(())
    }

    /// Compact binary layout. Header: u32 dim, per-axis u64 extent, f64 spacing,
    /// per-axis f64 origin; payload: row-major f64 values. Little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::Io { path: "<binary>".into(), source: e };
        w.write_all(&(self.grid.dim() as u32).to_le_bytes()).map_err(io)?;
        for &s in &self.grid.shape {
            w.write_all(&(s as u64).to_le_bytes()).map_err(io)?;
        }
        w.write_all(&self.grid.spacing.to_le_bytes()).map_err(io)?;
        for &o in &self.grid.origin {
            w.write_all(&o.to_le_bytes()).map_err(io)?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let io = |e| Error::Io { path: "<binary>".into(), source: e };
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(io)?;
        let d = u32::from_le_bytes(b4) as usize;
        let mut shape = Vec::with_capacity(d);
        for _ in 0..d {
            r.read_exact(&mut b8).map_err(io)?;
            shape.push(u64::from_le_bytes(b8) as usize);
        }
        r.read_exact(&mut b8).map_err(io)?;
        let spacing = f64::from_le_bytes(b8);
        let mut origin = Vec::with_capacity(d);
        for _ in 0..d {
            r.read_exact(&mut b8).map_err(io)?;
            origin.push(f64::from_le_bytes(b8));
        }
        let grid = Grid::new(origin, spacing, shape)?;
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            r.read_exact(&mut b8).map_err(io)?;
            values.push(f64::from_le_bytes(b8));
        }
        GridDensity::new(grid, values)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io {
        path: "<csv>".into(),
        source: std::io::Error::new(std::io::ErrorKind::Other, e),
    }
}
