//! Cell-centered rectangular grids and the per-cell fields that live on them.
//!
//! A [`Grid`] is an interval (1D) or rectangle (2D) split into uniform cells.
//! Values sit at cell centers; integrals use the midpoint rule. Storage is
//! row-major with axis 0 varying slowest, so a 2D field of shape `[n0, n1]`
//! stores cell `(i, j)` at `i * n1 + j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform cell-centered mesh on `[0, L0]` or `[0, L0] x [0, L1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    cells: [usize; 2],
    lengths: [f64; 2],
    spacing: [f64; 2],
}

impl Grid {
    pub fn new(dim: usize, cells: &[usize], lengths: &[f64]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if cells.len() != dim || lengths.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} cell counts and lengths, got {} and {}",
                cells.len(),
                lengths.len()
            )));
        }
        if let Some(&n) = cells.iter().find(|&&n| n < 2) {
            return Err(Error::InvalidGrid(format!("cells must be >= 2, got {n}")));
        }
        if let Some(&l) = lengths.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "lengths must be positive and finite, got {l}"
            )));
        }
        let mut g = Grid {
            dim,
            cells: [1, 1],
            lengths: [1.0, 1.0],
            spacing: [1.0, 1.0],
        };
        for a in 0..dim {
            g.cells[a] = cells[a];
            g.lengths[a] = lengths[a];
            g.spacing[a] = lengths[a] / cells[a] as f64;
        }
        Ok(g)
    }

    pub fn line(cells: usize, length: f64) -> Result<Self> {
        Grid::new(1, &[cells], &[length])
    }

    pub fn rect(cells: [usize; 2], lengths: [f64; 2]) -> Result<Self> {
        Grid::new(2, &cells, &lengths)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    /// Number of cells along the fastest-varying storage axis is `cells()[dim-1]`.
    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// |Ω|, the product of side lengths.
    pub fn measure(&self) -> f64 {
        self.lengths().iter().product()
    }

    /// Memory stride of one step along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        if self.dim == 2 && axis == 0 {
            self.cells[1]
        } else {
            1
        }
    }

    /// Cell-center coordinate of cell `i` on `axis`.
    pub fn center(&self, axis: usize, i: usize) -> f64 {
        (i as f64 + 0.5) * self.spacing[axis]
    }

    /// Multi-index of a flat storage index.
    pub fn unflatten(&self, k: usize) -> [usize; 2] {
        if self.dim == 2 {
            [k / self.cells[1], k % self.cells[1]]
        } else {
            [k, 0]
        }
    }

    /// Cell-center coordinates of a flat storage index (second entry is 0 in 1D).
    pub fn coords(&self, k: usize) -> [f64; 2] {
        let idx = self.unflatten(k);
        let mut x = [0.0; 2];
        for a in 0..self.dim {
            x[a] = self.center(a, idx[a]);
        }
        x
    }
}

/// Sum with a fixed pairwise order, independent of how callers batch the data.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Pairwise sum of `f(i)` over `0..n`.
pub fn pairwise_sum_by(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    fn go(lo: usize, hi: usize, f: &dyn Fn(usize) -> f64) -> f64 {
        if hi - lo <= 32 {
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        } else {
            let mid = lo + (hi - lo) / 2;
            go(lo, mid, f) + go(mid, hi, f)
        }
    }
    go(0, n, &f)
}

/// Integral summaries of a field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FieldStats {
    pub integral: f64,
    pub mean: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub min: f64,
    pub max: f64,
}

/// One real value per cell of a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Field::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Field {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "field has {} values but grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        let f = Field { grid, values };
        f.check_finite()?;
        Ok(f)
    }

    /// Samples `f` at every cell center.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.coords(k))).collect();
        Field { grid, values }
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn reduce(&self) -> FieldStats {
        let vol = self.grid.cell_volume();
        let v = &self.values;
        let integral = pairwise_sum(v) * vol;
        let l1 = pairwise_sum_by(v.len(), |i| v[i].abs()) * vol;
        let l2 = (pairwise_sum_by(v.len(), |i| v[i] * v[i]) * vol).sqrt();
        let (min, max) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
        FieldStats {
            integral,
            mean: self.mean(),
            l1,
            l2,
            linf: min.abs().max(max.abs()),
            min,
            max,
        }
    }

    pub fn integral(&self) -> f64 {
        pairwise_sum(&self.values) * self.grid.cell_volume()
    }

    /// Cell average, equal to `integral / |Ω|` on a uniform grid.
    ///
    /// Summed as offsets from the first entry so that a constant field has
    /// exactly its value as mean.
    pub fn mean(&self) -> f64 {
        let v = &self.values;
        let c = v[0];
        c + pairwise_sum_by(v.len(), |i| v[i] - c) / v.len() as f64
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Volume-weighted inner product.
    pub fn dot(&self, other: &Field) -> Result<f64> {
        self.same_grid(other)?;
        let (a, b) = (&self.values, &other.values);
        Ok(pairwise_sum_by(a.len(), |i| a[i] * b[i]) * self.grid.cell_volume())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.same_grid(other)?;
        Ok(Field::from_raw(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    /// Pointwise evaluation of an expression over several fields on one grid.
    ///
    /// `f` receives the values of every operand at a cell, in operand order.
    pub fn combine(fields: &[&Field], f: impl Fn(&[f64]) -> f64) -> Result<Field> {
        let first = fields
            .first()
            .ok_or_else(|| Error::Domain("combine needs at least one operand".into()))?;
        for g in &fields[1..] {
            first.same_grid(g)?;
        }
        let mut buf = vec![0.0; fields.len()];
        let values = (0..first.values.len())
            .map(|k| {
                for (slot, fld) in buf.iter_mut().zip(fields) {
                    *slot = fld.values[k];
                }
                f(&buf)
            })
            .collect();
        let out = Field::from_raw(first.grid, values);
        out.check_finite()?;
        Ok(out)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|x| c * x)
    }

    /// `self + c * other`
    pub fn axpy(&self, c: f64, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a + c * b)
    }

    pub fn offset(&self, c: f64) -> Field {
        self.map(|x| x + c)
    }
}
