//! Cell-centered densities on the truncated box `[-L, L]^d`.

use serde::Serialize;

use crate::error::{CboError, Result};
use crate::numerics::compensated_sum;

/// Nonnegative cell averages on a uniform grid over `[-L, L]^d`, `d` in {1, 2}.
///
/// Cells are stored row-major: in 2-D cell `(i, j)` lives at `i * n + j`,
/// with `i` indexing the first axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridDensity {
    dim: usize,
    cells: usize,
    half_width: f64,
    values: Vec<f64>,
    pub time: f64,
}

impl GridDensity {
    pub fn new(dim: usize, cells: usize, half_width: f64, values: Vec<f64>) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(CboError::Unsupported(format!(
                "grid dimension {dim}; only 1 and 2 are supported"
            )));
        }
        if cells < 2 {
            return Err(CboError::param("cells", "need at least 2 cells per axis"));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(CboError::param("half_width", "must be positive and finite"));
        }
        let len = cells.pow(dim as u32);
        if values.len() != len {
            return Err(CboError::DimensionMismatch {
                expected: len,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(CboError::param(
                "values",
                format!("cell {i} is {} (must be finite and nonnegative)", values[i]),
            ));
        }
        Ok(Self {
            dim,
            cells,
            half_width,
            values,
            time: 0.0,
        })
    }

    pub fn zeros(dim: usize, cells: usize, half_width: f64) -> Result<Self> {
        Self::new(dim, cells, half_width, vec![0.0; cells.pow(dim as u32)])
    }

    /// Samples `density` at cell centers (unnormalized).
    pub fn from_fn(dim: usize, cells: usize, half_width: f64, density: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut g = Self::zeros(dim, cells, half_width)?;
        let mut x = [0.0; 2];
        for k in 0..g.values.len() {
            g.center_into(k, &mut x);
            g.values[k] = density(&x[..dim]);
        }
        // re-validate the sampled values
        Self::new(dim, cells, half_width, g.values)
    }

    /// Isotropic Gaussian sampled at cell centers and scaled to unit mass.
    pub fn gaussian(dim: usize, cells: usize, half_width: f64, mean: &[f64], sd: f64) -> Result<Self> {
        if mean.len() != dim {
            return Err(CboError::DimensionMismatch {
                expected: dim,
                got: mean.len(),
            });
        }
        if !(sd > 0.0) {
            return Err(CboError::param("sd", "must be positive"));
        }
        let g = Self::from_fn(dim, cells, half_width, |x| {
            let r2: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
            (-0.5 * r2 / (sd * sd)).exp()
        })?;
        g.normalized()
    }

    /// Unit-mass indicator of the cells whose centers lie in `[lo, hi]^d`.
    pub fn uniform(dim: usize, cells: usize, half_width: f64, lo: f64, hi: f64) -> Result<Self> {
        let g = Self::from_fn(dim, cells, half_width, |x| {
            if x.iter().all(|&v| v >= lo && v <= hi) {
                1.0
            } else {
                0.0
            }
        })?;
        g.normalized()
    }

    /// All mass in the single cell containing `point`.
    pub fn point_mass(dim: usize, cells: usize, half_width: f64, point: &[f64]) -> Result<Self> {
        let mut g = Self::zeros(dim, cells, half_width)?;
        let idx = g
            .locate(point)
            .ok_or_else(|| CboError::param("point", "outside the grid"))?;
        g.values[idx] = 1.0 / g.cell_volume();
        Ok(g)
    }

    pub fn normalized(mut self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(CboError::NonPositiveMass { mass: m });
        }
        for v in &mut self.values {
            *v /= m;
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for solvers and tests. Callers keep values nonnegative.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.cells as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    /// Coordinate of the center of cell `i` along one axis.
    #[inline]
    pub fn axis_center(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.dx()
    }

    #[inline]
    pub fn axis_face(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx()
    }

    /// Writes the center of flat cell `k` into `out[..dim]`.
    #[inline]
    pub fn center_into(&self, k: usize, out: &mut [f64]) {
        if self.dim == 1 {
            out[0] = self.axis_center(k);
        } else {
            out[0] = self.axis_center(k / self.cells);
            out[1] = self.axis_center(k % self.cells);
        }
    }

    pub fn center(&self, k: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        self.center_into(k, &mut x);
        x
    }

    pub fn locate(&self, point: &[f64]) -> Option<usize> {
        if point.len() != self.dim {
            return None;
        }
        let dx = self.dx();
        let mut idx = 0;
        for &p in point {
            let u = ((p + self.half_width) / dx).floor();
            if !(u >= 0.0 && u < self.cells as f64) {
                return None;
            }
            idx = idx * self.cells + u as usize;
        }
        Some(idx)
    }

    pub fn mass(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) * self.cell_volume()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn same_layout(&self, other: &GridDensity) -> bool {
        self.dim == other.dim && self.cells == other.cells && self.half_width == other.half_width
    }

    /// `sum |a - b| dx^d` over a shared grid.
    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        if !self.same_layout(other) {
            return Err(CboError::param("grid", "densities live on different grids"));
        }
        Ok(compensated_sum(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs())) * self.cell_volume())
    }

    /// Cell averages of this density on a grid with `factor` times fewer
    /// cells per axis (mass preserving).
    pub fn coarsen(&self, factor: usize) -> Result<GridDensity> {
        if factor == 0 || !self.cells.is_multiple_of(factor) {
            return Err(CboError::param("factor", "must divide the cell count"));
        }
        let nc = self.cells / factor;
        let mut out = GridDensity::zeros(self.dim, nc, self.half_width)?;
        let w = 1.0 / (factor.pow(self.dim as u32) as f64);
        for k in 0..self.values.len() {
            let ck = if self.dim == 1 {
                k / factor
            } else {
                (k / self.cells / factor) * nc + (k % self.cells) / factor
            };
            out.values[ck] += self.values[k] * w;
        }
        out.time = self.time;
        Ok(out)
    }
}
