//! Regular grids: geometry, signed scalar samples, densities and vector fields.
//!
//! Grids are square (`n` cells per axis) and stored row-major with axis 0 slowest.
//! A torus grid always covers the unit cell `[0,1)^d`; a whole-space grid covers
//! `origin + [0, n*h)^d`.

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::params::Domain;

/// Tolerance between declared and quadrature mass of a density.
pub const MASS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    cell_size: f64,
    origin: Vec<f64>,
    domain: Domain,
}

impl Grid {
    pub fn torus(dim: usize, n: usize) -> Result<Self> {
        if dim == 0 || n == 0 {
            return Err(Error::InvalidParameter("grid needs dim >= 1 and n >= 1".into()));
        }
        Ok(Self { dim, n, cell_size: 1.0 / n as f64, origin: vec![0.0; dim], domain: Domain::Torus })
    }

    pub fn whole_space(dim: usize, n: usize, cell_size: f64, origin: Vec<f64>) -> Result<Self> {
        if dim == 0 || n == 0 || !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidParameter("grid needs dim >= 1, n >= 1, cell_size > 0".into()));
        }
        if origin.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: origin.len() });
        }
        Ok(Self { dim, n, cell_size, origin, domain: Domain::WholeSpace })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_size.powi(self.dim as i32)
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Multi-index of a flat cell index.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Coordinates of the centre of cell `flat`.
    pub fn center(&self, flat: usize) -> Vec<f64> {
        self.unravel(flat)
            .into_iter()
            .zip(&self.origin)
            .map(|(i, o)| o + (i as f64 + 0.5) * self.cell_size)
            .collect()
    }

    /// Centre coordinate along a single axis.
    pub fn center_1d(&self, i: usize, axis: usize) -> f64 {
        self.origin[axis] + (i as f64 + 0.5) * self.cell_size
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.dim == other.dim
            && self.n == other.n
            && self.domain == other.domain
            && (self.cell_size - other.cell_size).abs() <= 1e-15 * self.cell_size
            && self.origin.iter().zip(&other.origin).all(|(a, b)| (a - b).abs() <= 1e-15)
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("grids differ in shape, spacing, origin or domain".into()))
        }
    }
}

/// Signed samples of a scalar function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid values".into()));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at cell centres.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: Grid, f: F) -> Result<Self> {
        let values = (0..grid.len()).map(|k| f(&grid.center(k))).collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: Grid) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
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

    pub fn integral(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) * self.grid.cell_volume()
    }

    /// Mean over the grid box.
    pub fn mean(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) / self.values.len() as f64
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|v| v * factor).collect() }
    }

    pub fn sub(&self, other: &ScalarGrid) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }
}

/// Nonnegative density samples with a declared mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    inner: ScalarGrid,
    mass: f64,
}

impl GridDensity {
    /// Density whose mass is whatever the samples integrate to.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let inner = ScalarGrid::new(grid, values)?;
        if let Some(k) = inner.values.iter().position(|&v| v < 0.0) {
            return Err(Error::NegativeWeight { index: k, value: inner.values[k] });
        }
        let mass = inner.integral();
        Ok(Self { inner, mass })
    }

    /// Density with a declared mass, checked against quadrature.
    pub fn with_mass(grid: Grid, values: Vec<f64>, mass: f64) -> Result<Self> {
        let d = Self::new(grid, values)?;
        if (d.mass - mass).abs() > MASS_TOL {
            return Err(Error::MassMismatch(d.mass, mass));
        }
        Ok(Self { mass, ..d })
    }

    /// Samples a nonnegative function at cell centres and rescales to unit mass.
    pub fn probability_from_fn<F: Fn(&[f64]) -> f64>(grid: Grid, f: F) -> Result<Self> {
        let raw = ScalarGrid::from_fn(grid, f)?;
        let total = raw.integral();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("density has no mass".into()));
        }
        let grid = raw.grid.clone();
        let values = raw.values.into_iter().map(|v| v / total).collect();
        Self::with_mass(grid, values, 1.0)
    }

    pub fn grid(&self) -> &Grid {
        self.inner.grid()
    }

    pub fn values(&self) -> &[f64] {
        self.inner.values()
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Grid maximum, the estimate of the L-infinity norm.
    pub fn sup(&self) -> f64 {
        self.inner.values.iter().fold(0.0, |m, &v| m.max(v))
    }

    pub fn as_scalar(&self) -> &ScalarGrid {
        &self.inner
    }
}

/// `d` component arrays sampling a vector field (typically `grad U`) on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    grid: Grid,
    components: Vec<Vec<f64>>,
}

impl FieldGrid {
    pub fn new(grid: Grid, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim() {
            return Err(Error::DimensionMismatch { expected: grid.dim(), got: components.len() });
        }
        for c in &components {
            if c.len() != grid.len() {
                return Err(Error::DimensionMismatch { expected: grid.len(), got: c.len() });
            }
        }
        Ok(Self { grid, components })
    }

    pub fn zeros(grid: Grid) -> Self {
        let components = vec![vec![0.0; grid.len()]; grid.dim()];
        Self { grid, components }
    }

    pub fn from_fn<F: Fn(&[f64]) -> Vec<f64>>(grid: Grid, f: F) -> Result<Self> {
        let mut components = vec![Vec::with_capacity(grid.len()); grid.dim()];
        for k in 0..grid.len() {
            let v = f(&grid.center(k));
            if v.len() != grid.dim() {
                return Err(Error::DimensionMismatch { expected: grid.dim(), got: v.len() });
            }
            for (c, x) in components.iter_mut().zip(v) {
                c.push(x);
            }
        }
        Self::new(grid, components)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    /// Euclidean norm of the field at a cell.
    pub fn magnitude(&self, cell: usize) -> f64 {
        self.components.iter().map(|c| c[cell] * c[cell]).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &FieldGrid) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &FieldGrid) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            components: self.components.iter().map(|c| c.iter().map(|v| v * factor).collect()).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn zip_with(&self, other: &FieldGrid, op: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid.clone(),
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| op(*x, *y)).collect())
                .collect(),
        })
    }
}
