use nalgebra::{DMatrix, DVector};

use super::grid::TimeGrid;
use crate::error::{DmftError, Result};
use crate::linalg;

/// Two-point function `K_{mu alpha}(t, s)` stored as a dense matrix over the
/// flattened `(sample, time)` index.
///
/// Flattening is sample-major, time-minor: row `mu * T + k` holds sample
/// `row_samples[mu]` at time `t_k`. Columns follow the same rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub name: String,
    pub values: DMatrix<f64>,
    pub row_samples: Vec<usize>,
    pub col_samples: Vec<usize>,
    pub grid: TimeGrid,
    /// Optional label of the scheme that produced the kernel (written into file headers).
    pub scheme: Option<String>,
}

impl Kernel {
    pub fn new(
        name: impl Into<String>,
        values: DMatrix<f64>,
        row_samples: Vec<usize>,
        col_samples: Vec<usize>,
        grid: TimeGrid,
    ) -> Result<Self> {
        let t = grid.n_steps();
        if values.nrows() != row_samples.len() * t || values.ncols() != col_samples.len() * t {
            return Err(DmftError::ShapeMismatch(format!(
                "kernel values are {}x{}, expected {}x{}",
                values.nrows(),
                values.ncols(),
                row_samples.len() * t,
                col_samples.len() * t
            )));
        }
        Ok(Self { name: name.into(), values, row_samples, col_samples, grid, scheme: None })
    }

    /// Square kernel over samples `0..n_samples`.
    pub fn square(name: impl Into<String>, values: DMatrix<f64>, n_samples: usize, grid: TimeGrid) -> Result<Self> {
        let ids: Vec<usize> = (0..n_samples).collect();
        Self::new(name, values, ids.clone(), ids, grid)
    }

    pub fn zeros(name: impl Into<String>, n_samples: usize, grid: TimeGrid) -> Self {
        let n = n_samples * grid.n_steps();
        let ids: Vec<usize> = (0..n_samples).collect();
        Self {
            name: name.into(),
            values: DMatrix::zeros(n, n),
            row_samples: ids.clone(),
            col_samples: ids,
            grid,
            scheme: None,
        }
    }

    /// `base ⊗ 1 1ᵀ`: the same sample kernel at every pair of times.
    pub fn constant_in_time(name: impl Into<String>, base: &DMatrix<f64>, grid: TimeGrid) -> Result<Self> {
        if base.nrows() != base.ncols() {
            return Err(DmftError::ShapeMismatch("time-constant kernel needs a square base".into()));
        }
        Self::square(name, linalg::expand_over_time(base, grid.n_steps()), base.nrows(), grid)
    }

    pub fn with_scheme(mut self, scheme: impl Into<String>) -> Self {
        self.scheme = Some(scheme.into());
        self
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    #[inline]
    pub fn n_row_samples(&self) -> usize {
        self.row_samples.len()
    }

    #[inline]
    pub fn n_col_samples(&self) -> usize {
        self.col_samples.len()
    }

    #[inline]
    pub fn index(&self, mu: usize, k: usize) -> usize {
        mu * self.grid.n_steps() + k
    }

    /// `K_{mu alpha}(t_k, t_j)` with local sample positions.
    #[inline]
    pub fn at(&self, mu: usize, k: usize, alpha: usize, j: usize) -> f64 {
        self.values[(self.index(mu, k), self.index(alpha, j))]
    }

    /// Sample-by-sample block at the time pair `(t_k, t_j)`.
    pub fn block(&self, k: usize, j: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_row_samples(), self.n_col_samples(), |mu, al| self.at(mu, k, al, j))
    }

    pub fn equal_time(&self, k: usize) -> DMatrix<f64> {
        self.block(k, k)
    }

    /// Sample trace `sum_mu K_{mu mu}(t, s)` as a `T x T` matrix.
    pub fn sample_trace(&self) -> DMatrix<f64> {
        let t = self.n_steps();
        let p = self.n_row_samples().min(self.n_col_samples());
        DMatrix::from_fn(t, t, |k, j| (0..p).map(|mu| self.at(mu, k, mu, j)).sum())
    }

    fn same_shape(&self, other: &Kernel) -> Result<()> {
        if self.values.shape() != other.values.shape() || self.grid.n_steps() != other.grid.n_steps() {
            return Err(DmftError::ShapeMismatch(format!(
                "kernels '{}' {:?} and '{}' {:?} differ in shape",
                self.name,
                self.values.shape(),
                other.name,
                other.values.shape()
            )));
        }
        Ok(())
    }

    /// Elementwise product on a shared index space.
    pub fn hadamard(&self, other: &Kernel) -> Result<DMatrix<f64>> {
        self.same_shape(other)?;
        Ok(self.values.component_mul(&other.values))
    }

    pub fn frobenius(&self) -> f64 {
        linalg::frobenius(&self.values)
    }

    /// `‖K − Kᵀ‖_F / ‖K‖_F`.
    pub fn symmetry_error(&self) -> f64 {
        let norm = self.frobenius();
        if norm == 0.0 {
            return 0.0;
        }
        linalg::frobenius(&(&self.values - self.values.transpose())) / norm
    }

    pub fn symmetrize(&mut self) {
        linalg::symmetrize(&mut self.values);
    }

    /// Largest `|K(t_k, t_j)|` with `j > k` (or `j >= k` when `strict`).
    pub fn causality_violation(&self, strict: bool) -> f64 {
        let t = self.n_steps();
        let mut worst: f64 = 0.0;
        for mu in 0..self.n_row_samples() {
            for k in 0..t {
                for al in 0..self.n_col_samples() {
                    for j in 0..t {
                        if j > k || (strict && j == k) {
                            worst = worst.max(self.at(mu, k, al, j).abs());
                        }
                    }
                }
            }
        }
        worst
    }

    /// The same kernel on a shorter or longer grid with the same spacing.
    /// Time points past the stored horizon repeat the last stored one when
    /// `hold` is set and are zero otherwise.
    pub fn on_grid(&self, grid: TimeGrid, hold: bool) -> Result<Kernel> {
        let (old, new) = (self.n_steps(), grid.n_steps());
        if grid.dt() != self.grid.dt() {
            return Err(DmftError::ShapeMismatch(format!(
                "cannot move kernel '{}' from {:?} to {:?}",
                self.name, self.grid, grid
            )));
        }
        let (m, n) = (self.n_row_samples(), self.n_col_samples());
        let values = DMatrix::from_fn(m * new, n * new, |r, c| {
            let (mu, k, al, j) = (r / new, r % new, c / new, c % new);
            if hold {
                self.at(mu, k.min(old - 1), al, j.min(old - 1))
            } else if k < old && j < old {
                self.at(mu, k, al, j)
            } else {
                0.0
            }
        });
        Ok(Kernel { values, grid, ..self.clone() })
    }

    /// Relative Frobenius distance `‖self − other‖ / ‖other‖`.
    pub fn relative_distance(&self, other: &Kernel) -> Result<f64> {
        self.same_shape(other)?;
        Ok(linalg::relative_change(&self.values, &other.values))
    }
}

/// Real array indexed by `(sample, time)`; rows are samples, columns grid points.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub values: DMatrix<f64>,
}

impl Trajectory {
    pub fn zeros(n_samples: usize, n_steps: usize) -> Self {
        Self { values: DMatrix::zeros(n_samples, n_steps) }
    }

    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        Self { values }
    }

    /// Reshape a flat sample-major vector of length `n_samples * n_steps`.
    pub fn from_flat(flat: &[f64], n_samples: usize, n_steps: usize) -> Result<Self> {
        if flat.len() != n_samples * n_steps {
            return Err(DmftError::ShapeMismatch(format!(
                "flat trajectory of length {} cannot hold {}x{}",
                flat.len(),
                n_samples,
                n_steps
            )));
        }
        Ok(Self { values: DMatrix::from_row_slice(n_samples, n_steps, flat) })
    }

    pub fn flatten(&self) -> Vec<f64> {
        linalg::to_rowmajor(&self.values)
    }

    #[inline]
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.values.ncols()
    }

    #[inline]
    pub fn at(&self, mu: usize, k: usize) -> f64 {
        self.values[(mu, k)]
    }

    pub fn at_time(&self, k: usize) -> DVector<f64> {
        self.values.column(k).into_owned()
    }
}
