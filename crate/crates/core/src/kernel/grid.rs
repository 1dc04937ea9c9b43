use serde::{Deserialize, Serialize};

use crate::error::{DmftError, Result};

/// Uniform grid `t_k = k dt`, `k = 0..n_steps`, in units of gradient-flow time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, dt: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(DmftError::InvalidConfig("time grid needs at least one step".into()));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(DmftError::InvalidConfig(format!("dt must be positive and finite, got {dt}")));
        }
        Ok(Self { n_steps, dt })
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_steps).map(move |k| self.time(k))
    }

    /// Time of the last grid point.
    pub fn horizon(&self) -> f64 {
        self.time(self.n_steps - 1)
    }

    /// Same spacing, `factor` times as many points.
    pub fn extended(&self, factor: usize) -> Self {
        Self { n_steps: self.n_steps * factor.max(1), dt: self.dt }
    }
}
