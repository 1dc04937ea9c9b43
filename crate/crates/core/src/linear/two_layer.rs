use nalgebra::{DMatrix, DVector};

use crate::error::{DmftError, Result};
use crate::kernel::TimeGrid;

/// Largest RK4 step used between grid points.
const MAX_SUBSTEP: f64 = 1e-3;

fn rk4<S, F>(state: &mut S, dt: f64, deriv: F)
where
    S: Clone + std::ops::Add<S, Output = S> + std::ops::Mul<f64, Output = S>,
    F: Fn(&S) -> S,
{
    let k1 = deriv(state);
    let k2 = deriv(&(state.clone() + k1.clone() * (0.5 * dt)));
    let k3 = deriv(&(state.clone() + k2.clone() * (0.5 * dt)));
    let k4 = deriv(&(state.clone() + k3.clone() * dt));
    *state = state.clone() + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
}

fn substeps(grid: &TimeGrid) -> (usize, f64) {
    let m = (grid.dt() / MAX_SUBSTEP).ceil().max(1.0) as usize;
    (m, grid.dt() / m as f64)
}

/// Error norm and task-aligned kernel of a two-layer linear network on whitened data.
#[derive(Clone, Debug, PartialEq)]
pub struct WhitenedTrajectory {
    pub delta: Vec<f64>,
    pub h_y: Vec<f64>,
}

impl WhitenedTrajectory {
    /// `H_y² − γ₀²(y − Δ)²` at every grid point.
    pub fn invariant(&self, gamma0: f64, y_norm: f64) -> Vec<f64> {
        self.delta
            .iter()
            .zip(&self.h_y)
            .map(|(&d, &h)| h * h - gamma0 * gamma0 * (y_norm - d) * (y_norm - d))
            .collect()
    }
}

/// RK4 integration of `H_y' = 2γ₀²Δ(y − Δ)`, `Δ' = −2 H_y Δ` from `H_y(0) = 1`, `Δ(0) = y`.
pub fn two_layer_whitened(gamma0: f64, y_norm: f64, grid: &TimeGrid) -> WhitenedTrajectory {
    let g2 = gamma0 * gamma0;
    let (m, h) = substeps(grid);
    let mut s = DVector::from_vec(vec![1.0, y_norm]);
    let deriv = |s: &DVector<f64>| DVector::from_vec(vec![2.0 * g2 * s[1] * (y_norm - s[1]), -2.0 * s[0] * s[1]]);
    let mut out = WhitenedTrajectory { delta: Vec::new(), h_y: Vec::new() };
    for k in 0..grid.n_steps() {
        if k > 0 {
            for _ in 0..m {
                rk4(&mut s, h, deriv);
            }
        }
        out.h_y.push(s[0]);
        out.delta.push(s[1]);
    }
    out
}

/// Feature kernel, gradient kernel and error of a two-layer linear network on arbitrary data.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerTrajectory {
    pub h: Vec<DMatrix<f64>>,
    pub g: Vec<f64>,
    pub delta: Vec<DVector<f64>>,
}

/// RK4 integration of
/// `H' = γ₀²[K^x Δ fᵀ + f Δᵀ K^x]`, `G' = 2γ₀² f·Δ`, `Δ' = −(H + G K^x)Δ`
/// with `f = y − Δ`, from `H(0) = K^x`, `G(0) = 1`, `Δ(0) = y`.
pub fn two_layer_general(gamma0: f64, kx: &DMatrix<f64>, y: &DVector<f64>, grid: &TimeGrid) -> Result<TwoLayerTrajectory> {
    let p = y.len();
    if kx.nrows() != p || kx.ncols() != p {
        return Err(DmftError::ShapeMismatch(format!("input gram {:?} for {p} targets", kx.shape())));
    }
    let g2 = gamma0 * gamma0;
    let dim = p * p + 1 + p;
    let unpack = |s: &DVector<f64>| {
        let h = DMatrix::from_column_slice(p, p, &s.as_slice()[..p * p]);
        let g = s[p * p];
        let d = DVector::from_column_slice(&s.as_slice()[p * p + 1..]);
        (h, g, d)
    };
    let pack = |h: &DMatrix<f64>, g: f64, d: &DVector<f64>| {
        let mut s = DVector::zeros(dim);
        s.as_mut_slice()[..p * p].copy_from_slice(h.as_slice());
        s[p * p] = g;
        s.as_mut_slice()[p * p + 1..].copy_from_slice(d.as_slice());
        s
    };
    let deriv = |s: &DVector<f64>| {
        let (h, g, d) = unpack(s);
        let f = y - &d;
        let kd = kx * &d;
        let dh = (&kd * f.transpose() + &f * kd.transpose()) * g2;
        let dg = 2.0 * g2 * f.dot(&d);
        let dd = -(&h * &d + &kd * g);
        pack(&dh, dg, &dd)
    };
    let (m, step) = substeps(grid);
    let mut s = pack(kx, 1.0, y);
    let mut out = TwoLayerTrajectory { h: Vec::new(), g: Vec::new(), delta: Vec::new() };
    for k in 0..grid.n_steps() {
        if k > 0 {
            for _ in 0..m {
                rk4(&mut s, step, deriv);
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(DmftError::NonFiniteValue { context: format!("two-layer ODE at step {k}") });
            }
        }
        let (h, g, d) = unpack(&s);
        out.h.push(h);
        out.g.push(g);
        out.delta.push(d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conserved_quantity_holds_along_the_trajectory() {
        let grid = TimeGrid::new(201, 0.05).unwrap();
        for gamma0 in [0.5, 1.0, 2.0] {
            let tr = two_layer_whitened(gamma0, 1.3, &grid);
            for v in tr.invariant(gamma0, 1.3) {
                assert!((v - 1.0).abs() < 1e-10, "γ₀ = {gamma0}: {v}");
            }
            let h_final = (1.0 + gamma0 * gamma0 * 1.3 * 1.3).sqrt();
            assert!((tr.h_y.last().unwrap() - h_final).abs() < 1e-6);
        }
    }

    #[test]
    fn lazy_limit_decays_exponentially() {
        let grid = TimeGrid::new(11, 0.1).unwrap();
        let tr = two_layer_whitened(0.0, 2.0, &grid);
        for (k, d) in tr.delta.iter().enumerate() {
            assert!((d - 2.0 * (-2.0 * grid.time(k)).exp()).abs() < 1e-12);
        }
        assert!(tr.h_y.iter().all(|&h| h == 1.0));
    }

    #[test]
    fn richer_training_learns_faster() {
        let grid = TimeGrid::new(21, 0.05).unwrap();
        let slow = two_layer_whitened(0.5, 1.0, &grid);
        let fast = two_layer_whitened(2.0, 1.0, &grid);
        for k in 1..21 {
            assert!(fast.delta[k] < slow.delta[k]);
        }
    }

    #[test]
    fn general_system_reduces_to_whitened_on_identity_gram() {
        let grid = TimeGrid::new(31, 0.1).unwrap();
        let y = DVector::from_vec(vec![0.6, -0.8, 0.0]);
        let gen = two_layer_general(1.5, &DMatrix::identity(3, 3), &y, &grid).unwrap();
        let white = two_layer_whitened(1.5, 1.0, &grid);
        for k in 0..31 {
            let hy = y.dot(&(&gen.h[k] * &y));
            assert!((hy - white.h_y[k]).abs() < 1e-10);
            assert!((gen.g[k] - white.h_y[k]).abs() < 1e-10);
            assert!((&gen.delta[k] - &y * white.delta[k]).norm() < 1e-10);
            let orth = DVector::from_vec(vec![0.8, 0.6, 0.0]);
            assert!((orth.dot(&(&gen.h[k] * &orth)) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn general_system_rejects_bad_shapes() {
        let grid = TimeGrid::new(3, 0.1).unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(two_layer_general(1.0, &DMatrix::identity(3, 3), &y, &grid).is_err());
    }
}
