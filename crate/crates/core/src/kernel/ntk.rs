use nalgebra::DMatrix;

use super::kernel::Kernel;
use crate::error::{DmftError, Result};
use crate::linalg;

/// Neural tangent kernel from per-layer feature and gradient kernels.
///
/// `phis[l]` holds Φ^{l+1} and `gs[l]` holds G^{l+1}; `kx` is the input gram over
/// the kernels' sample set. Computes
/// `Φ^L + Σ_{l=1}^{L-1} G^{l+1} ⊙ Φ^l + G^1 ⊙ (K^x ⊗ 1 1ᵀ)`.
pub fn ntk_assemble(phis: &[Kernel], gs: &[Kernel], kx: &DMatrix<f64>) -> Result<Kernel> {
    assemble(phis, gs, kx, false)
}

/// As [`ntk_assemble`] for a network with a trainable bias in every hidden
/// layer: each `G^{l+1}` term picks up an extra `G^{l+1} ⊙ 1 1ᵀ` from the bias gradient.
pub fn ntk_assemble_with_bias(phis: &[Kernel], gs: &[Kernel], kx: &DMatrix<f64>) -> Result<Kernel> {
    assemble(phis, gs, kx, true)
}

fn assemble(phis: &[Kernel], gs: &[Kernel], kx: &DMatrix<f64>, bias: bool) -> Result<Kernel> {
    let depth = phis.len();
    if depth == 0 || gs.len() != depth {
        return Err(DmftError::ShapeMismatch(format!(
            "need matching non-empty layer lists, got {} feature and {} gradient kernels",
            depth,
            gs.len()
        )));
    }
    let top = &phis[depth - 1];
    let shape = top.values.shape();
    for k in phis.iter().chain(gs.iter()) {
        if k.values.shape() != shape || k.grid != top.grid {
            return Err(DmftError::ShapeMismatch(format!(
                "kernel '{}' is {:?}, expected {:?} on the shared grid",
                k.name,
                k.values.shape(),
                shape
            )));
        }
    }
    if kx.nrows() != top.n_row_samples() || kx.ncols() != top.n_col_samples() {
        return Err(DmftError::ShapeMismatch(format!(
            "input gram is {}x{}, kernels cover {}x{} samples",
            kx.nrows(),
            kx.ncols(),
            top.n_row_samples(),
            top.n_col_samples()
        )));
    }
    let steps = top.n_steps();
    let mut total = top.values.clone();
    let mut below = linalg::expand_over_time(kx, steps);
    for l in 0..depth {
        if bias {
            below.add_scalar_mut(1.0);
        }
        total += gs[l].values.component_mul(&below);
        if l + 1 < depth {
            below = phis[l].values.clone();
        }
    }
    let mut out = Kernel::new("ntk", total, top.row_samples.clone(), top.col_samples.clone(), top.grid)?;
    out.scheme = top.scheme.clone();
    Ok(out)
}

/// Equal-time blocks `K(t_k, t_k)` for every grid point.
pub fn equal_time_blocks(kernel: &Kernel) -> Vec<DMatrix<f64>> {
    (0..kernel.n_steps()).map(|k| kernel.equal_time(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::TimeGrid;

    fn grid() -> TimeGrid {
        TimeGrid::new(2, 0.5).unwrap()
    }

    fn constant(name: &str, base: &DMatrix<f64>) -> Kernel {
        Kernel::constant_in_time(name, base, grid()).unwrap()
    }

    #[test]
    fn single_layer_is_phi_plus_g_times_input() {
        let kx = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.5]);
        let phi = constant("phi1", &DMatrix::from_row_slice(2, 2, &[0.7, 0.1, 0.1, 0.9]));
        let g = constant("g1", &DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.3, 0.4]));
        let ntk = ntk_assemble(&[phi.clone()], &[g.clone()], &kx).unwrap();
        let expected = &phi.values + g.values.component_mul(&linalg::expand_over_time(&kx, 2));
        assert!((ntk.values - expected).abs().max() < 1e-15);
    }

    #[test]
    fn deep_linear_at_init_is_depth_plus_one_times_input() {
        let kx = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]);
        let ones = DMatrix::from_element(2, 2, 1.0);
        for depth in 1..5 {
            let phis: Vec<_> = (0..depth).map(|_| constant("phi", &kx)).collect();
            let gs: Vec<_> = (0..depth).map(|_| constant("g", &ones)).collect();
            let ntk = ntk_assemble(&phis, &gs, &kx).unwrap();
            let expected = linalg::expand_over_time(&kx, 2) * (depth as f64 + 1.0);
            assert!((ntk.values - expected).abs().max() < 1e-14);
        }
    }

    #[test]
    fn bias_adds_gradient_kernels() {
        let kx = DMatrix::identity(2, 2);
        let phi = constant("phi", &kx);
        let g = constant("g", &DMatrix::from_element(2, 2, 0.5));
        let plain = ntk_assemble(&[phi.clone(), phi.clone()], &[g.clone(), g.clone()], &kx).unwrap();
        let biased = ntk_assemble_with_bias(&[phi.clone(), phi], &[g.clone(), g.clone()], &kx).unwrap();
        let diff = biased.values - plain.values;
        assert!((diff - 2.0 * &g.values).abs().max() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let kx = DMatrix::identity(2, 2);
        let phi = constant("phi", &kx);
        let g3 = Kernel::constant_in_time("g", &DMatrix::identity(3, 3), grid()).unwrap();
        assert!(matches!(ntk_assemble(&[phi], &[g3], &kx), Err(DmftError::ShapeMismatch(_))));
    }
}
