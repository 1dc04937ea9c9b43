use nalgebra::DMatrix;

use super::kernel::Kernel;
use crate::error::{DmftError, Result};

/// Cosine similarity `Tr(aᵀb) / (‖a‖_F ‖b‖_F)` of two kernels.
pub fn alignment(a: &Kernel, b: &Kernel) -> Result<f64> {
    if a.values.shape() != b.values.shape() {
        return Err(DmftError::ShapeMismatch(format!(
            "cannot align '{}' {:?} with '{}' {:?}",
            a.name,
            a.values.shape(),
            b.name,
            b.values.shape()
        )));
    }
    matrix_alignment(&a.values, &b.values)
}

pub fn matrix_alignment(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(DmftError::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(DmftError::ZeroNorm);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}
