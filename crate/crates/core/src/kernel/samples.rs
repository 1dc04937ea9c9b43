use nalgebra::{DMatrix, DVector};

use crate::error::{DmftError, Result};
use crate::linalg::min_eigenvalue;

/// Eigenvalues of an input gram above this are tolerated as numerical noise.
pub const PSD_TOLERANCE: f64 = -1e-10;

/// Training and test inputs, described through their gram matrix.
///
/// Samples `0..n_train` are training points; the remaining `n_test` rows of the
/// gram are test points that are evaluated but never trained on.
#[derive(Clone, Debug)]
pub struct SampleSet {
    n_train: usize,
    n_test: usize,
    input_gram: DMatrix<f64>,
    targets: DVector<f64>,
    inputs: Option<DMatrix<f64>>,
}

impl SampleSet {
    /// Build `K^x = X Xᵀ / D` from raw inputs (one row per sample, train rows first).
    pub fn from_inputs(inputs: DMatrix<f64>, n_train: usize, targets: DVector<f64>) -> Result<Self> {
        let d = inputs.ncols();
        if d == 0 {
            return Err(DmftError::ShapeMismatch("inputs have zero features".into()));
        }
        let mut gram = &inputs * inputs.transpose() / d as f64;
        crate::linalg::symmetrize(&mut gram);
        let mut set = Self::from_gram(gram, n_train, targets)?;
        set.inputs = Some(inputs);
        Ok(set)
    }

    /// Accept a precomputed gram; it must be symmetric with eigenvalues above [`PSD_TOLERANCE`].
    pub fn from_gram(input_gram: DMatrix<f64>, n_train: usize, targets: DVector<f64>) -> Result<Self> {
        let n = input_gram.nrows();
        if input_gram.ncols() != n {
            return Err(DmftError::ShapeMismatch(format!(
                "input gram must be square, got {}x{}",
                n,
                input_gram.ncols()
            )));
        }
        if n_train == 0 || n_train > n {
            return Err(DmftError::ShapeMismatch(format!(
                "n_train = {n_train} must lie in 1..={n}"
            )));
        }
        if targets.len() != n_train {
            return Err(DmftError::ShapeMismatch(format!(
                "expected {n_train} targets, got {}",
                targets.len()
            )));
        }
        if input_gram.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(DmftError::NonFiniteValue { context: "sample set".into() });
        }
        let asym = (&input_gram - input_gram.transpose()).abs().max();
        let scale = input_gram.abs().max().max(1.0);
        if asym > 1e-10 * scale {
            return Err(DmftError::ShapeMismatch(format!("input gram is not symmetric (max asymmetry {asym:e})")));
        }
        let lam = min_eigenvalue(&input_gram);
        if lam < PSD_TOLERANCE {
            return Err(DmftError::NonPsdGram { min_eigenvalue: lam });
        }
        Ok(Self { n_train, n_test: n - n_train, input_gram, targets, inputs: None })
    }

    #[inline]
    pub fn n_train(&self) -> usize {
        self.n_train
    }

    #[inline]
    pub fn n_test(&self) -> usize {
        self.n_test
    }

    /// Train plus test samples.
    #[inline]
    pub fn n_total(&self) -> usize {
        self.n_train + self.n_test
    }

    pub fn input_gram(&self) -> &DMatrix<f64> {
        &self.input_gram
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn inputs(&self) -> Option<&DMatrix<f64>> {
        self.inputs.as_ref()
    }

    /// Gram restricted to the training samples.
    pub fn train_gram(&self) -> DMatrix<f64> {
        self.input_gram.view((0, 0), (self.n_train, self.n_train)).into_owned()
    }

    /// Raw inputs if available, otherwise a factor `X` with `X Xᵀ / D = K^x` and `D = n_total`.
    pub fn inputs_or_factor(&self) -> Result<DMatrix<f64>> {
        if let Some(x) = &self.inputs {
            return Ok(x.clone());
        }
        let n = self.n_total();
        let (l, _) = crate::linalg::jittered_cholesky(&self.input_gram)?;
        let l = crate::linalg::from_rowmajor(n, n, &l);
        Ok(l * (n as f64).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_from_scaled_basis_vectors_is_identity() {
        let d = 9.0_f64;
        let mut x = DMatrix::zeros(2, 9);
        x[(0, 0)] = d.sqrt();
        x[(1, 1)] = d.sqrt();
        let s = SampleSet::from_inputs(x, 2, DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert!((s.input_gram() - DMatrix::identity(2, 2)).abs().max() < 1e-14);
    }

    #[test]
    fn duplicate_rows_are_allowed() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, -1.0, 0.5]);
        let s = SampleSet::from_inputs(x, 3, DVector::from_vec(vec![1.0, 1.0, 0.0])).unwrap();
        let g = s.input_gram();
        assert_eq!(g.row(0), g.row(1));
    }

    #[test]
    fn rejects_indefinite_gram() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            SampleSet::from_gram(g, 2, DVector::zeros(2)),
            Err(DmftError::NonPsdGram { .. })
        ));
    }

    #[test]
    fn rejects_wrong_target_count() {
        let g = DMatrix::identity(3, 3);
        assert!(SampleSet::from_gram(g, 2, DVector::zeros(3)).is_err());
    }

    #[test]
    fn factor_reproduces_gram() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = SampleSet::from_gram(g.clone(), 1, DVector::from_vec(vec![1.0])).unwrap();
        let x = s.inputs_or_factor().unwrap();
        let rec = &x * x.transpose() / x.ncols() as f64;
        assert!((rec - g).abs().max() < 1e-12);
    }
}
