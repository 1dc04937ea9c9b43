use nalgebra::DMatrix;

use super::train::TrainLog;
use crate::error::{DmftError, Result};
use crate::kernel::{ntk_assemble, ntk_assemble_with_bias, Kernel};
use crate::linalg;

/// Two-time kernels of a finite network, normalized by its width.
#[derive(Clone, Debug)]
pub struct EmpiricalKernels {
    /// Φ^0..Φ^L; Φ^0 is the input gram.
    pub phi: Vec<Kernel>,
    /// G^1..G^{L+1}; the readout entry is all ones.
    pub g: Vec<Kernel>,
    pub ntk: Kernel,
}

impl EmpiricalKernels {
    pub fn phi(&self, layer: usize) -> &Kernel {
        &self.phi[layer]
    }

    pub fn g(&self, layer: usize) -> &Kernel {
        &self.g[layer - 1]
    }
}

/// `Φ^l = φ(h^l)·φ(h^l) / N` and `G^l = g^l·g^l / N` over every logged time pair.
pub fn measure_kernels(log: &TrainLog) -> Result<EmpiricalKernels> {
    let acts = log
        .activations
        .as_ref()
        .ok_or_else(|| DmftError::MissingCheckpoint("activations were not logged".into()))?;
    let n = log.input_gram.nrows();
    let grid = log.grid;
    let width = log.width as f64;
    let gram = |m: &DMatrix<f64>, name: String| {
        let mut k = m.tr_mul(m) / width;
        linalg::symmetrize(&mut k);
        Kernel::square(name, k, n, grid)
    };
    let mut phi = vec![Kernel::constant_in_time("phi0", &log.input_gram, grid)?];
    for (l, m) in acts.phi.iter().enumerate() {
        phi.push(gram(m, format!("phi{}", l + 1))?);
    }
    let mut g = Vec::with_capacity(log.depth + 1);
    for (l, m) in acts.g.iter().enumerate() {
        g.push(gram(m, format!("g{}", l + 1))?);
    }
    g.push(Kernel::constant_in_time(format!("g{}", log.depth + 1), &DMatrix::from_element(n, n, 1.0), grid)?);
    let l = log.depth;
    let ntk = if log.use_bias {
        ntk_assemble_with_bias(&phi[1..=l], &g[..l], &log.input_gram)?
    } else {
        ntk_assemble(&phi[1..=l], &g[..l], &log.input_gram)?
    };
    Ok(EmpiricalKernels { phi, g, ntk })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::kernel::{SampleSet, TimeGrid};
    use crate::reference::{train, Mlp, MlpConfig, TrainOptions};
    use nalgebra::DVector;

    fn data() -> SampleSet {
        let x = DMatrix::from_row_slice(3, 4, &[1.0, 0.5, -0.3, 0.2, -0.4, 1.1, 0.6, 0.0, 0.3, 0.3, 0.9, -1.2]);
        SampleSet::from_inputs(x, 2, DVector::from_vec(vec![1.0, -1.0])).unwrap()
    }

    #[test]
    fn first_step_follows_the_empirical_kernel() {
        let cfg = MlpConfig { width: 50, depth: 2, gamma0: 1.0, seed: 1, ..MlpConfig::default() };
        let gap = |dt: f64| {
            let mut net = Mlp::new(&cfg, 4).unwrap();
            let log = train(&mut net, &data(), TimeGrid::new(2, dt).unwrap(), TrainOptions::default()).unwrap();
            let k = measure_kernels(&log).unwrap().ntk.block(0, 0);
            let delta = DVector::from_fn(2, |mu, _| data().targets()[mu] - log.f.at(mu, 0));
            let predicted = k.columns(0, 2) * delta * dt;
            let actual = log.f.at_time(1) - log.f.at_time(0);
            (actual - predicted).abs().max()
        };
        let (a, b) = (gap(1e-2), gap(5e-3));
        assert!(a < 1e-3);
        assert!(a / b > 3.5 && a / b < 4.5, "{}", a / b);
    }

    #[test]
    fn empirical_kernels_are_gram_matrices() {
        let cfg = MlpConfig { width: 30, depth: 2, seed: 3, ..MlpConfig::default() };
        let mut net = Mlp::new(&cfg, 4).unwrap();
        let log = train(&mut net, &data(), TimeGrid::new(4, 0.2).unwrap(), TrainOptions::default()).unwrap();
        let k = measure_kernels(&log).unwrap();
        for l in 1..=2 {
            assert!(linalg::min_eigenvalue(&k.phi(l).values) > -1e-12);
            assert!(linalg::min_eigenvalue(&k.g(l).values) > -1e-12);
            assert_eq!(k.phi(l).symmetry_error(), 0.0);
        }
    }

    #[test]
    fn wide_linear_network_reproduces_the_input_kernel_at_initialization() {
        let width = 4000;
        let cfg = MlpConfig { width, depth: 1, activation: Activation::Linear, seed: 9, ..MlpConfig::default() };
        let mut net = Mlp::new(&cfg, 4).unwrap();
        let log = train(&mut net, &data(), TimeGrid::new(1, 0.1).unwrap(), TrainOptions::default()).unwrap();
        let phi = measure_kernels(&log).unwrap().phi(1).block(0, 0);
        let scale = data().input_gram().abs().max();
        assert!((phi - data().input_gram()).abs().max() < 5.0 * scale / (width as f64).sqrt());
    }

    #[test]
    fn unlogged_runs_cannot_be_measured() {
        let mut net = Mlp::new(&MlpConfig { width: 8, ..MlpConfig::default() }, 4).unwrap();
        let opts = TrainOptions { log_activations: false, steps_per_interval: 2 };
        let log = train(&mut net, &data(), TimeGrid::new(3, 0.1).unwrap(), opts).unwrap();
        assert_eq!(log.loss.len(), 5);
        assert_eq!(log.loss_curve().len(), 3);
        assert!(matches!(measure_kernels(&log), Err(DmftError::MissingCheckpoint(_))));
    }
}
