//! Baselines: lazy static kernels, the gradient-independence ansatz, and
//! leading-order perturbation theory for deep linear networks.

mod grad_indep;
mod perturbative;
mod quadrature;
mod static_kernels;

pub use grad_indep::gradient_independence_solve;
pub use perturbative::{
    layer_weights, perturbative_linear_ntk, LazyErrorScheme, PerturbationFunctions, PerturbativeNtk,
    PERTURBATIVE_SCHEME,
};
pub use quadrature::{GaussHermite, DETERMINISTIC_VARIANCE};
pub use static_kernels::{static_kernels, static_kernels_with_bias, StaticKernels, DEFAULT_QUADRATURE_NODES};
