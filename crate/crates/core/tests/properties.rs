use dmft_core::approx::{gradient_independence_solve, static_kernels};
use dmft_core::data::{synthetic, SyntheticSpec};
use dmft_core::kernel::{alignment, integrate_predictions, ntk_assemble};
use dmft_core::linear::{linear_solve, resolvent_residual, two_layer_whitened, LinearConfig};
use dmft_core::reference::{measure_kernels, train, Mlp, MlpConfig, TrainOptions};
use dmft_core::saddle::{dmft_solve, DmftConfig};
use dmft_core::{Activation, Kernel, LossKind, SampleSet, TimeGrid};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn psd(p: usize, entries: &[f64]) -> DMatrix<f64> {
    let m = DMatrix::from_iterator(p, p, entries.iter().cloned());
    &m * m.transpose() / p as f64 + DMatrix::identity(p, p) * 0.1
}

fn psd_strategy(p: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, p * p).prop_map(move |v| psd(p, &v))
}

fn small_data(p: usize, seed: u64) -> SampleSet {
    synthetic(&SyntheticSpec { n_train: p, n_test: 0, dim: 6, seed, ..SyntheticSpec::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn static_kernels_are_reproducible_and_time_constant(kx in psd_strategy(3), depth in 1usize..4) {
        let first = static_kernels(Activation::Tanh, &kx, depth, 30).unwrap();
        let second = static_kernels(Activation::Tanh, &kx, depth, 30).unwrap();
        prop_assert_eq!(&first, &second);
        let grid = TimeGrid::new(4, 0.1).unwrap();
        let (phis, gs) = first.on_grid(grid).unwrap();
        for k in phis.iter().chain(gs.iter()) {
            for t in 0..4 {
                for s in 0..4 {
                    prop_assert_eq!(k.block(t, s), k.block(0, 0));
                }
            }
            prop_assert!(k.symmetry_error() < 1e-10);
        }
    }

    #[test]
    fn linear_static_kernels_are_the_input_gram(kx in psd_strategy(4), depth in 1usize..5) {
        let st = static_kernels(Activation::Linear, &kx, depth, 20).unwrap();
        for l in 0..=depth {
            prop_assert_eq!(st.phi(l), &kx);
        }
        for l in 1..=depth + 1 {
            prop_assert!(st.g(l).iter().all(|&v| v == 1.0));
        }
        let expected = &kx * (depth + 1) as f64;
        prop_assert!((&st.ntk0 - expected).abs().max() < 1e-12);
    }

    #[test]
    fn single_layer_ntk_is_additive_in_the_gradient_kernel(
        kx in psd_strategy(3),
        phi in psd_strategy(3),
        ga in psd_strategy(3),
        gb in psd_strategy(3),
    ) {
        let grid = TimeGrid::new(1, 0.1).unwrap();
        let k = |name: &str, m: &DMatrix<f64>| Kernel::constant_in_time(name, m, grid).unwrap();
        let ntk = |g: &DMatrix<f64>| ntk_assemble(&[k("phi1", &phi)], &[k("g1", g)], &kx).unwrap().values;
        let sum = ntk(&(&ga + &gb));
        let split = ntk(&ga) + ntk(&gb) - Kernel::constant_in_time("phi1", &phi, grid).unwrap().values;
        prop_assert!((&sum - &split).abs().max() < 1e-12);
        let direct = &phi + ga.component_mul(&kx);
        prop_assert!((ntk(&ga) - direct).abs().max() < 1e-12);
    }

    #[test]
    fn stable_euler_steps_shrink_the_error(k in psd_strategy(4), y in prop::collection::vec(-2.0..2.0f64, 4), frac in 0.05..0.95f64) {
        let lmax = k.symmetric_eigenvalues().max();
        let dt = 2.0 * frac / lmax;
        let grid = TimeGrid::new(30, dt).unwrap();
        let targets = DVector::from_vec(y);
        let (_, delta) = integrate_predictions(&vec![k.clone(); 30], &targets, LossKind::Mse, &grid).unwrap();
        let norms: Vec<f64> = (0..30).map(|t| delta.at_time(t).norm()).collect();
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{norms:?}");
        }
    }

    #[test]
    fn richer_two_layer_networks_learn_faster(g_lo in 0.0..2.0f64, bump in 0.05..1.0f64, y in 0.2..3.0f64) {
        let grid = TimeGrid::new(40, 0.05).unwrap();
        let slow = two_layer_whitened(g_lo, y, &grid);
        let fast = two_layer_whitened(g_lo + bump, y, &grid);
        for (a, b) in fast.delta.iter().zip(&slow.delta) {
            prop_assert!(*a <= *b + 1e-12);
        }
    }

    #[test]
    fn linear_solver_kernels_are_symmetric_with_exact_resolvents(seed in 0u64..1000, depth in 2usize..4, gamma0 in 0.1..1.2f64) {
        let data = small_data(3, seed);
        let cfg = LinearConfig { depth, gamma0, ..LinearConfig::default() };
        let st = linear_solve(&cfg, &data, TimeGrid::new(6, 0.1).unwrap()).unwrap();
        prop_assert!(st.converged);
        for l in 1..=depth {
            prop_assert!(st.h_kernel(l).symmetry_error() < 1e-10);
        }
        for l in 1..depth {
            let r = resolvent_residual(&st, l);
            prop_assert!(r < 1e-10, "layer {}: {:e}", l, r);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn monte_carlo_solver_output_is_symmetric_and_causal(seed in 0u64..1000, depth in 1usize..3, gamma0 in 0.2..1.5f64) {
        let data = small_data(3, seed);
        let cfg = DmftConfig { depth, gamma0, n_mc: 100, max_iters: 5, tol: 1e-3, seed, ..DmftConfig::default() };
        let st = dmft_solve(&cfg, &data, TimeGrid::new(5, 0.1).unwrap()).unwrap();
        for l in 1..=depth {
            prop_assert!(st.phi(l).symmetry_error() < 1e-10);
            prop_assert!(st.g(l).symmetry_error() < 1e-10);
            prop_assert_eq!(st.a(l).causality_violation(true), 0.0);
            prop_assert_eq!(st.b(l).causality_violation(false), 0.0);
        }
    }
}

#[test]
fn gradient_independence_is_exact_for_one_hidden_layer() {
    let data = small_data(4, 3);
    let grid = TimeGrid::new(8, 0.1).unwrap();
    for gamma0 in [0.5, 1.5] {
        let cfg = DmftConfig { depth: 1, gamma0, n_mc: 400, max_iters: 40, tol: 1e-6, seed: 7, ..DmftConfig::default() };
        let full = dmft_solve(&cfg, &data, grid).unwrap();
        let gi = gradient_independence_solve(&cfg, &data, grid).unwrap();
        for (a, b) in [(full.phi(1), gi.phi(1)), (full.g(1), gi.g(1))] {
            let al = alignment(a, b).unwrap();
            assert!((1.0 - al).abs() < 5.0 / 400f64.sqrt(), "gamma0 {gamma0}: alignment {al}");
            assert!(a.relative_distance(b).unwrap() < 5.0 / 400f64.sqrt());
        }
    }
}

#[test]
fn network_tangent_kernel_at_initialization_matches_the_lazy_limit() {
    let data = small_data(5, 8);
    let x = data.inputs().unwrap().clone();
    let lazy = static_kernels(Activation::Tanh, data.input_gram(), 2, 60).unwrap();
    let width = 1000;
    let seeds = 6;
    let mut mean = DMatrix::zeros(5, 5);
    for seed in 0..seeds {
        let cfg = MlpConfig { width, depth: 2, gamma0: 1.0, activation: Activation::Tanh, seed, ..MlpConfig::default() };
        let mut net = Mlp::new(&cfg, x.ncols()).unwrap();
        let log = train(&mut net, &data, TimeGrid::new(1, 0.1).unwrap(), TrainOptions::default()).unwrap();
        mean += measure_kernels(&log).unwrap().ntk.equal_time(0);
    }
    mean /= seeds as f64;
    let err = (&mean - &lazy.ntk0).norm();
    assert!(err < 5.0 / (width as f64).sqrt() * lazy.ntk0.norm(), "error {err}");
}
