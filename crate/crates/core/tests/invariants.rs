use std::sync::OnceLock;

use approx::assert_relative_eq;
use proptest::prelude::*;

use relaxctl_core::grid::{kl_divergence, sup_norm_diff, EntropyMode};
use relaxctl_core::kernel::build_kernel;
use relaxctl_core::mdp::Mdp;
use relaxctl_core::problem::builtin_problem;
use relaxctl_core::rates::fit_loglog;
use relaxctl_core::{grid, PolicyField, ProblemSpec, ScalarField, Serial, SolveParams, TransitionKernel};

const N: usize = 32;
const M: usize = 9;

struct Fixture {
    spec: ProblemSpec,
    params: SolveParams,
    kernel: TransitionKernel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let spec = builtin_problem("advective1d", &[]).unwrap();
        let params = SolveParams::new(&spec, 1.0 / 16.0, 0.5, N, M).unwrap();
        let grid = spec.grids(N, M).unwrap();
        let kernel = build_kernel(&spec, &params, &grid, &Serial).unwrap();
        Fixture { spec, params, kernel }
    })
}

fn field(values: Vec<f64>) -> ScalarField {
    ScalarField::new(fixture().kernel.grid().state, values).unwrap()
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, N)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soft_bellman_is_a_gamma_contraction(a in values(), b in values()) {
        let f = fixture();
        let mdp = Mdp::new(&f.spec, &f.params, &f.kernel).unwrap();
        let (w1, w2) = (field(a), field(b));
        let t1 = mdp.soft_bellman(&w1, &Serial).unwrap();
        let t2 = mdp.soft_bellman(&w2, &Serial).unwrap();
        let gamma = f.params.discount_gamma();
        prop_assert!(sup_norm_diff(&t1, &t2).unwrap() <= gamma * sup_norm_diff(&w1, &w2).unwrap() + 1e-12);
    }

    #[test]
    fn soft_bellman_is_monotone_and_shift_equivariant(a in values(), bump in prop::collection::vec(0.0..3.0f64, N), c in -5.0..5.0f64) {
        let f = fixture();
        let mdp = Mdp::new(&f.spec, &f.params, &f.kernel).unwrap();
        let lo = field(a.clone());
        let hi = field(a.iter().zip(&bump).map(|(x, d)| x + d).collect());
        let tl = mdp.soft_bellman(&lo, &Serial).unwrap();
        let th = mdp.soft_bellman(&hi, &Serial).unwrap();
        prop_assert!(tl.values().iter().zip(th.values()).all(|(x, y)| x <= y));

        let shifted = mdp.soft_bellman(&lo.map(|x| x + c).unwrap(), &Serial).unwrap();
        let gamma = f.params.discount_gamma();
        for (s, t) in shifted.values().iter().zip(tl.values()) {
            prop_assert!((s - t - gamma * c).abs() <= 1e-11);
        }
    }

    #[test]
    fn gibbs_policy_is_a_density_and_maximizes(a in values(), raw in prop::collection::vec(0.01..5.0f64, N * M)) {
        let f = fixture();
        let mdp = Mdp::new(&f.spec, &f.params, &f.kernel).unwrap();
        let g = f.kernel.grid();
        let w = field(a);
        let gibbs = mdp.gibbs_policy(&w, &Serial).unwrap();
        let weights = g.control.weights();
        for i in 0..N {
            let row = gibbs.policy.row(i);
            prop_assert!(row.iter().all(|&p| p > 0.0));
            let mass: f64 = row.iter().zip(&weights).map(|(p, w)| p * w).sum();
            prop_assert!((mass - 1.0).abs() <= 1e-12);
        }
        let pi = PolicyField::from_unnormalized(g.state, g.control, raw).unwrap();
        let kl = kl_divergence(&pi, &gibbs.policy).unwrap();
        prop_assert!(kl.values().iter().all(|&k| k >= -1e-12));
        let t = mdp.soft_bellman(&w, &Serial).unwrap();
        let tp = mdp.policy_bellman(&pi, &w, &Serial).unwrap();
        prop_assert!(t.values().iter().zip(tp.values()).all(|(a, b)| a + 1e-12 >= *b));
    }

    #[test]
    fn normalized_policies_have_bounded_entropy(raw in prop::collection::vec(0.0..5.0f64, 8 * 5)) {
        prop_assume!(raw.chunks(5).all(|r| r.iter().sum::<f64>() > 1e-3));
        let spec = builtin_problem("lq1d", &[]).unwrap();
        let g = spec.grids(8, 5).unwrap();
        let pi = PolicyField::from_unnormalized(g.state, g.control, raw).unwrap();
        // differential entropy on U = [-1, 1] never exceeds ln |U|
        let h = grid::entropy(&pi, EntropyMode::Safe).unwrap();
        prop_assert!(h.values().iter().all(|&x| x <= 2f64.ln() + 1e-12));
    }

    #[test]
    fn kernels_are_stochastic(nodes in 8usize..40, k in 2u32..6, controls in 2usize..6) {
        let spec = builtin_problem("lq1d", &[]).unwrap();
        let h = 0.5f64.powi(k as i32);
        let params = SolveParams::new(&spec, h, 0.5, nodes, controls).unwrap();
        let grid = spec.grids(nodes, controls).unwrap();
        let kernel = build_kernel(&spec, &params, &grid, &Serial).unwrap();
        let (defect, most_negative) = kernel.stochasticity_defect();
        prop_assert!(defect <= 1e-12, "row-sum defect {}", defect);
        prop_assert!(most_negative >= 0.0);
    }

    #[test]
    fn loglog_fit_recovers_power_laws(p in 0.2..3.0f64, c in 0.01..100.0f64) {
        let xs: Vec<f64> = (1..=6).map(|k| 0.5f64.powi(k)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| c * x.powf(p)).collect();
        let fit = fit_loglog(&xs, &ys).unwrap();
        assert_relative_eq!(fit.slope, p, epsilon = 1e-10);
        assert_relative_eq!(fit.intercept, c.ln(), epsilon = 1e-9);
        prop_assert!(fit.r_squared > 1.0 - 1e-12);
    }
}

#[test]
fn value_iteration_meets_its_bound() {
    let f = fixture();
    let mdp = Mdp::new(&f.spec, &f.params, &f.kernel).unwrap();
    let fp = mdp.solve_vh(&Serial).unwrap();
    let h = f.params.step_h();
    let bound = h * mdp.reward_sup() / (1.0 - f.params.discount_gamma()) + h * 0.5 * 2f64.ln() / (1.0 - f.params.discount_gamma());
    assert!(fp.value.sup_norm() <= bound);
    let again = mdp.soft_bellman(&fp.value, &Serial).unwrap();
    assert!(sup_norm_diff(&again, &fp.value).unwrap() <= f.params.fixed_point_tol);
}
