use relaxctl_core::grid::sup_norm_diff;
use relaxctl_core::hjb::{self, HjbOptions};
use relaxctl_core::kernel::build_kernel;
use relaxctl_core::mdp::Mdp;
use relaxctl_core::problem::builtin_problem;
use relaxctl_core::rates::{run_sweep, Abscissa, SweepConfig};
use relaxctl_core::sim::{rollout_continuous, RolloutConfig};
use relaxctl_core::{Serial, SolveParams};

#[test]
fn mdp_value_approaches_hjb_value() {
    let spec = builtin_problem("advective1d", &[]).unwrap();
    let grid = spec.grids(64, 9).unwrap();
    let v = hjb::solve_exploratory_hjb(&spec, 0.5, &grid, &HjbOptions::default()).unwrap();
    let mut errs = Vec::new();
    for h in [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0] {
        let params = SolveParams::new(&spec, h, 0.5, 64, 9).unwrap();
        let kernel = build_kernel(&spec, &params, &grid, &Serial).unwrap();
        let fp = Mdp::new(&spec, &params, &kernel).unwrap().solve_vh(&Serial).unwrap();
        errs.push(sup_norm_diff(&fp.value, &v.value).unwrap());
    }
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    // roughly first order
    assert!(errs[0] / errs[2] > 3.0, "{errs:?}");
}

#[test]
fn continuous_rollout_matches_policy_evaluation() {
    let spec = builtin_problem("lq1d", &[]).unwrap();
    let grid = spec.grids(128, 9).unwrap();
    let sol = hjb::solve_exploratory_hjb(&spec, 0.5, &grid, &HjbOptions::default()).unwrap();
    let cfg = RolloutConfig {
        paths: 20_000,
        rng_seed: 9,
        ..Default::default()
    };
    let est = rollout_continuous(&spec, 0.5, &sol.policy, [0.0, 0.0], &cfg, &Serial).unwrap();
    let exact = sol.value.interpolate([0.0, 0.0]);
    // Euler bias in time and space on top of the sampling error
    let slack = 4.0 * est.std_error + est.tail_bound + 0.02;
    assert!((est.mean - exact).abs() <= slack, "{} vs {exact}", est.mean);
}

#[test]
fn small_sweep_reports_every_cell() {
    let spec = builtin_problem("lq1d", &[]).unwrap();
    let cfg = SweepConfig {
        state_nodes: 64,
        control_nodes: 9,
        ..Default::default()
    };
    let hs = [0.25, 0.125, 0.0625, 0.03125];
    let rep = run_sweep(&spec, &hs, &[0.5, 0.25], &cfg, &Serial).unwrap();
    assert_eq!(rep.records.len(), 8);
    assert!(rep.missing.is_empty());
    assert!(rep.records.iter().all(|r| r.plugin_ok() && r.triangle_ok()));
    let fit = rep.fit("err_V_vs_Vh", Abscissa::H, 0.5).unwrap();
    assert!(fit.fit.slope > 0.7 && fit.fit.slope < 1.3, "{:?}", fit.fit);
}
