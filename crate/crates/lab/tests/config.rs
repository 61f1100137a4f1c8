use proptest::prelude::*;
use relaxctl_lab::config::{parse_list, parse_number, RawConfig, RunConfig};

proptest! {
    #[test]
    fn shortest_decimals_parse_back(x in -1e6..1e6f64) {
        prop_assert_eq!(parse_number(&format!("{x:?}")).unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn halving_ranges_are_exact(a in -4i32..2, k in 0i32..10) {
        let text = format!("2^{}..2^{}", a, a - k);
        let v = parse_list(&text).unwrap();
        prop_assert_eq!(v.len() as i32, k + 1);
        for (i, x) in v.iter().enumerate() {
            prop_assert_eq!(*x, 2f64.powi(a - i as i32));
        }
    }

    #[test]
    fn resolved_configs_are_fixed_points(h in 1u32..9, nodes in 8usize..300, lambda in 0.01..4.0f64, seed in any::<u64>()) {
        let text = format!("h = 2^-{h}\nnodes = {nodes}\nlambda = {lambda:?}\nseed = {seed}\nproblem = advective1d\n");
        let cfg = RunConfig::from_raw(&RawConfig::parse(&text, "p").unwrap()).unwrap();
        let mut raw = RawConfig::default();
        for (k, v) in cfg.resolved() {
            raw.set(&k, &v).unwrap();
        }
        let back = RunConfig::from_raw(&raw).unwrap();
        prop_assert_eq!(back.resolved(), cfg.resolved());
        prop_assert_eq!(back.rollout.rng_seed, seed);
        prop_assert_eq!(back.lambda.to_bits(), lambda.to_bits());
    }
}
