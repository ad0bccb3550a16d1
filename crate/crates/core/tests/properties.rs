use lorvar::cli::{parse_config, RunConfig};
use lorvar::experiments::{ObservableSpec, Verdict};
use lorvar::onedmap::{build_ulam, invariant_density, IntervalMap, MapFamily, Partition, POWER_MAX_ITER, POWER_TOL};
use lorvar::output::fmt_f64;
use lorvar::skewmap::SkewProduct;
use lorvar::stats::AutocovTable;
use lorvar::suspension::{GeometricModel, InducedObservable, RoofFunction};
use proptest::prelude::*;

fn verdict() -> impl Strategy<Value = Verdict> {
    prop_oneof![Just(Verdict::Pass), Just(Verdict::Inconclusive), Just(Verdict::Fail)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ulam_is_stochastic_with_normalised_density(gamma in 0.56f64..0.98, n in 16usize..600) {
        let t = MapFamily::geometric(gamma, 0.0).unwrap();
        let op = build_ulam(&t, Partition::of_map(&t, n).unwrap()).unwrap();
        for i in 0..op.n() {
            prop_assert!((op.row_sum(i) - 1.0).abs() <= 1e-12);
        }
        let h = invariant_density(&op, POWER_TOL, POWER_MAX_ITER).unwrap();
        prop_assert!(h.weights.iter().all(|w| *w >= 0.0));
        prop_assert!((h.integral() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn lorenz_map_is_increasing_with_opposite_limits(gamma in 0.56f64..0.98, a in 1e-9f64..0.5, b in 1e-9f64..0.5) {
        let t = MapFamily::geometric(gamma, 0.0).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        for side in [-1.0, 1.0] {
            let (u, v) = (side * lo, side * hi);
            let (fu, fv) = (t.eval(u).unwrap(), t.eval(v).unwrap());
            prop_assert!(fu.abs() <= 0.5 && fv.abs() <= 0.5);
            prop_assert!((fu <= fv) == (u <= v) || lo == hi);
        }
        // T(0⁺) = −1/2 and T(0⁻) = 1/2.
        prop_assert!(t.eval(1e-300).unwrap() < 0.0 && t.eval(-1e-300).unwrap() > 0.0);
        prop_assert!(t.min_slope() > 1.0);
    }

    #[test]
    fn branch_inverse_round_trips(gamma in 0.56f64..0.98, x in -0.5f64..0.5) {
        prop_assume!(x != 0.0);
        let t = MapFamily::geometric(gamma, 0.0).unwrap();
        let k = t.branch_of(x);
        let back = t.invert_branch(k, t.eval_branch(k, x));
        prop_assert!((back - x).abs() <= 1e-12, "{back} vs {x}");
    }

    #[test]
    fn skew_product_commutes_with_the_mirror(eps in 0.0f64..0.04, x in -0.5f64..0.5, y in -0.5f64..0.5) {
        prop_assume!(x != 0.0);
        let f = SkewProduct::geometric(eps).unwrap();
        let (a, b) = f.step(x, y).unwrap();
        let (c, d) = f.step(-x, -y).unwrap();
        prop_assert_eq!((a, b), (-c, -d));
        prop_assert!(b.abs() <= 0.5);
    }

    #[test]
    fn roof_is_positive_and_log_singular(eps in 0.0f64..0.04, x in 1e-12f64..0.5, y in -0.5f64..0.5) {
        let s = GeometricModel::default().suspension(eps).unwrap();
        let tau = s.roof.eval((x, y)).unwrap();
        prop_assert!(tau > 0.0);
        let expected = -x.ln() / s.flow.lambda1 + s.roof.tau2();
        prop_assert!((tau - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        prop_assert_eq!(s.roof.eval((-x, y)).unwrap(), tau);
    }

    #[test]
    fn tail_bound_covers_the_tail_strip(n in 1.5f64..12.0) {
        let s = GeometricModel::default().suspension(0.0).unwrap();
        // τ > N exactly on |x| < e^{−λ₁(N − τ₂)}, a strip of that width on each side.
        let half = (-(s.flow.lambda1) * (n - s.roof.tau2())).exp();
        prop_assert!(2.0 * half <= s.roof.tail_measure_bound(n) * (1.0 + 1e-12));
    }

    #[test]
    fn induced_observable_ignores_constants(c in -5.0f64..5.0, x in -0.5f64..0.5, y in -0.5f64..0.5) {
        prop_assume!(x.abs() > 1e-6);
        let s = GeometricModel::default().suspension(0.0).unwrap();
        let obs = InducedObservable::coordinate_x();
        let a = s.induce(&obs, (x, y)).unwrap();
        let b = s.induce(&obs.shifted(c), (x, y)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn constant_roof_return_is_exact(c in 0.1f64..4.0, x in -0.5f64..0.5, y in -0.5f64..0.5) {
        prop_assume!(x != 0.0);
        let s = GeometricModel::default().suspension(0.0).unwrap().with_roof(RoofFunction::constant(c).unwrap());
        prop_assert_eq!(s.roof.eval((x, y)).unwrap(), c);
    }

    #[test]
    fn green_kubo_is_quadratic_and_shift_invariant(
        values in proptest::collection::vec(-1.0f64..1.0, 400..800), a in 0.25f64..4.0, shift in -10.0f64..10.0,
    ) {
        let base = AutocovTable::new(&values, 10, 20).green_kubo(10).0;
        let scaled: Vec<f64> = values.iter().map(|v| a * v + shift).collect();
        let other = AutocovTable::new(&scaled, 10, 20).green_kubo(10).0;
        prop_assert!((other - a * a * base).abs() <= 1e-9 * (1.0 + a * a * base.abs()), "{other} vs {}", a * a * base);
    }

    #[test]
    fn floats_round_trip_through_output(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn verdict_combination_is_worst_wins(vs in proptest::collection::vec(verdict(), 1..8)) {
        let combined = Verdict::combine(vs.iter().copied());
        let worst = if vs.contains(&Verdict::Fail) {
            Verdict::Fail
        } else if vs.contains(&Verdict::Inconclusive) {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        };
        prop_assert_eq!(combined, worst);
    }

    #[test]
    fn config_echo_round_trips(
        seed in any::<u64>(),
        gamma in 0.56f64..0.9,
        rho in 0.05f64..0.5,
        samples in 10_000usize..5_000_000,
        delta in 0.001f64..1.0,
        tau2 in 0.1f64..3.0,
    ) {
        let doc = format!(
            "run.seed = {seed}\nonedmap.gamma = {gamma}\nskewmap.rho = {rho}\nskewmap.offset = {}\nskewmap.samples = {samples}\n\
             skewmap.observable = x+{delta}cos(z)\nsuspension.tau2 = {tau2}\n",
            (0.5 - rho / 2.0) * 0.9
        );
        let cfg = parse_config(&doc).unwrap();
        prop_assert_eq!(cfg.seed, seed);
        prop_assert_eq!(cfg.observable, ObservableSpec::XPlusCosZ(delta));
        let again: RunConfig = parse_config(&cfg.echo()).unwrap();
        prop_assert_eq!(again, cfg);
    }
}
