use nalgebra::DMatrix;
use proptest::prelude::*;

use ratelim::channel::ChannelConfig;
use ratelim::codec::{self, ControlLaw, QuantizerSpec};
use ratelim::limits;
use ratelim::mjls;
use ratelim::plant::{ParamStrategy, StrategyKind};
use ratelim::timeshare::{self, TimeShareConfig};
use ratelim::UncertainPlant;

fn plant_strategy() -> impl Strategy<Value = UncertainPlant> {
    (1usize..=3)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(-1.5f64..1.5, n - 1),
                prop::collection::vec(0.0f64..0.2, n),
                1.2f64..4.0,
                any::<bool>(),
            )
        })
        .prop_map(|(mut a, eps, lead, neg)| {
            let e_n = *eps.last().unwrap();
            a.push(if neg { -(lead + e_n) } else { lead + e_n });
            UncertainPlant::new(a, eps, 1.0).unwrap()
        })
}

// Starts on cell boundaries and range edges are the numerically tight cases.
fn y0_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1.0f64..=1.0,
        prop::sample::select(vec![0.0, 0.3, -0.3, 0.5, -0.5, 0.1, 1.0, -1.0, 0.25]),
    ]
}

fn kind_strategy() -> impl Strategy<Value = StrategyKind> {
    prop_oneof![
        Just(StrategyKind::Nominal),
        Just(StrategyKind::IidUniform),
        Just(StrategyKind::GreedyAdversarial),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn quantizer_cell_contains_input(
        levels in 1u64..2000,
        v in -0.5f64..=0.5,
        sigma in 1e-6f64..1e6,
        center in -1e3f64..1e3,
    ) {
        let s = codec::quantize(levels, v).unwrap();
        prop_assert!(s < levels);
        let cell = codec::decode_cell(levels, sigma, center, Some(s)).unwrap();
        let y = center + sigma * v;
        let tol = 1e-12 * (sigma + center.abs());
        prop_assert!(cell.contains_within(y, tol), "{y} not in {cell:?}");
        prop_assert!((cell.measure() - sigma / levels as f64).abs() <= tol);
    }

    #[test]
    fn fractional_cell_contains_input(
        level in 1.0f64..500.0,
        v in -0.5f64..=0.5,
        sigma in 1e-3f64..1e3,
    ) {
        let (_, cell) = codec::fractional_cell(level, sigma, 0.0, v).unwrap();
        let y = sigma * v;
        prop_assert!(cell.contains_within(y, 1e-12 * sigma));
        prop_assert!((cell.measure() - sigma / level).abs() <= 1e-12 * sigma);
        prop_assert!(cell.lo() >= -sigma / 2.0 - 1e-12 * sigma);
        prop_assert!(cell.hi() <= sigma / 2.0 + 1e-12 * sigma);
    }

    #[test]
    fn eta_matches_cell_enumeration(
        a in 1.05f64..5.0,
        eps in 0.0f64..0.5,
        levels in 1u64..200,
        gamma in 0u8..=1,
        sigma in 1e-3f64..1e3,
    ) {
        let a = a + eps;
        let enumerated = limits::max_cell_expansion(a, eps, levels, gamma, sigma) / sigma;
        let closed = limits::eta(a, eps, levels as f64, gamma);
        prop_assert!((enumerated - closed).abs() <= 1e-12 * closed.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn closed_loop_output_stays_in_decoded_cell(
        plant in plant_strategy(),
        levels in 2u64..64,
        p in 0.0f64..0.4,
        kind in kind_strategy(),
        seed in any::<u64>(),
        centering in any::<bool>(),
        y0 in y0_strategy(),
    ) {
        let law = if centering { ControlLaw::Centering } else { ControlLaw::Nominal };
        let channel = ChannelConfig::new(p, seed).unwrap();
        let mut stream = channel.stream(0);
        let mut strat = ParamStrategy::with_stream(kind, seed, 0);
        let trace = codec::run_closed_loop(
            &plant,
            QuantizerSpec::new(levels).unwrap(),
            &mut stream,
            &mut strat,
            law,
            200,
            y0,
        ).unwrap();
        for st in &trace.steps {
            prop_assert!(st.sigma.is_finite() && st.sigma > 0.0);
            let tol = 1e-9 * st.sigma.max(st.y.abs());
            prop_assert!(st.cell.contains_within(st.y, tol), "step {}: {} not in {:?}", st.k, st.y, st.cell);
            if st.gamma == 0 {
                prop_assert!((st.cell.measure() - st.sigma).abs() <= tol);
            }
        }
    }

    #[test]
    fn time_shared_output_stays_in_cell(
        a in 1.05f64..4.0,
        eps in 0.0f64..0.05,
        m in 1u32..=3,
        total in 2u64..400,
        p in 0.0f64..0.3,
        kind in kind_strategy(),
        seed in any::<u64>(),
        y0 in y0_strategy(),
    ) {
        let cfg = TimeShareConfig::with_total_level(a + eps, eps, m, total, p).unwrap();
        let channel = ChannelConfig::new(p, seed).unwrap();
        let mut stream = channel.stream(0);
        let mut strat = ParamStrategy::with_stream(kind, seed, 0);
        let trace = timeshare::run_timeshare_loop(
            &cfg,
            1.0,
            ControlLaw::Nominal,
            &mut stream,
            &mut strat,
            100,
            y0,
        ).unwrap();
        for st in &trace.steps {
            let tol = 1e-9 * st.sigma.max(st.y.abs());
            prop_assert!(st.cell.contains_within(st.y, tol), "cycle at {}: {} not in {:?}", st.k, st.y, st.cell);
        }
    }

    #[test]
    fn power_iteration_matches_eigenvalues(
        dim in 1usize..9,
        entries in prop::collection::vec(0.0f64..2.0, 64),
    ) {
        let m = DMatrix::from_fn(dim, dim, |i, j| entries[i * 8 + j]);
        let rho = mjls::spectral_radius(&m).unwrap();
        let oracle = m
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        prop_assert!((rho - oracle).abs() <= 1e-6 * oracle.max(1e-3), "{rho} vs {oracle}");
    }

    #[test]
    fn rho_monotone_in_levels_and_loss(
        plant in plant_strategy(),
        levels in 2u64..200,
        p in 0.0f64..0.5,
        dp in 0.0f64..0.3,
    ) {
        let r = mjls::rho_at(&plant, levels as f64, p).unwrap();
        let more_levels = mjls::rho_at(&plant, levels as f64 + 1.0, p).unwrap();
        let more_loss = mjls::rho_at(&plant, levels as f64, (p + dp).min(1.0)).unwrap();
        prop_assert!(more_levels <= r * (1.0 + 1e-9));
        prop_assert!(more_loss >= r * (1.0 - 1e-9));
    }

    #[test]
    fn necessary_rate_grows_with_loss(
        lambda in 1.05f64..5.0,
        eps in 0.0f64..0.5,
        p in 0.0f64..0.9,
        dp in 0.0f64..0.1,
    ) {
        let lambda = lambda + eps;
        let b0 = limits::necessary_bounds(lambda, eps, p).unwrap();
        let b1 = limits::necessary_bounds(lambda, eps, p + dp).unwrap();
        match (b0.r_nec, b1.r_nec) {
            (Some(r0), Some(r1)) => prop_assert!(r1 >= r0 - 1e-12),
            (None, Some(_)) => prop_assert!(false, "feasibility regained with more loss"),
            _ => {}
        }
        if let Some(r) = b0.r_nec {
            prop_assert!(r >= lambda.log2() - 1e-12);
        }
        prop_assert_eq!(b0.feasible, p < b0.p_nec);
    }
}
