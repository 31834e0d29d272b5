//! Cross-module properties: serialization round trips, seeded determinism
//! and distributional invariants of the forecast path.

use macrotok::forecast::rolling_forecast_with;
use macrotok::io_config::{
    apply_standardization, fit_standardization, invert_standardization, Panel, PartitionSpec, Quarter,
    QuarterRange,
};
use macrotok::pipeline::{
    parse_token_panel_csv, read_synthetic_tokens, stats_from_text, stats_to_text, token_panel_csv,
    write_synthetic_tokens, Manifest,
};
use macrotok::simulator::{format_posterior_draws, parse_posterior_draws, simulate_trajectory, toy};
use macrotok::tokenizer::{encode, fit_tokenizer, Token, TokenPanel, TokenizerSpec};
use macrotok::transformer::{init_model_with_std, ModelConfig};
use proptest::prelude::*;

fn dated(start: Quarter, n: usize) -> Vec<Quarter> {
    (0..n as i64).map(|i| start.offset(i)).collect()
}

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("x{i}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quarter_text_and_arithmetic_agree(year in 1900i32..2100, q in 1u8..=4, step in -400i64..400) {
        let a = Quarter::new(year, q).unwrap();
        prop_assert_eq!(a.to_string().parse::<Quarter>().unwrap(), a);
        let b = a.offset(step);
        prop_assert_eq!(a.distance_to(b), step);
        prop_assert_eq!(Quarter::from_ordinal(b.ordinal()), b);
        let r = QuarterRange::new(a.min(b), a.max(b)).unwrap();
        prop_assert_eq!(r.len() as i64, step.abs() + 1);
        prop_assert_eq!(r.to_string().parse::<QuarterRange>().unwrap(), r);
    }

    #[test]
    fn standardization_inverts(
        k in 1usize..5,
        rows in 3usize..40,
        seed in any::<u64>(),
        scale in 1e-3f64..1e3,
        shift in -1e3f64..1e3,
    ) {
        let mut rng = macrotok::rng::from_seed(seed);
        use rand::Rng;
        let values: Vec<f64> = (0..rows * k).map(|_| shift + scale * rng.random_range(-1.0..1.0)).collect();
        let panel = Panel::new(None, values, names(k)).unwrap();
        let stats = fit_standardization(&panel).unwrap();
        let z = apply_standardization(&panel, &stats).unwrap();
        for j in 0..k {
            let col: Vec<f64> = z.column(j).collect();
            let mean = col.iter().sum::<f64>() / rows as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (rows - 1) as f64;
            prop_assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        }
        let back = invert_standardization(&z, &stats).unwrap();
        for (a, b) in back.values().iter().zip(panel.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0) * (1.0 + shift.abs() / scale));
        }
        prop_assert_eq!(stats_from_text(&stats_to_text(&stats)).unwrap(), stats);
    }

    #[test]
    fn token_files_round_trip(k in 1usize..6, rows in 0usize..30, n_panels in 0usize..5, seed in any::<u64>()) {
        let mut rng = macrotok::rng::from_seed(seed);
        use rand::Rng;
        let mut panel = |n: usize, times: Option<Vec<Quarter>>| {
            TokenPanel::new((0..n * k).map(|_| rng.random_range(0..1000) as Token).collect(), k, times).unwrap()
        };
        let start: Quarter = "1960Q1".parse().unwrap();
        let real = panel(rows.max(1), Some(dated(start, rows.max(1))));
        let csv = token_panel_csv(&real, &names(k)).unwrap();
        prop_assert_eq!(parse_token_panel_csv(&csv, &names(k)).unwrap(), real);

        let synthetic: Vec<TokenPanel> = (0..n_panels).map(|i| panel(rows + i, None)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("syn.bin");
        write_synthetic_tokens(&synthetic, k, &path).unwrap();
        prop_assert_eq!(read_synthetic_tokens(&path).unwrap(), synthetic);
    }

    #[test]
    fn manifest_round_trips(entries in prop::collection::vec(("[a-z][a-z0-9_.]{0,12}", "[ -~]{0,40}"), 0..12)) {
        let mut m = Manifest::new("test");
        for (k, v) in &entries {
            m.push(k.clone(), v.trim());
        }
        let parsed = Manifest::parse(&m.to_text()).unwrap();
        prop_assert_eq!(parsed.to_text(), m.to_text());
        prop_assert_eq!(parsed.entries(), m.entries());
    }

    #[test]
    fn posterior_draw_text_round_trips(count in 1usize..4, k in 1usize..5, seed in any::<u64>()) {
        let draws = toy::toy_draws(count, k, seed);
        let text = format_posterior_draws(&draws).unwrap();
        prop_assert_eq!(parse_posterior_draws(&text).unwrap(), draws);
    }

    #[test]
    fn simulation_is_a_function_of_the_seed(k in 1usize..4, seed in any::<u64>()) {
        let draw = toy::toy_draws(1, k, seed).remove(0);
        let a = simulate_trajectory(&draw, 30, 10, seed, &names(k)).unwrap();
        prop_assert_eq!(&simulate_trajectory(&draw, 30, 10, seed, &names(k)).unwrap(), &a);
        prop_assert_ne!(simulate_trajectory(&draw, 30, 10, seed ^ 1, &names(k)).unwrap(), a);
    }

    #[test]
    fn tokenizer_text_round_trips_and_encodes_identically(k in 1usize..4, j in 2usize..12, seed in any::<u64>()) {
        let mut rng = macrotok::rng::from_seed(seed);
        use rand::Rng;
        let values: Vec<f64> = (0..200 * k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let panel = Panel::new(None, values, names(k)).unwrap();
        let spec = fit_tokenizer(&[&panel], j).unwrap();
        let back = TokenizerSpec::from_text(&spec.to_text()).unwrap();
        prop_assert_eq!(&back, &spec);
        prop_assert_eq!(encode(&panel, &back).unwrap(), encode(&panel, &spec).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Any model, any panel: every forecast row is a distribution whose
    /// realized log probability matches its own probability vector.
    #[test]
    fn forecast_rows_are_distributions(seed in any::<u64>(), std in 0.02f64..2.0, target in 0usize..3) {
        let k = 3;
        let start = Quarter::new(1947, 3).unwrap();
        let draw = toy::toy_draws(1, k, seed).remove(0);
        let sim = simulate_trajectory(&draw, 312, 50, seed, &names(k)).unwrap();
        let panel = Panel::new(Some(dated(start, 312)), sim.values().to_vec(), names(k)).unwrap();
        let partition = PartitionSpec::default();
        let training = panel.slice_rows(50, 281);
        let stats = fit_standardization(&training).unwrap();
        let spec = fit_tokenizer(&[&apply_standardization(&training, &stats).unwrap()], 10).unwrap();
        let cfg = ModelConfig { n_vars: k, n_bins: 10, var_dim: 4, n_layers: 1, n_heads: 2, context_len: 4, target_var: target, mlp_factor: 2 };
        let model = init_model_with_std(&cfg, seed, std).unwrap();
        let table = rolling_forecast_with(&model, &spec, &stats, &panel, &partition).unwrap();
        prop_assert_eq!(table.rows.len(), 31);
        for r in &table.rows {
            let sum: f64 = r.probs.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(r.log_prob <= 0.0);
            prop_assert!((r.log_prob.exp() - r.probs[r.realized_token]).abs() <= 1e-12);
            prop_assert!(r.interval.0 <= r.interval.1);
        }
    }
}
