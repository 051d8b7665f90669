mod common;

use flame_core::devicesim::{DeviceConfig, DeviceSimulator, PowerModel};
use flame_core::governor::{greedy_search, oracle_search};
use flame_core::modelest::{
    adapt_update, calibrated_estimate, naive_sum, reconstruct_timeline, AdaptationState,
    LayerTiming,
};
use flame_core::workloads::reference_grid;
use flame_core::{Frequency, FrequencyGrid, LayerConfig, ModelSpec};
use proptest::prelude::*;

fn timing() -> impl Strategy<Value = LayerTiming> {
    (0.0..5.0f64, 0.0..5.0f64, -4.0..4.0f64).prop_map(|(c, g, d)| LayerTiming::new(c, g, d))
}

fn timings() -> impl Strategy<Value = Vec<LayerTiming>> {
    prop::collection::vec(timing(), 1..64)
}

/// Layers whose gap never undercuts either processor's own time.
fn bounded_gap_timings() -> impl Strategy<Value = Vec<LayerTiming>> {
    prop::collection::vec(
        (
            0.0..5.0f64,
            0.0..5.0f64,
            0.0..1.0f64,
            0.0..4.0f64,
            any::<bool>(),
        )
            .prop_map(|(c, g, u, up, positive)| {
                let d = if positive { up } else { -u * c.min(g) };
                LayerTiming::new(c, g, d)
            }),
        1..64,
    )
}

fn layer() -> impl Strategy<Value = LayerConfig> {
    prop_oneof![
        (
            prop::sample::select(vec![7u64, 14, 28, 56]),
            1..512u64,
            1..512u64,
            prop::sample::select(vec![1u64, 3, 5])
        )
            .prop_map(|(h, cin, cout, k)| LayerConfig::conv(h, h, cin, cout, k, 1)),
        (1..4096u64, 1..4096u64).prop_map(|(i, o)| LayerConfig::linear(i, o)),
        (prop::sample::select(vec![128u64, 256, 512]), 1..1025u64)
            .prop_map(|(e, n)| LayerConfig::transformer(e, 4, n)),
    ]
}

fn small_grid() -> FrequencyGrid {
    FrequencyGrid::linear(8, (0.2, 2.0), 5, (0.3, 1.3)).unwrap()
}

fn power() -> PowerModel {
    PowerModel {
        p_static_w: 5.0,
        a_c_w_per_ghz3: 0.2,
        a_g_w_per_ghz3: 6.0,
    }
}

/// Latency strictly decreasing in both frequencies.
fn monotone_latency(a: f64, b: f64, c: f64) -> impl Fn(Frequency, Frequency) -> f64 {
    move |f_c, f_g| a / f_c.ghz() + b / f_g.ghz() + c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn timeline_matches_event_simulation(layers in timings()) {
        let tl = reconstruct_timeline(&layers).unwrap();
        let (gpu, total) = common::event_oracle(&layers);
        prop_assert!((tl.total - total).abs() <= 1e-9);
        for (span, (s, e)) in tl.layers.iter().zip(&gpu) {
            prop_assert!((span.gpu_start - s).abs() <= 1e-9);
            prop_assert!((span.gpu_end - e).abs() <= 1e-9);
        }
    }

    #[test]
    fn timeline_respects_dependencies(layers in timings()) {
        let tl = reconstruct_timeline(&layers).unwrap();
        prop_assert_eq!(tl.layers[0].cpu_start, 0.0);
        for (i, (span, l)) in tl.layers.iter().zip(&layers).enumerate() {
            prop_assert!(span.gpu_start >= span.cpu_end + l.delta_ms - 1e-12);
            if i > 0 {
                let prev = &tl.layers[i - 1];
                prop_assert_eq!(span.cpu_start, prev.cpu_end);
                prop_assert!(span.gpu_start >= prev.gpu_end);
            }
        }
        prop_assert_eq!(tl.total, tl.layers.last().unwrap().gpu_end);
    }

    #[test]
    fn slower_layer_never_shortens_the_model(
        layers in timings(),
        pick in any::<prop::sample::Index>(),
        extra in 0.0..3.0f64,
        on_gpu in any::<bool>(),
    ) {
        let base = reconstruct_timeline(&layers).unwrap().total;
        let mut slower = layers.clone();
        let l = &mut slower[pick.index(layers.len())];
        if on_gpu { l.gpu_ms += extra } else { l.cpu_ms += extra }
        prop_assert!(reconstruct_timeline(&slower).unwrap().total >= base - 1e-12);
    }

    #[test]
    fn naive_sum_bounds_the_overlapped_total(layers in bounded_gap_timings()) {
        let tl = reconstruct_timeline(&layers).unwrap();
        prop_assert!(naive_sum(&layers) >= tl.total - 1e-9);
    }

    #[test]
    fn greedy_stays_within_budget_and_deadline(
        a in 0.1..10.0f64, b in 0.1..10.0f64, c in 0.0..2.0f64, t_d in 0.5..80.0f64,
    ) {
        let grid = small_grid();
        let lat = monotone_latency(a, b, c);
        let d = greedy_search(&lat, &grid, &power(), t_d);
        prop_assert!(d.estimator_calls <= grid.cpu_levels().len() + grid.gpu_levels().len());
        if d.feasible {
            prop_assert!(d.predicted_latency <= t_d);
        } else {
            prop_assert!(lat(grid.cpu_max(), grid.gpu_max()) > t_d);
        }
    }

    #[test]
    fn tighter_deadline_never_lowers_power(
        a in 0.1..10.0f64, b in 0.1..10.0f64, c in 0.0..2.0f64,
        t_d in 0.5..80.0f64, shrink in 0.1..1.0f64,
    ) {
        let grid = small_grid();
        let lat = monotone_latency(a, b, c);
        let loose = oracle_search(&lat, &grid, &power(), t_d);
        let tight = oracle_search(&lat, &grid, &power(), t_d * shrink);
        if tight.feasible {
            prop_assert!(loose.feasible);
            prop_assert!(tight.predicted_power >= loose.predicted_power);
        }
        let loose = greedy_search(&lat, &grid, &power(), t_d);
        let tight = greedy_search(&lat, &grid, &power(), t_d * shrink);
        if tight.feasible {
            prop_assert!(tight.f_g >= loose.f_g);
        }
    }

    #[test]
    fn oracle_never_beaten_by_greedy(
        a in 0.1..10.0f64, b in 0.1..10.0f64, c in 0.0..2.0f64, t_d in 0.5..80.0f64,
    ) {
        let grid = small_grid();
        let lat = monotone_latency(a, b, c);
        let g = greedy_search(&lat, &grid, &power(), t_d);
        let o = oracle_search(&lat, &grid, &power(), t_d);
        prop_assert_eq!(g.feasible, o.feasible);
        if o.feasible {
            prop_assert!(o.predicted_power <= g.predicted_power);
        }
    }

    #[test]
    fn calibration_is_nonnegative_and_bounded(
        errs in prop::collection::vec(-5.0..5.0f64, 10),
        raw in 0.0..20.0f64,
    ) {
        let state = AdaptationState::default();
        let batch: Vec<(f64, f64)> = errs.iter().map(|e| (10.0, 10.0 + e)).collect();
        let next = adapt_update(&state, &batch).unwrap();
        let lo = errs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = errs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(next.delta_t >= lo * state.alpha - 1e-12 && next.delta_t <= hi * state.alpha + 1e-12);
        let cal = calibrated_estimate(&next, raw);
        prop_assert!(cal.value >= 0.0);
        prop_assert_eq!(cal.clamped, raw + next.delta_t < 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn simulated_traces_are_well_formed(
        seed in any::<u64>(),
        layers in prop::collection::vec(layer(), 1..12),
        ci in any::<prop::sample::Index>(),
        gi in any::<prop::sample::Index>(),
        load in prop::option::of(0.0..1.0f64),
    ) {
        let grid = reference_grid();
        let device = DeviceConfig::generate(seed, grid.clone(), 0.03);
        let mut sim = DeviceSimulator::new(device.clone(), seed);
        let spec = ModelSpec { name: "p".into(), layers };
        let f_c = grid.cpu_levels()[ci.index(grid.cpu_levels().len())];
        let f_g = grid.gpu_levels()[gi.index(grid.gpu_levels().len())];
        let trace = sim.run_model(&spec, f_c, f_g, load).unwrap();
        prop_assert_eq!(trace.layers.len(), spec.layers.len());
        prop_assert_eq!(trace.layers[0].cpu_start, 0.0);
        for (i, s) in trace.layers.iter().enumerate() {
            prop_assert!(s.cpu_end >= s.cpu_start);
            prop_assert!(s.gpu_end >= s.gpu_start);
            if i > 0 {
                prop_assert_eq!(s.cpu_start, trace.layers[i - 1].cpu_end);
                prop_assert!(s.gpu_start >= trace.layers[i - 1].gpu_end);
            }
        }
        prop_assert_eq!(trace.total_latency, trace.layers.last().unwrap().gpu_end);
        prop_assert!(trace.total_latency.is_finite() && trace.total_latency > 0.0);
        prop_assert!(trace.avg_power > device.power.p_static_w);
    }
}
