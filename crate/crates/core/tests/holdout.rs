//! Generalization of convolution coefficients to a configuration that was
//! never profiled.

use flame_core::devicesim::{generate_ground_truth, DeviceConfig, DeviceSimulator};
use flame_core::layerfit::{EstimatorStore, RegressorKind};
use flame_core::profiler::{run_campaign, SamplingPlan};
use flame_core::workloads::reference_grid;
use flame_core::LayerConfig;

fn holdout_mape(seed: u64, kind: RegressorKind) -> f64 {
    let device = DeviceConfig::generate(seed, reference_grid(), 0.03);
    let train = [
        LayerConfig::conv(28, 28, 64, 64, 3, 1),
        LayerConfig::conv(28, 28, 64, 128, 3, 1),
        LayerConfig::conv(28, 28, 128, 128, 3, 1),
        LayerConfig::conv(28, 28, 128, 256, 3, 1),
    ];
    let unseen = LayerConfig::conv(28, 28, 96, 192, 3, 1);
    let mut sim = DeviceSimulator::new(device.clone(), seed);
    let ds = run_campaign(&mut sim, &train, &device.grid, &SamplingPlan::sparse(10)).unwrap();
    let store = EstimatorStore::build(&ds, kind).unwrap();
    let truth = generate_ground_truth(&unseen, &device);
    let mut sum = 0.0;
    let mut n = 0.0;
    for (c, g) in device.grid.pairs() {
        let est = store.estimate_layer(&unseen, c, g).unwrap().total_ms;
        let t = truth.total_ms(c, g);
        sum += ((est - t) / t).abs();
        n += 1.0;
    }
    sum / n * 100.0
}

#[test]
fn unseen_conv_is_estimated_within_ten_percent() {
    for seed in [1, 2, 3, 42] {
        let m = holdout_mape(seed, RegressorKind::Ridge);
        assert!(m <= 10.0, "seed {seed}: holdout MAPE {m:.2}%");
    }
}

#[test]
fn boosted_trees_fit_and_estimate() {
    let m = holdout_mape(7, RegressorKind::Trees);
    assert!(m.is_finite(), "holdout MAPE {m}");
}
