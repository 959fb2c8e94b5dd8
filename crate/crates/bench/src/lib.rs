//! Fixtures shared by the pipeline benchmarks.

use qmiset::experiment::{identify, noisy_dataset, ExperimentConfig, Method};
use qmiset::{assemble_lft, EstimationDataset, UncertainLft};

/// Benchmark plant dataset at `tau0 = 0.9`, low enough noise that both
/// set constructions admit a robust estimator.
pub fn dataset() -> (ExperimentConfig, EstimationDataset) {
    let cfg = ExperimentConfig {
        tau0_grid: vec![0.9],
        trials: 1,
        noise_bound: 0.05,
        record_wall_time: false,
        ..Default::default()
    };
    let ds = noisy_dataset(&cfg, 0, 0).expect("benchmark dataset");
    (cfg, ds)
}

pub fn lft(method: Method) -> UncertainLft {
    let (cfg, ds) = dataset();
    let (ab, cd) = identify(&ds, method).expect("sets");
    assemble_lft(&ab, &cd, &cfg.plant.cp, &cfg.plant.dp).expect("lft")
}
