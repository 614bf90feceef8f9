#![allow(dead_code)]

use bvmlab_harness::ExperimentConfig;

pub fn binary_tv(ns: &[usize]) -> ExperimentConfig {
    let cells: Vec<String> = ns.iter().map(|n| format!(r#"{{"d": 1, "n": {n}}}"#)).collect();
    ExperimentConfig::from_json(&format!(
        r#"{{"experiment": "binary-tv", "family": "multinomial", "sweep": [{}], "metrics": ["tv"], "seed": 11}}"#,
        cells.join(",")
    ))
    .unwrap()
}
