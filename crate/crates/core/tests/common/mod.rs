#![allow(dead_code)]

use std::path::PathBuf;

use platoon_game::io::{parse_scenario, ScenarioFile};
use platoon_game::Scenario;

pub const BUNDLED_SCENARIOS: [&str; 6] = ["pf_s1", "pf_s2", "tpf_s3", "tpf_s4", "apf", "lf"];

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.cfg"))
}

pub fn load_file(name: &str) -> ScenarioFile {
    parse_scenario(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn load(name: &str) -> Scenario {
    load_file(name).scenario
}

/// Largest absolute entry-wise difference.
pub fn max_gap<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
