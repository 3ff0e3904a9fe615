//! Shared fixtures for the criterion benches.

use lolo_dcv_core::{
    encode_design, expand_interactions, generate, Dataset, DcvConfig, DesignMatrix, Scenario,
    SynthConfig,
};

/// A fully expanded survey problem at the default 9x4x8 shape.
pub struct Fixture {
    pub dataset: Dataset,
    pub design: DesignMatrix,
}

pub fn survey_fixture(seed: u64) -> Fixture {
    let output = generate(&SynthConfig::new(seed)).expect("synthetic generator");
    let base = encode_design(&output.dataset, Scenario::Original).expect("design encoding");
    let design = expand_interactions(&base).expect("interaction expansion");
    Fixture {
        dataset: output.dataset,
        design,
    }
}

/// A grid configuration small enough to keep the benches responsive.
pub fn bench_config() -> DcvConfig {
    let mut config = DcvConfig::new(Scenario::Original);
    config.grid_count = 25;
    config.grid_min_ratio = Some(0.1);
    config.seed = 7;
    config
}
