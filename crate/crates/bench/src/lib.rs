//! Shared inputs for the benchmarks.

use hotspot_core::dataset::{CityData, Dataset};
use hotspot_core::model::{ArchConfig, Model, ModelVariant};
use hotspot_core::synth::{generate, SynthSpec};

/// A default-sized synthetic city with a TC model and its fitted dataset.
pub struct Bench {
    pub city: CityData,
    pub model: Model,
    pub data: Dataset,
}

pub fn tc_bench(tracts: usize) -> Bench {
    let spec = SynthSpec {
        tracts,
        ..SynthSpec::default()
    };
    let city = generate(&spec).unwrap().city_data(10.0).unwrap();
    let arch = ArchConfig {
        predictor_channels: vec![8],
        gate_channels: vec![8],
        ..ArchConfig::default()
    };
    let model = Model::new(ModelVariant::tc(), arch, 7, city.determinants.determinants.len()).unwrap();
    let data = Dataset::fit(&city, &model, 8, city.range).unwrap();
    Bench { city, model, data }
}
