//! Loaders for crime counts, OD mobility flows and census determinants.

mod crimes;
mod determinants;
mod mobility;

pub use crimes::{load_crimes, write_crimes, CrimeSeries, CrimeType};
pub use determinants::{load_determinants, write_determinants, Determinant, DeterminantTable, Estimate};
pub use mobility::{
    derive_mobility_features, load_od, rescale_flows, write_od, MobilityFeature, MobilityFeatures, OdFlows, OdRecord,
    Region, DEFAULT_RESCALE_FACTOR,
};
