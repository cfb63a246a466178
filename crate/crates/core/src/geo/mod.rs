//! Tract geometry, nearest-neighbour layouts and the 2D feature maps the
//! convolutional branches consume.

mod features;
mod graph;
mod neighbors;

pub use features::{day_of_week_encoding, layout_feature_map, FeatureTensor, Normalizer, SeriesSet, TractSeries};
pub use graph::{haversine_km, Group, GroupShares, Tract, TractGraph};
pub use neighbors::{
    build_neighbor_map, NeighborMap, NeighborSet, RowSlot, CENTER_ROW, LAYOUT_ROWS, MAX_NEIGHBORS, RANK_ROWS,
};

#[cfg(test)]
pub(crate) use graph::test_tract;
