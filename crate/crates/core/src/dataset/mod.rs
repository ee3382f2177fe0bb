//! Activation dumps, manifests, feature tables and splits.

pub mod features;
pub mod manifest;
pub mod sigact;
pub mod split;

pub use features::{
    build_feature_table, build_table_with, config_fingerprint, read_feature_table,
    write_feature_table, FeatureRow, FeatureTable,
};
pub use manifest::{
    load_manifest, open_manifest, parse_manifest, validate_manifest, write_manifest,
    DatasetManifest,
};
pub use sigact::{read_activation_file, read_activation_header, write_activation_file};
pub use split::split_dataset;
