//! Dataset ingestion, the split protocol and dataset combination.

mod adapters;
pub mod fixtures;
mod record;
mod split;

pub use adapters::{load_dataset, write_canonical, Adapter, DatasetSpec};
pub use record::{Dataset, DatasetManifest, Label, LabelScheme, Record};
pub use split::{
    combine, combined_split, read_split_manifest, split, test_size, val_size, write_split_manifest, Split,
    SplitAssignment, SplitManifestHeader, MIN_SPLIT_SIZE,
};
