//! Dataset ingestion, augmentation, manifests and batching.

pub mod augment;
pub mod batch;
pub mod io;
pub mod manifest;
pub mod synthetic;

pub use augment::{Augment, Flip, Sampling};
pub use batch::{batch_order, SampleLoader};
pub use io::{load_image, load_mask, resize_to_target};
pub use manifest::{build_manifest, Layout, Manifest, SampleRecord, Split};
