//! Dense volumes and the operations that produce and consume them.

mod format;
pub mod morph;
mod preprocess;
mod raster;
pub mod synth;
mod volume;

pub use format::{raw_path_for, read_volume, write_volume};
pub use morph::{fill_holes, label_components, largest_component, morph_cleanup, morph_cleanup_with, CleanupOptions, CleanupOutcome};
pub use preprocess::{mask_centroid, preprocess, zscore_normalize, PreprocessConfig};
pub use raster::rasterize;
pub use synth::{synth_case, synth_shape, Blob, SynthCase, SynthParams};
pub use volume::{Grid, Volume, VolumeKind};
