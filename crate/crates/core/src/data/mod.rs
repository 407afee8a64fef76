//! Rasters, patching, normalization, synthetic scenes and file formats.

mod normalize;
mod patches;
pub mod pgm;
pub mod qvt;
mod raster;
mod synth;

pub use normalize::{normalize_db, DEFAULT_HI_DB, DEFAULT_LO_DB};
pub use patches::{extract_patches, patch_grid, split, Patch, PatchSet, Split};
pub use pgm::{read_pgm, write_pgm, Pgm};
pub use qvt::{read_tensor, write_tensor, Dtype};
pub use raster::{Mask, RasterImage};
pub use synth::{synth_scene, BACKGROUND_INTENSITY, BUILDING_INTENSITY};
