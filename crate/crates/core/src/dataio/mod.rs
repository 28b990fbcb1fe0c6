//! Slide manifests, raster decoding, tissue masking, patch extraction and
//! the synthetic slide corpus.

mod manifest;
mod mask;
mod patches;
mod raster;
pub mod synth;

pub use manifest::{load_manifest, write_manifest, Codel, Grade, Idh, Sex, SlideRecord, MANIFEST_HEADER};
pub use mask::{tissue_mask, TissueMask, MASK_WINDOW, VAR_THRESH, WHITE_THRESH};
pub use patches::{extract_patches, slide_seed, PatchSet};
pub use raster::{decode_image, encode_png, ImageRaster};
