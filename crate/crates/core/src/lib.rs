//! Synthetic microscopy data for 2D-material flakes.
//!
//! Thin-film reflectance of `{air, flake, SiO2, Si}` stacks is turned into
//! colour, flakes are composited onto clean substrate found by a patch-wise
//! colour-contrast map, and scenes are exported as COCO annotations and
//! instruction QA records.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod colorimetry;
pub mod dataset;
pub mod error;
pub mod export;
pub mod image;
pub mod materials;
pub mod optics;
pub mod pia;
pub mod synthesis;

use std::path::PathBuf;

pub use colorimetry::{ColorSystem, Lab, LinearRgb, WhiteBalanceGain, Xyz};
pub use dataset::{run_dataset, DatasetJob, RunManifest};
pub use error::{Error, Result};
pub use export::{CocoDataset, QaRecord, QaTask};
pub use image::{RgbImage, Roi};
pub use materials::{DispersionTable, MaterialLibrary, SpectralCurve, SpectralGrid};
pub use optics::{Layer, LayerStack};
pub use pia::{PatchSize, PiaMap, SubstrateMask};
pub use synthesis::{FlakeInstance, FlakeMask, LayerClass, SynthesisConfig, SynthesisPlan};

/// The `data/` directory shipped with the source tree.
pub fn default_data_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data"))
}
