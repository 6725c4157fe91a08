//! Weight files, PPM images and run configurations.

pub mod ppm;
pub mod run_config;
pub mod weights;

pub use ppm::{decode_ppm, encode_ppm, parse_ppm, ppm_pixels, read_ppm, Ppm};
pub use run_config::{RunConfig, StageTable};
pub use weights::{decode_model, encode_model, load_weights, save_weights, WeightEntry, WeightFile};
