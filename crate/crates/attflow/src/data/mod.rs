//! Synthetic flow data with exact ground truth, plus the interchange formats
//! around it: `.flo` flow files, binary PPM images, and flow colorization.

mod color;
mod dataset;
mod flo;
mod flow_field;
mod ppm;
mod scene;
mod texture;

pub use color::{flow_to_color, hsv_to_rgb, rgb_hue_deg};
pub use dataset::{
    hflip, photometric_jitter, write_dataset_dir, CachedDataset, DatasetConfig, FlowDataset,
    ManifestDataset, MotionPreset, SampleSource,
};
pub use flo::{read_flo, write_flo, FLO_MAGIC};
pub use flow_field::FlowField;
pub use ppm::{read_ppm, write_ppm, RgbImage};
pub use scene::{
    Affine, LayerSpec, SamplePair, SceneSpec, ShapeMask, DEFAULT_MAX_DISPLACEMENT, MAX_LAYERS,
};
pub use texture::{splitmix64, NoiseTexture};
