//! Scene archives, posed datasets, PNG helpers and the synthetic scene generator.

mod dataset;
mod png;
mod scene;
mod synth;
mod tensor;

pub use dataset::{
    ingest_dataset, save_dataset, Frame, IngestOptions, PoseConvention, PosedDataset, Split, DATASET_MANIFEST,
    DEFAULT_FEATURE_DIM, PATCH_SIZE,
};
pub use png::{encode_rgb, read_gray, read_rgb, write_gray, write_rgb};
pub use scene::{load_scene, save_scene, LoadedScene, Scene, MANIFEST_NAME, SCENE_VERSION};
pub use synth::{object_mask_name, orbit_cameras, synth_generate, Primitive, Shape, SynthOutput, SynthSpec};
pub use tensor::{bytes_to_f32, f32_to_bytes, read_bytes, read_f32, write_f32};
