//! Synthetic stand-in for a video insertion data pipeline: rendered scenes
//! with exact masks, removal and inpainting oracles, pair assembly and the
//! dataset directory format.

pub mod dataset;
pub mod inpaint;
pub mod scene;

pub use dataset::{
    build_dataset, read_dataset, read_manifest, remove_object, write_dataset, Dataset, DatasetConfig, GuidanceType,
    Manifest, Provenance, RecordEntry, TrainingPair,
};
pub use inpaint::{composite_background, corrupt_inside_mask, masked_video, traditional_inpaint};
pub use scene::{random_scene, scale_filter, synth_scene, Background, SceneObject, SceneSpec, Shape, Trajectory};
