//! Interaction data, product images, splitting and synthetic generation.

pub mod images;
pub mod interactions;
pub mod synth;

pub use images::{quantize16, read_image_dir, read_png, write_image_dir, write_png, ImageSample, ImageShape};
pub use interactions::{
    density, kcore_filter, leave_one_out, load_interactions, write_interactions, DatasetStats, Interaction,
    InteractionDataset, ItemId, SplitDataset, UserId, AMAZON_MEN, AMAZON_WOMEN, TRADESY,
};
pub use synth::{class_weights, synthesize_dataset, SynthSpec, SyntheticData};
