//! Training and evaluation data: images, bicubic degradation, dataset
//! preparation, patch sampling and augmentation.

mod augment;
mod bicubic;
mod dataset;
mod image;
mod sampler;

pub use self::augment::{augment, Dihedral};
pub use self::bicubic::{bicubic_rescale, bicubic_resize, resample_weights, Contribution};
pub use self::dataset::{center_crop_to_multiple, prepare_dataset, DatasetEntry, DatasetIndex, MANIFEST_NAME};
pub use self::image::ImageRgb;
pub use self::sampler::{pairs_to_tensors, PatchSampler, SamplePair, HR_PATCH};
