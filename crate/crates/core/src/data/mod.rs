//! Volume I/O, preprocessing, augmentation, dataset manifests, split
//! generation and the synthetic dataset.

pub mod augment;
pub mod manifest;
pub mod nifti;
pub mod preprocess;
pub mod split;
pub mod synthetic;
mod volume;

pub use augment::{apply_affine, flip_lr, random_affine, random_flip_lr, AffineDraw, AugmentConfig};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use nifti::{read_nifti, write_nifti};
pub use preprocess::{percentile_normalize, preprocess, resample_isotropic, PreprocessConfig};
pub use split::{make_splits, SplitSpec};
pub use synthetic::generate_synthetic;
pub use volume::{sample_trilinear, Boundary, Volume};
