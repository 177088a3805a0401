//! Volume ingestion, synthetic phantoms, preprocessing, sampling and
//! contrast corruption.

mod corrupt;
mod manifest;
mod metaimage;
mod native;
mod phantom;
mod preprocess;
mod volume;

pub use corrupt::{corrupt_contrast, sample_start, sample_subsequence, DEFAULT_CONTRAST_FACTOR};
pub use manifest::{parse_manifest, read_manifest, write_manifest, ManifestEntry};
pub use metaimage::{read_metaimage, read_metaimage_mask, read_metaimage_volume, ElementType, MetaImage};
pub use native::{
    load_mask, load_volume, read_native, read_native_mask, read_native_volume, write_native_mask,
    write_native_volume, NativeData, NATIVE_MAGIC,
};
pub use phantom::{case_seed, generate_phantom, write_phantom_dataset, PhantomSpec};
pub use preprocess::{
    histogram_equalize, min_max_scale, preprocess, preprocess_mask, resample_bilinear, resample_nearest,
    PreprocessConfig, DEFAULT_BINS, DEFAULT_TARGET_SIZE,
};
pub use volume::{check_pair, MaskVolume, Volume};
