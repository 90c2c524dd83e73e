//! Volume storage, preprocessing, patch sampling, and synthetic multi-phase
//! phantom generation.
//!
//! Volumes live on disk as a directory of `meta.json` + `data.raw` (row-major,
//! Z-major, little-endian). A case is a directory of four such volumes — the
//! two contrast phases and the tumor/liver masks — plus an optional cached
//! loss-weight volume. The phantom generator builds seeded synthetic datasets
//! whose tumors are conspicuous in one phase and faint in the other, so that
//! multi-phase fusion has a measurable advantage.

pub mod case;
pub mod phantom;
pub mod preprocess;
pub mod sampling;
pub mod volume;

pub use case::{list_cases, load_dataset, write_dataset, CaseRecord};
pub use phantom::{synth_dataset, PhantomSpec};
pub use preprocess::{
    apply_liver_roi, dilate_in_plane, hu_window, hu_window_default, HU_WINDOW_HI, HU_WINDOW_LO,
    ROI_DILATION_RADIUS,
};
pub use sampling::{
    apply_transform, augment, fold_split, sample_patch, stitch, tile_plan, TileWindow,
    TrainSample,
};
pub use volume::{load_volume, save_volume, Dtype, Volume, VoxelData};
