//! Dataset loading, the voxel simulator, and fold assignment.

mod dataset;
mod fmri_csv;
mod folds;
mod idx;
mod synth;

pub use dataset::{fold_count, Provenance, VoxelDataset, VoxelSample};
pub use fmri_csv::{fmri_csv_string, load_fmri_csv, parse_fmri_csv, write_fmri_csv};
pub use folds::kfold_split;
pub use idx::{
    idx_images_bytes, idx_labels_bytes, load_mnist, load_mnist_dir, parse_idx_images, parse_idx_labels,
    write_mnist_dir, MnistSplit, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use synth::{select_stimuli, synthesize_fmri, SynthConfig};
