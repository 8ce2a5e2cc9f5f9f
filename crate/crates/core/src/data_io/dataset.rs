use crate::error::{Error, Result};
use crate::image::Image;

/// Stimulus image with the voxel response it evoked.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelSample {
    pub image: Image,
    pub voxels: Vec<f32>,
    pub label: u8,
}

/// Where a [`VoxelDataset`] came from.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Real,
    Synthetic {
        seed: u64,
        sigma: f64,
        signal_count: usize,
        /// Planted signal voxel indices, ascending.
        signal_voxels: Vec<usize>,
    },
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Real => write!(f, "real"),
            Provenance::Synthetic {
                seed,
                sigma,
                signal_count,
                ..
            } => write!(f, "synthetic(seed={seed}, sigma={sigma}, signal_count={signal_count})"),
        }
    }
}

/// Paired stimuli and voxel vectors, all of one length.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelDataset {
    samples: Vec<VoxelSample>,
    voxel_count: usize,
    folds: Option<Vec<usize>>,
    provenance: Provenance,
}

impl VoxelDataset {
    pub fn new(samples: Vec<VoxelSample>, provenance: Provenance) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Domain("a voxel dataset needs at least one sample".into()))?;
        let voxel_count = first.voxels.len();
        let dims = (first.image.width(), first.image.height());
        if voxel_count == 0 {
            return Err(Error::Domain("samples carry no voxels".into()));
        }
        for s in &samples {
            if s.voxels.len() != voxel_count {
                return Err(Error::dim("voxel vector", &[s.voxels.len()], &[voxel_count]));
            }
            if (s.image.width(), s.image.height()) != dims {
                return Err(Error::dim("stimulus image", &[s.image.height(), s.image.width()], &[dims.1, dims.0]));
            }
            if s.label > 9 {
                return Err(Error::Domain(format!("label {} outside 0..9", s.label)));
            }
        }
        Ok(Self {
            samples,
            voxel_count,
            folds: None,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[VoxelSample] {
        &self.samples
    }

    pub fn voxel_count(&self) -> usize {
        self.voxel_count
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// True when every label is a 6 or a 9.
    pub fn has_study_shape(&self) -> bool {
        self.samples.iter().all(|s| matches!(s.label, 6 | 9))
    }

    pub fn folds(&self) -> Option<&[usize]> {
        self.folds.as_deref()
    }

    /// Attaches a fold index per sample; the folds must partition the
    /// samples into `0..k` non-empty groups.
    pub fn set_folds(&mut self, folds: Vec<usize>) -> Result<()> {
        fold_count(&folds, self.len())?;
        self.folds = Some(folds);
        Ok(())
    }
}

/// Number of folds described by `folds`, after checking they form a
/// partition of `n` samples with every fold `0..k` non-empty.
pub fn fold_count(folds: &[usize], n: usize) -> Result<usize> {
    if folds.len() != n {
        return Err(Error::Domain(format!(
            "fold assignment covers {} samples, dataset has {n}",
            folds.len()
        )));
    }
    let k = folds.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &f in folds {
        sizes[f] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Domain(format!("fold {empty} of {k} is empty")));
    }
    Ok(k)
}
