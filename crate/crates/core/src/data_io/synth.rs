//! Simulated voxel responses with a planted linear encoding.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dataset::{Provenance, VoxelDataset, VoxelSample};
use crate::capsnet::CapsNet;
use crate::error::{Error, Result};
use crate::image::{Image, LabeledImage};

/// Simulator settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    /// Voxels driven linearly by the stimulus capsule.
    pub signal_count: usize,
    /// Standard deviation of the noise added to signal voxels, relative to
    /// their unit-variance signal.
    pub noise_sigma: f64,
    pub seed: u64,
    pub voxel_count: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            signal_count: 100,
            noise_sigma: 0.25,
            seed: 0,
            voxel_count: 3092,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.voxel_count == 0 || self.signal_count > self.voxel_count {
            return Err(Error::Config(format!(
                "need 0 <= signal_count ({}) <= voxel_count ({}) and voxel_count > 0",
                self.signal_count, self.voxel_count
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma {} must be >= 0", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Simulates a voxel response for each stimulus.
///
/// The feature vector of a stimulus is the capsule of its true class. Each
/// planted signal voxel `v` draws weights `w_v ~ N(0, I)` and offset
/// `b_v ~ N(0, 1)`; its activity is `w_v·capsule` standardized over the
/// stimulus set, plus `b_v`, plus `N(0, σ²)` noise. Every other voxel is
/// independent `N(0, 1)` noise.
pub fn synthesize_fmri(capsnet: &CapsNet, stimuli: &[LabeledImage], cfg: &SynthConfig) -> Result<VoxelDataset> {
    cfg.validate()?;
    if stimuli.is_empty() {
        return Err(Error::Domain("no stimuli to simulate".into()));
    }
    let images: Vec<&Image> = stimuli.iter().map(|s| &s.image).collect();
    let features: Vec<Vec<f64>> = capsnet
        .forward_images(&images)?
        .iter()
        .zip(stimuli)
        .map(|(out, s)| out.capsule(usize::from(s.label)).to_vec())
        .collect();
    let dim = features[0].len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut signal_voxels = index::sample(&mut rng, cfg.voxel_count, cfg.signal_count).into_vec();
    signal_voxels.sort_unstable();

    // signal[k][n]: standardized response of the k-th signal voxel to stimulus n
    let n = stimuli.len();
    let mut signal = Vec::with_capacity(signal_voxels.len());
    for _ in &signal_voxels {
        let w: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let offset: f64 = rng.sample(StandardNormal);
        let proj: Vec<f64> = features
            .iter()
            .map(|f| f.iter().zip(&w).map(|(a, b)| a * b).sum())
            .collect();
        let mean = proj.iter().sum::<f64>() / n as f64;
        let sd = (proj.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
        signal.push(proj.iter().map(|p| (p - mean) * scale + offset).collect::<Vec<f64>>());
    }

    let mut samples = Vec::with_capacity(n);
    for (idx, stim) in stimuli.iter().enumerate() {
        let mut next_signal = 0;
        let voxels = (0..cfg.voxel_count)
            .map(|v| {
                let z: f64 = rng.sample(StandardNormal);
                if signal_voxels.get(next_signal) == Some(&v) {
                    next_signal += 1;
                    (signal[next_signal - 1][idx] + cfg.noise_sigma * z) as f32
                } else {
                    z as f32
                }
            })
            .collect();
        samples.push(VoxelSample {
            image: stim.image.clone(),
            voxels,
            label: stim.label,
        });
    }
    VoxelDataset::new(
        samples,
        Provenance::Synthetic {
            seed: cfg.seed,
            sigma: cfg.noise_sigma,
            signal_count: cfg.signal_count,
            signal_voxels,
        },
    )
}

/// Draws `per_class` images of each listed class from `pool` without
/// replacement. The result lists classes in the given order, each class's
/// images in their pool order.
pub fn select_stimuli(pool: &[LabeledImage], classes: &[u8], per_class: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for &class in classes {
        let mut members: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].label == class).collect();
        if members.len() < per_class {
            return Err(Error::Domain(format!(
                "pool holds {} images of class {class}, {per_class} requested",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        members.truncate(per_class);
        members.sort_unstable();
        out.extend(members.into_iter().map(|i| pool[i].clone()));
    }
    Ok(out)
}
