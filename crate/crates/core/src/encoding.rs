//! Per-voxel linear encoding from capsule features, scored by R².

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Diagonal jitter added to the Gram matrix.
pub const RIDGE_JITTER: f64 = 1e-8;

/// Coefficients of one voxel: `activity ≈ weights·features + intercept`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl VoxelFit {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(features).map(|(w, f)| w * f).sum::<f64>()
    }
}

/// Least-squares solver for one design matrix, shared by every voxel.
///
/// Features are centred, so the intercept decouples from the slopes; the
/// slopes solve `(XᵀX + εI) w = Xᵀy` by Cholesky factorization.
pub struct LinearFitter {
    means: Vec<f64>,
    centred: DMatrix<f64>,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl LinearFitter {
    /// `features` is `N` rows of equal length.
    pub fn new(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(Error::DegenerateFit(format!("{n} samples; at least 2 are needed")));
        }
        let d = features[0].len();
        if let Some(row) = features.iter().find(|r| r.len() != d) {
            return Err(Error::dim("feature rows", &[row.len()], &[d]));
        }
        let means: Vec<f64> = (0..d)
            .map(|j| features.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let centred = DMatrix::from_fn(n, d, |i, j| features[i][j] - means[j]);
        if d > 0 && centred.iter().all(|&x| x == 0.0) {
            return Err(Error::DegenerateFit("feature matrix is constant".into()));
        }
        let mut gram = centred.transpose() * &centred;
        for j in 0..d {
            gram[(j, j)] += RIDGE_JITTER;
        }
        let factor = gram
            .cholesky()
            .ok_or_else(|| Error::DegenerateFit("Gram matrix is not positive definite".into()))?;
        Ok(Self { means, centred, factor })
    }

    pub fn samples(&self) -> usize {
        self.centred.nrows()
    }

    pub fn fit(&self, activity: &[f64]) -> Result<VoxelFit> {
        let n = self.samples();
        if activity.len() != n {
            return Err(Error::dim("voxel activity", &[activity.len()], &[n]));
        }
        let mean_y = activity.iter().sum::<f64>() / n as f64;
        let y = DVector::from_iterator(n, activity.iter().map(|a| a - mean_y));
        let w = self.factor.solve(&(self.centred.transpose() * y));
        let weights: Vec<f64> = w.iter().copied().collect();
        let intercept = mean_y - weights.iter().zip(&self.means).map(|(a, b)| a * b).sum::<f64>();
        Ok(VoxelFit { weights, intercept })
    }
}

/// Ordinary least squares with intercept for a single voxel.
pub fn fit_voxel(features: &[Vec<f64>], activity: &[f64]) -> Result<VoxelFit> {
    LinearFitter::new(features)?.fit(activity)
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r_squared(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::dim("r_squared", &[predicted.len()], &[actual.len()]));
    }
    if actual.len() < 2 {
        return Err(Error::UndefinedVariance(format!("{} observations", actual.len())));
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedVariance("actual values are constant".into()));
    }
    let ss_res: f64 = predicted.iter().zip(actual).map(|(p, a)| (a - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Fitted encoding for every voxel plus the top-`k` selection.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingModel {
    feature_dim: usize,
    /// `V` fits in z-scored voxel units.
    fits: Vec<VoxelFit>,
    r2: Vec<f64>,
    selected: Vec<usize>,
    voxel_mean: Vec<f64>,
    voxel_std: Vec<f64>,
}

/// Indices of the `k` largest scores, descending, ties to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Fits every voxel on the training pairs and keeps the `k` with the
/// highest training-fit R².
///
/// `features[n]` is the capsule vector of stimulus `n` and `voxels[n]` its
/// response. Each voxel is z-scored over these samples before fitting; a
/// voxel that is constant over them scores `R² = 0`.
pub fn build_encoding(features: &[Vec<f64>], voxels: &[&[f32]], k: usize) -> Result<EncodingModel> {
    let n = features.len();
    if voxels.len() != n {
        return Err(Error::dim("encoding pairs", &[voxels.len()], &[n]));
    }
    let v = voxels.first().map_or(0, |r| r.len());
    if let Some(row) = voxels.iter().find(|r| r.len() != v) {
        return Err(Error::dim("voxel vectors", &[row.len()], &[v]));
    }
    if k == 0 || k > v {
        return Err(Error::Domain(format!("cannot select {k} of {v} voxels")));
    }
    let fitter = LinearFitter::new(features)?;
    let feature_dim = features[0].len();

    let per_voxel: Vec<(VoxelFit, f64, f64, f64)> = (0..v)
        .into_par_iter()
        .map(|j| {
            let raw: Vec<f64> = voxels.iter().map(|r| f64::from(r[j])).collect();
            let mean = raw.iter().sum::<f64>() / n as f64;
            let sd = (raw.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            if sd == 0.0 {
                let fit = VoxelFit {
                    weights: vec![0.0; feature_dim],
                    intercept: 0.0,
                };
                return Ok((fit, 0.0, mean, 1.0));
            }
            let z: Vec<f64> = raw.iter().map(|x| (x - mean) / sd).collect();
            let fit = fitter.fit(&z)?;
            let predicted: Vec<f64> = features.iter().map(|f| fit.predict(f)).collect();
            let r2 = r_squared(&predicted, &z)?;
            Ok((fit, r2, mean, sd))
        })
        .collect::<Result<_>>()?;

    let mut model = EncodingModel {
        feature_dim,
        fits: Vec::with_capacity(v),
        r2: Vec::with_capacity(v),
        selected: Vec::new(),
        voxel_mean: Vec::with_capacity(v),
        voxel_std: Vec::with_capacity(v),
    };
    for (fit, r2, mean, sd) in per_voxel {
        model.fits.push(fit);
        model.r2.push(r2);
        model.voxel_mean.push(mean);
        model.voxel_std.push(sd);
    }
    model.selected = top_k(&model.r2, k);
    Ok(model)
}

impl EncodingModel {
    pub fn voxel_count(&self) -> usize {
        self.fits.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn r2(&self) -> &[f64] {
        &self.r2
    }

    /// Selected voxel indices, best first.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn fit(&self, voxel: usize) -> &VoxelFit {
        &self.fits[voxel]
    }

    /// Predicted raw activity of every voxel for one capsule vector.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_dim {
            return Err(Error::dim("encoding features", &[features.len()], &[self.feature_dim]));
        }
        Ok(self
            .fits
            .iter()
            .zip(self.voxel_mean.iter().zip(&self.voxel_std))
            .map(|(fit, (m, s))| m + s * fit.predict(features))
            .collect())
    }

    /// Values of the selected voxels, in selection order.
    pub fn select(&self, voxels: &[f32]) -> Result<Vec<f32>> {
        if voxels.len() != self.voxel_count() {
            return Err(Error::dim("voxel vector", &[voxels.len()], &[self.voxel_count()]));
        }
        Ok(self.selected.iter().map(|&i| voxels[i]).collect())
    }

    /// Same model with a different selection size, reusing the fits.
    pub fn reselect(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.voxel_count() {
            return Err(Error::Domain(format!("cannot select {k} of {} voxels", self.voxel_count())));
        }
        Ok(Self {
            selected: top_k(&self.r2, k),
            ..self.clone()
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let v = self.voxel_count();
        let d = self.feature_dim + 1;
        let mut weights = Vec::with_capacity(v * d);
        for fit in &self.fits {
            weights.extend(fit.weights.iter().map(|&w| w as f32));
            weights.push(fit.intercept as f32);
        }
        let f32s = |xs: &[f64]| xs.iter().map(|&x| x as f32).collect::<Vec<_>>();
        let mut ckpt = Checkpoint::new();
        ckpt.set("kind", "encoding")
            .set("voxels", v)
            .set("feature_dim", self.feature_dim)
            .set("k", self.selected.len());
        let tensor = |shape: &[usize], data: Vec<f32>| Tensor::new(shape, data).expect("consistent shape");
        ckpt.push_tensor("weights", tensor(&[v, d], weights));
        ckpt.push_tensor("r2", tensor(&[v], f32s(&self.r2)));
        ckpt.push_tensor(
            "selected",
            tensor(&[self.selected.len()], self.selected.iter().map(|&i| i as f32).collect()),
        );
        ckpt.push_tensor("voxel_mean", tensor(&[v], f32s(&self.voxel_mean)));
        ckpt.push_tensor("voxel_std", tensor(&[v], f32s(&self.voxel_std)));
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.get("kind") != Some("encoding") {
            return Err(Error::Config("checkpoint does not hold an encoding model".into()));
        }
        let v: usize = ckpt.parse("voxels")?;
        let feature_dim: usize = ckpt.parse("feature_dim")?;
        let k: usize = ckpt.parse("k")?;
        let f64s = |t: &Tensor<f32>| t.data().iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
        let fits = ckpt
            .expect_tensor("weights", &[v, feature_dim + 1])?
            .data()
            .chunks(feature_dim + 1)
            .map(|row| VoxelFit {
                weights: row[..feature_dim].iter().map(|&w| f64::from(w)).collect(),
                intercept: f64::from(row[feature_dim]),
            })
            .collect();
        let selected: Vec<usize> = ckpt
            .expect_tensor("selected", &[k])?
            .data()
            .iter()
            .map(|&i| i as usize)
            .collect();
        if selected.iter().any(|&i| i >= v) {
            return Err(Error::Config("selected voxel index out of range".into()));
        }
        Ok(Self {
            feature_dim,
            fits,
            r2: f64s(ckpt.expect_tensor("r2", &[v])?),
            selected,
            voxel_mean: f64s(ckpt.expect_tensor("voxel_mean", &[v])?),
            voxel_std: f64s(ckpt.expect_tensor("voxel_std", &[v])?),
        })
    }
}
