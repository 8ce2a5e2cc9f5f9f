//! Reconstruction from voxel activity and the cross-validated evaluation
//! loop.

mod report;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::capsnet::{argmax_first, CapsNet, DigitCapsOutput};
use crate::data_io::{fold_count, kfold_split, VoxelDataset};
use crate::encoding::{build_encoding, EncodingModel};
use crate::error::{Error, Result};
use crate::fmri_decoder::{train_decoder, FmriDecoder, FmriDecoderConfig};
use crate::image::Image;
use crate::metrics::{MetricTriple, SsimConfig};
use crate::tensor::Tensor;

pub use report::{format_metric_table, table2_row, write_pgm, write_reconstructions, MetricSummary};

/// Index of the longest capsule among `capsules` rows (`[C × D]`), ties
/// to the earlier row.
pub fn longest_row(capsules: &Tensor<f64>) -> usize {
    let d = capsules.shape()[1];
    let norms: Vec<f64> = capsules
        .data()
        .chunks(d)
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    argmax_first(&norms)
}

/// Checks that the three models can be chained.
pub fn check_consistency(capsnet: &CapsNet, encoder: &EncodingModel, decoder: &FmriDecoder) -> Result<()> {
    let cfg = capsnet.config();
    if encoder.selected() != decoder.input_voxel_indices() {
        return Err(Error::Config(format!(
            "decoder expects {} voxels that differ from the encoder's {} selected voxels",
            decoder.input_size(),
            encoder.selected().len()
        )));
    }
    if decoder.capsule_dim() != cfg.digit_dim || encoder.feature_dim() != cfg.digit_dim {
        return Err(Error::Config(format!(
            "capsule dimension mismatch: network {}, encoder {}, decoder {}",
            cfg.digit_dim,
            encoder.feature_dim(),
            decoder.capsule_dim()
        )));
    }
    if let Some(c) = decoder.candidate_classes().iter().find(|&&c| c >= cfg.num_classes) {
        return Err(Error::Config(format!("candidate class {c} not produced by the network")));
    }
    Ok(())
}

/// Decodes an image from a full voxel vector: select the encoder's voxels,
/// predict the candidate capsules, keep the longest, and decode it at its
/// class position. Returns the chosen class and the image.
pub fn reconstruct_from_fmri(
    capsnet: &CapsNet,
    encoder: &EncodingModel,
    decoder: &FmriDecoder,
    voxels: &[f32],
) -> Result<(usize, Image)> {
    check_consistency(capsnet, encoder, decoder)?;
    let predicted = decoder.predict_capsules(&encoder.select(voxels)?)?;
    decode_predicted(capsnet, decoder.candidate_classes(), &predicted)
}

/// Picks the longest of the predicted candidate capsules and decodes it.
pub fn decode_predicted(capsnet: &CapsNet, classes: &[usize], predicted: &Tensor<f64>) -> Result<(usize, Image)> {
    let cfg = capsnet.config();
    let d = cfg.digit_dim;
    if predicted.shape() != [classes.len(), d] {
        return Err(Error::dim("predicted capsules", predicted.shape(), &[classes.len(), d]));
    }
    let row = longest_row(predicted);
    let class = classes[row];
    let mut block = Tensor::<f64>::zeros(&[cfg.num_classes, d]);
    block.data_mut()[class * d..(class + 1) * d].copy_from_slice(&predicted.data()[row * d..(row + 1) * d]);
    Ok((class, capsnet.decode(&block, class)?))
}

/// Upper-bound reconstruction: the stimulus's own longest capsule, decoded.
pub fn theoretical_reconstruction(capsnet: &CapsNet, stimulus: &Image) -> Result<(usize, Image)> {
    let out = capsnet.forward(&stimulus.to_tensor())?;
    theoretical_from_output(capsnet, &out)
}

fn theoretical_from_output(capsnet: &CapsNet, out: &DigitCapsOutput) -> Result<(usize, Image)> {
    let class = out.longest();
    Ok((class, capsnet.decode(&out.capsules, class)?))
}

/// Cross-validation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    /// Seeds the fold assignment; fold `f` trains its decoder with
    /// `decoder.seed + f`.
    pub seed: u64,
    /// Voxels kept by the encoding model.
    pub k: usize,
    pub candidate_classes: Vec<usize>,
    pub decoder: FmriDecoderConfig,
    pub ssim: SsimConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 0,
            k: 100,
            candidate_classes: vec![6, 9],
            decoder: FmriDecoderConfig::default(),
            ssim: SsimConfig::default(),
        }
    }
}

/// Everything produced for one held-out sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult {
    pub sample: usize,
    pub fold: usize,
    pub label: u8,
    pub stimulus: Image,
    pub theoretical: Image,
    pub predicted: Image,
    /// Decoder output `[candidate classes × capsule dim]`.
    pub predicted_capsules: Tensor<f64>,
    /// The stimulus's own capsules for the candidate classes, same layout.
    pub target_capsules: Tensor<f64>,
    pub theoretical_class: usize,
    pub chosen_class: usize,
    pub theoretical_metrics: MetricTriple,
    pub predicted_metrics: MetricTriple,
}

/// Training summary of one fold.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// SHA-256 over every input the fold's models were trained on.
    pub training_digest: String,
    /// SHA-256 over the fold's serialized encoder and decoder.
    pub model_digest: String,
    pub decoder_loss: Vec<f64>,
    pub predicted: MetricSummary,
}

/// Per-fold and aggregate outcome of [`cross_validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    /// One entry per sample, by sample index.
    pub samples: Vec<ReconstructionResult>,
    pub predicted: MetricSummary,
    pub theoretical: MetricSummary,
}

impl CrossValidation {
    /// Fraction of samples whose chosen class equals the label.
    pub fn class_accuracy(&self) -> f64 {
        let hits = self
            .samples
            .iter()
            .filter(|s| s.chosen_class == usize::from(s.label))
            .count();
        hits as f64 / self.samples.len() as f64
    }
}

fn hex(digest: impl AsRef<[u8]>) -> String {
    digest.as_ref().iter().map(|b| format!("{b:02x}")).collect()
}

fn capsule_rows(out: &DigitCapsOutput, classes: &[usize]) -> Vec<f64> {
    classes.iter().flat_map(|&c| out.capsule(c).to_vec()).collect()
}

/// k-fold evaluation of the voxel stage on top of a fixed capsule network.
///
/// Stage-one features come from `capsnet` once for all samples. For each
/// fold the encoding model and decoder are fit on the training samples only,
/// and every held-out sample is reconstructed and scored against its
/// stimulus alongside its theoretical reconstruction.
pub fn cross_validate(capsnet: &CapsNet, dataset: &VoxelDataset, config: &CvConfig) -> Result<CrossValidation> {
    let n = dataset.len();
    let net = capsnet.config();
    if config.candidate_classes.is_empty() {
        return Err(Error::Config("no candidate classes".into()));
    }
    if let Some(c) = config.candidate_classes.iter().find(|&&c| c >= net.num_classes) {
        return Err(Error::Config(format!("candidate class {c} not produced by the network")));
    }
    let folds = match dataset.folds() {
        Some(f) => f.to_vec(),
        None => kfold_split(n, config.folds, config.seed, &dataset.labels())?,
    };
    let k_folds = fold_count(&folds, n)?;
    if k_folds < 2 {
        return Err(Error::Domain("cross-validation needs at least two folds".into()));
    }

    let images: Vec<&Image> = dataset.samples().iter().map(|s| &s.image).collect();
    let outputs = capsnet.forward_images(&images)?;
    let theoretical: Vec<(usize, Image)> = outputs
        .iter()
        .map(|o| theoretical_from_output(capsnet, o))
        .collect::<Result<_>>()?;

    let per_fold: Vec<(FoldResult, Vec<ReconstructionResult>)> = (0..k_folds)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != fold).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == fold).collect();
            let samples = dataset.samples();

            let mut hasher = Sha256::new();
            let features: Vec<Vec<f64>> = train
                .iter()
                .map(|&i| outputs[i].capsule(usize::from(samples[i].label)).to_vec())
                .collect();
            for (&i, f) in train.iter().zip(&features) {
                hasher.update((i as u64).to_le_bytes());
                hasher.update([samples[i].label]);
                for x in &samples[i].voxels {
                    hasher.update(x.to_le_bytes());
                }
                for x in f {
                    hasher.update(x.to_le_bytes());
                }
            }
            let training_digest = hex(hasher.finalize());

            let rows: Vec<&[f32]> = train.iter().map(|&i| samples[i].voxels.as_slice()).collect();
            let encoder = build_encoding(&features, &rows, config.k)?;
            let inputs: Vec<Vec<f32>> = rows.iter().map(|r| encoder.select(r)).collect::<Result<_>>()?;
            let targets: Vec<Vec<f64>> = train
                .iter()
                .map(|&i| capsule_rows(&outputs[i], &config.candidate_classes))
                .collect();
            let decoder_config = FmriDecoderConfig {
                seed: config.decoder.seed.wrapping_add(fold as u64),
                capsule_dim: net.digit_dim,
                ..config.decoder.clone()
            };
            let trained = train_decoder(
                &inputs,
                &targets,
                encoder.selected().to_vec(),
                config.candidate_classes.clone(),
                &decoder_config,
            )?;
            let mut model_hasher = Sha256::new();
            model_hasher.update(encoder.to_checkpoint().to_bytes());
            model_hasher.update(trained.model.to_checkpoint().to_bytes());

            let results = test
                .iter()
                .map(|&i| {
                    let s = &samples[i];
                    check_consistency(capsnet, &encoder, &trained.model)?;
                    let predicted_capsules = trained.model.predict_capsules(&encoder.select(&s.voxels)?)?;
                    let (chosen_class, predicted) =
                        decode_predicted(capsnet, &config.candidate_classes, &predicted_capsules)?;
                    let nc = config.candidate_classes.len();
                    let target_capsules =
                        Tensor::from_f64(&[nc, net.digit_dim], &capsule_rows(&outputs[i], &config.candidate_classes))?;
                    let (theoretical_class, theory) = theoretical[i].clone();
                    Ok(ReconstructionResult {
                        sample: i,
                        fold,
                        label: s.label,
                        theoretical_metrics: MetricTriple::between_lenient(&theory, &s.image, &config.ssim)?,
                        predicted_metrics: MetricTriple::between_lenient(&predicted, &s.image, &config.ssim)?,
                        stimulus: s.image.clone(),
                        theoretical: theory,
                        predicted,
                        predicted_capsules,
                        target_capsules,
                        theoretical_class,
                        chosen_class,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let summary = MetricSummary::of(results.iter().map(|r| r.predicted_metrics));
            Ok((
                FoldResult {
                    fold,
                    train_indices: train,
                    test_indices: test,
                    training_digest,
                    model_digest: hex(model_hasher.finalize()),
                    decoder_loss: trained.loss_history,
                    predicted: summary,
                },
                results,
            ))
        })
        .collect::<Result<_>>()?;

    let mut fold_results = Vec::with_capacity(k_folds);
    let mut samples = Vec::with_capacity(n);
    for (f, r) in per_fold {
        fold_results.push(f);
        samples.extend(r);
    }
    samples.sort_by_key(|r| r.sample);
    Ok(CrossValidation {
        folds: fold_results,
        predicted: MetricSummary::of(samples.iter().map(|r| r.predicted_metrics)),
        theoretical: MetricSummary::of(samples.iter().map(|r| r.theoretical_metrics)),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capsnet::CapsNetConfig;

    #[test]
    fn longest_row_breaks_ties_to_the_first_class() {
        let caps = Tensor::from_f64(&[2, 2], &[0.6, 0.8, 0.8, 0.6]).unwrap();
        assert_eq!(longest_row(&caps), 0);
        let caps = Tensor::from_f64(&[2, 2], &[0.1, 0.0, 0.0, 0.2]).unwrap();
        assert_eq!(longest_row(&caps), 1);
    }

    #[test]
    fn predicted_decode_uses_the_longest_candidate() {
        let net = CapsNet::new(CapsNetConfig::default(), 0).unwrap();
        let mut pred = Tensor::<f64>::zeros(&[2, 16]);
        pred.data_mut()[20] = 0.7;
        pred.data_mut()[3] = 0.3;
        let (class, img) = decode_predicted(&net, &[6, 9], &pred).unwrap();
        assert_eq!(class, 9);
        assert!(img.pixels().iter().all(|&p| p > 0.0 && p < 1.0));
        // equal norms: the first candidate wins
        let tie = Tensor::from_f64(&[2, 16], &[[0.5; 16], [0.5; 16]].concat()).unwrap();
        assert_eq!(decode_predicted(&net, &[6, 9], &tie).unwrap().0, 6);
    }

    #[test]
    fn theoretical_reconstruction_is_repeatable() {
        let net = CapsNet::new(CapsNetConfig::default(), 1).unwrap();
        let img = Image::new(28, 28, (0..784).map(|p| (p % 29) as f32 / 29.0).collect()).unwrap();
        let a = theoretical_reconstruction(&net, &img).unwrap();
        assert_eq!(a, theoretical_reconstruction(&net, &img).unwrap());
        assert!(a.1.in_unit_range());
    }
}
