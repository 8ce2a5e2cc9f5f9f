//! Fully connected regression from selected voxels to candidate-class
//! capsules.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::capsnet::DenseLayer;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, ParamInit, Tape, Tensor, Var};

/// Training and shape settings of the voxel decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct FmriDecoderConfig {
    pub hidden: Vec<usize>,
    pub capsule_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Start from all-zero parameters instead of random weights.
    pub zero_init: bool,
}

impl Default for FmriDecoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            capsule_dim: 16,
            epochs: 200,
            batch_size: 10,
            seed: 0,
            adam: AdamConfig::default(),
            zero_init: false,
        }
    }
}

/// Maps `k` selected voxel values to one capsule per candidate class.
///
/// Inputs are standardized with the training-set mean and standard deviation
/// of each voxel before entering the network, and the network regresses
/// targets standardized the same way per output. Hidden layers use ReLU; the
/// output layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct FmriDecoder {
    layers: Vec<DenseLayer<f32>>,
    candidate_classes: Vec<usize>,
    input_voxel_indices: Vec<usize>,
    capsule_dim: usize,
    input_mean: Vec<f32>,
    input_std: Vec<f32>,
    output_mean: Vec<f32>,
    output_std: Vec<f32>,
    seed: u64,
}

impl FmriDecoder {
    /// Untrained decoder with identity input normalization.
    pub fn new(input_voxel_indices: Vec<usize>, candidate_classes: Vec<usize>, config: &FmriDecoderConfig) -> Result<Self> {
        let k = input_voxel_indices.len();
        if k == 0 || candidate_classes.is_empty() || config.capsule_dim == 0 {
            return Err(Error::Config("decoder needs inputs, classes and a capsule dimension".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut widths = vec![k];
        widths.extend(&config.hidden);
        widths.push(candidate_classes.len() * config.capsule_dim);
        let layers = widths
            .windows(2)
            .map(|w| {
                let init = if config.zero_init {
                    ParamInit::Zeros
                } else {
                    ParamInit::FanIn { fan_in: w[0], cap: 0.1 }
                };
                DenseLayer {
                    weights: init.build(&[w[0], w[1]], &mut rng).with_requires_grad(),
                    bias: Tensor::zeros(&[w[1]]).with_requires_grad(),
                }
            })
            .collect();
        Ok(Self {
            layers,
            candidate_classes,
            input_voxel_indices,
            capsule_dim: config.capsule_dim,
            input_mean: vec![0.0; k],
            input_std: vec![1.0; k],
            output_mean: vec![0.0; widths[widths.len() - 1]],
            output_std: vec![1.0; widths[widths.len() - 1]],
            seed: config.seed,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_voxel_indices.len()
    }

    pub fn output_size(&self) -> usize {
        self.candidate_classes.len() * self.capsule_dim
    }

    pub fn candidate_classes(&self) -> &[usize] {
        &self.candidate_classes
    }

    pub fn input_voxel_indices(&self) -> &[usize] {
        &self.input_voxel_indices
    }

    pub fn capsule_dim(&self) -> usize {
        self.capsule_dim
    }

    pub fn layers(&self) -> &[DenseLayer<f32>] {
        &self.layers
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    fn normalized_batch(&self, inputs: &[&[f32]]) -> Result<Tensor<f32>> {
        let k = self.input_size();
        let mut data = Vec::with_capacity(inputs.len() * k);
        for row in inputs {
            if row.len() != k {
                return Err(Error::dim("decoder input", &[row.len()], &[k]));
            }
            data.extend(
                row.iter()
                    .zip(self.input_mean.iter().zip(&self.input_std))
                    .map(|(x, (m, s))| (x - m) / s),
            );
        }
        Tensor::new(&[inputs.len(), k], data)
    }

    fn graph<'t>(&self, tape: &'t Tape<f32>, input: Tensor<f32>, trainable: bool) -> Result<(Var<'t, f32>, Vec<Var<'t, f32>>)> {
        let mut params = Vec::new();
        let mut x = tape.constant(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let (w, b) = if trainable {
                (tape.param(&layer.weights), tape.param(&layer.bias))
            } else {
                (tape.constant(layer.weights.clone()), tape.constant(layer.bias.clone()))
            };
            params.extend([w, b]);
            x = x.matmul(w)?.add_bias(b)?;
            if l + 1 < self.layers.len() {
                x = x.relu();
            }
        }
        Ok((x, params))
    }

    /// Predicted capsules `[classes × capsule_dim]` from the `k` selected
    /// voxel values. No squash is applied.
    pub fn predict_capsules(&self, voxels_k: &[f32]) -> Result<Tensor<f64>> {
        let tape = Tape::new();
        let (out, _) = self.graph(&tape, self.normalized_batch(&[voxels_k])?, false)?;
        Tensor::from_f64(
            &[self.candidate_classes.len(), self.capsule_dim],
            &self.denormalize(&out.to_tensor()),
        )
    }

    /// Network outputs mapped back to capsule units.
    fn denormalize(&self, out: &Tensor<f32>) -> Vec<f64> {
        out.data()
            .chunks(self.output_size())
            .flat_map(|row| {
                row.iter()
                    .zip(self.output_mean.iter().zip(&self.output_std))
                    .map(|(&y, (&m, &s))| f64::from(y) * f64::from(s) + f64::from(m))
            })
            .collect()
    }

    /// Like [`FmriDecoder::predict_capsules`], picking the inputs out of a
    /// full voxel vector.
    pub fn predict_from_full(&self, voxels: &[f32]) -> Result<Tensor<f64>> {
        let picked = self
            .input_voxel_indices
            .iter()
            .map(|&i| {
                voxels
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("voxel index {i} beyond a vector of {}", voxels.len())))
            })
            .collect::<Result<Vec<f32>>>()?;
        self.predict_capsules(&picked)
    }

    /// Mean squared error over all outputs and samples.
    pub fn mse(&self, inputs: &[Vec<f32>], targets: &[Vec<f64>]) -> Result<f64> {
        check_pairs(inputs, targets, self.output_size())?;
        let rows: Vec<&[f32]> = inputs.iter().map(Vec::as_slice).collect();
        let tape = Tape::new();
        let (out, _) = self.graph(&tape, self.normalized_batch(&rows)?, false)?;
        let out = self.denormalize(&out.to_tensor());
        let sum: f64 = out
            .iter()
            .zip(targets.iter().flatten())
            .map(|(p, t)| (p - t).powi(2))
            .sum();
        Ok(sum / out.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let join = |xs: &[usize]| xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let hidden: Vec<usize> = self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.bias.numel())
            .collect();
        let mut ckpt = Checkpoint::new();
        ckpt.set("kind", "fmri_decoder")
            .set("seed", self.seed)
            .set("inputs", self.input_size())
            .set("hidden", join(&hidden))
            .set("capsule_dim", self.capsule_dim)
            .set("candidate_classes", join(&self.candidate_classes))
            .set("input_voxel_indices", join(&self.input_voxel_indices));
        let k = self.input_size();
        ckpt.push_tensor("input_mean", Tensor::new(&[k], self.input_mean.clone()).expect("shape"));
        ckpt.push_tensor("input_std", Tensor::new(&[k], self.input_std.clone()).expect("shape"));
        let o = self.output_size();
        ckpt.push_tensor("output_mean", Tensor::new(&[o], self.output_mean.clone()).expect("shape"));
        ckpt.push_tensor("output_std", Tensor::new(&[o], self.output_std.clone()).expect("shape"));
        for (l, layer) in self.layers.iter().enumerate() {
            ckpt.push_tensor(format!("layer.{l}.weights"), layer.weights.clone());
            ckpt.push_tensor(format!("layer.{l}.bias"), layer.bias.clone());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.get("kind") != Some("fmri_decoder") {
            return Err(Error::Config("checkpoint does not hold an fMRI decoder".into()));
        }
        let list = |key: &str| -> Result<Vec<usize>> {
            let raw = ckpt.get(key).ok_or_else(|| Error::Config(format!("missing header key {key}")))?;
            raw.split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Error::Config(format!("bad entry {s:?} in {key}"))))
                .collect()
        };
        let config = FmriDecoderConfig {
            hidden: list("hidden")?,
            capsule_dim: ckpt.parse("capsule_dim")?,
            seed: ckpt.parse("seed")?,
            zero_init: true,
            ..FmriDecoderConfig::default()
        };
        let mut model = Self::new(list("input_voxel_indices")?, list("candidate_classes")?, &config)?;
        if model.input_size() != ckpt.parse::<usize>("inputs")? {
            return Err(Error::Config("decoder input count disagrees with its voxel list".into()));
        }
        let k = model.input_size();
        model.input_mean = ckpt.expect_tensor("input_mean", &[k])?.data().to_vec();
        model.input_std = ckpt.expect_tensor("input_std", &[k])?.data().to_vec();
        let o = model.output_size();
        model.output_mean = ckpt.expect_tensor("output_mean", &[o])?.data().to_vec();
        model.output_std = ckpt.expect_tensor("output_std", &[o])?.data().to_vec();
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let w = ckpt.expect_tensor(&format!("layer.{l}.weights"), layer.weights.shape())?;
            layer.weights.data_mut().copy_from_slice(w.data());
            let b = ckpt.expect_tensor(&format!("layer.{l}.bias"), layer.bias.shape())?;
            layer.bias.data_mut().copy_from_slice(b.data());
        }
        Ok(model)
    }
}

fn check_pairs(inputs: &[Vec<f32>], targets: &[Vec<f64>], outputs: usize) -> Result<()> {
    if inputs.len() != targets.len() {
        return Err(Error::dim("decoder pairs", &[inputs.len()], &[targets.len()]));
    }
    if let Some(t) = targets.iter().find(|t| t.len() != outputs) {
        return Err(Error::dim("decoder target", &[t.len()], &[outputs]));
    }
    Ok(())
}

/// A trained decoder with its per-epoch mean training loss.
#[derive(Clone, Debug)]
pub struct DecoderTraining {
    pub model: FmriDecoder,
    pub loss_history: Vec<f64>,
}

/// Fits the decoder by mini-batch Adam on the mean squared error.
///
/// `inputs[n]` holds the `k` selected voxel values of sample `n` (ordered as
/// `input_voxel_indices`) and `targets[n]` the concatenated capsules of the
/// candidate classes.
pub fn train_decoder(
    inputs: &[Vec<f32>],
    targets: &[Vec<f64>],
    input_voxel_indices: Vec<usize>,
    candidate_classes: Vec<usize>,
    config: &FmriDecoderConfig,
) -> Result<DecoderTraining> {
    let mut model = FmriDecoder::new(input_voxel_indices, candidate_classes, config)?;
    check_pairs(inputs, targets, model.output_size())?;
    if inputs.len() < 2 {
        return Err(Error::Domain(format!("{} training samples; at least 2 needed", inputs.len())));
    }
    if config.batch_size == 0 {
        return Err(Error::Domain("batch size must be at least 1".into()));
    }
    let k = model.input_size();
    if let Some(row) = inputs.iter().find(|r| r.len() != k) {
        return Err(Error::dim("decoder input", &[row.len()], &[k]));
    }
    let n = inputs.len() as f64;
    for j in 0..k {
        let mean = inputs.iter().map(|r| f64::from(r[j])).sum::<f64>() / n;
        let sd = (inputs.iter().map(|r| (f64::from(r[j]) - mean).powi(2)).sum::<f64>() / n).sqrt();
        model.input_mean[j] = mean as f32;
        model.input_std[j] = if sd > 0.0 { sd as f32 } else { 1.0 };
    }
    for j in 0..model.output_size() {
        let mean = targets.iter().map(|t| t[j]).sum::<f64>() / n;
        let sd = (targets.iter().map(|t| (t[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        model.output_mean[j] = mean as f32;
        model.output_std[j] = if sd > 0.0 { sd as f32 } else { 1.0 };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_da7a);
    let mut optimizer = Adam::new(config.adam);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    let outputs = model.output_size();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let rows: Vec<&[f32]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
            let target: Vec<f32> = chunk
                .iter()
                .flat_map(|&i| {
                    targets[i]
                        .iter()
                        .zip(model.output_mean.iter().zip(&model.output_std))
                        .map(|(&t, (&m, &s))| ((t - f64::from(m)) / f64::from(s)) as f32)
                })
                .collect();
            let tape = Tape::new();
            let (out, params) = model.graph(&tape, model.normalized_batch(&rows)?, true)?;
            let loss = out.mse(tape.constant(Tensor::new(&[chunk.len(), outputs], target)?))?;
            total += loss.item() * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            let mut slots = model.params_mut();
            for (slot, var) in slots.iter_mut().zip(&params) {
                if let Some(g) = grads.get(*var) {
                    slot.accumulate_grad(g)?;
                }
            }
            optimizer.step(&mut slots)?;
        }
        loss_history.push(total / n);
    }
    Ok(DecoderTraining { model, loss_history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn data(n: usize, k: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Vec<f32>> = (0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        // targets are a fixed linear map of the inputs
        let map: Vec<Vec<f64>> = (0..32).map(|_| (0..k).map(|_| rng.random_range(-0.1..0.1)).collect()).collect();
        let targets = inputs
            .iter()
            .map(|x| map.iter().map(|m| m.iter().zip(x).map(|(a, &b)| a * f64::from(b)).sum()).collect())
            .collect();
        (inputs, targets)
    }

    fn quick(epochs: usize) -> FmriDecoderConfig {
        FmriDecoderConfig {
            epochs,
            ..FmriDecoderConfig::default()
        }
    }

    #[test]
    fn zero_initialized_net_outputs_zero() {
        let cfg = FmriDecoderConfig {
            zero_init: true,
            ..FmriDecoderConfig::default()
        };
        let model = FmriDecoder::new((0..5).collect(), vec![6, 9], &cfg).unwrap();
        let out = model.predict_capsules(&[0.0; 5]).unwrap();
        assert_eq!(out.shape(), &[2, 16]);
        assert!(out.data().iter().all(|&x| x == 0.0));
        assert!(matches!(model.predict_capsules(&[0.0; 4]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_targets_are_learned() {
        let (inputs, _) = data(30, 8, 1);
        let zeros = vec![vec![0.0; 32]; 30];
        let run = train_decoder(&inputs, &zeros, (0..8).collect(), vec![6, 9], &quick(100)).unwrap();
        assert!(run.model.mse(&inputs, &zeros).unwrap() < 1e-4);
    }

    #[test]
    fn fits_a_linear_map_and_is_deterministic() {
        let (inputs, targets) = data(90, 20, 2);
        let a = train_decoder(&inputs, &targets, (0..20).collect(), vec![6, 9], &quick(200)).unwrap();
        let b = train_decoder(&inputs, &targets, (0..20).collect(), vec![6, 9], &quick(200)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_history, b.loss_history);
        assert!(a.model.mse(&inputs, &targets).unwrap() < 1e-3);
    }

    #[test]
    fn rejects_inconsistent_pairs() {
        let (inputs, targets) = data(10, 4, 3);
        assert!(train_decoder(&inputs, &targets[..9], (0..4).collect(), vec![6, 9], &quick(1)).is_err());
        assert!(matches!(
            train_decoder(&inputs, &targets, (0..5).collect(), vec![6, 9], &quick(1)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let (inputs, targets) = data(20, 6, 4);
        let run = train_decoder(&inputs, &targets, vec![3, 1, 4, 0, 5, 9], vec![6, 9], &quick(3)).unwrap();
        let bytes = run.model.to_checkpoint().to_bytes();
        let back = FmriDecoder::from_checkpoint(&Checkpoint::from_bytes(&bytes, "m").unwrap()).unwrap();
        assert_eq!(back, run.model);
    }
}
