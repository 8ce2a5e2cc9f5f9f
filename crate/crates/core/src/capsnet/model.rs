use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::CapsNetConfig;
use super::loss::margin_loss_graph;
use super::routing::{argmax_first, route, DigitCapsOutput};
use super::squash::squash;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{ParamInit, Scalar, Tape, Tensor, Var};

/// Batch size used when running inference over many images.
const INFERENCE_BATCH: usize = 25;

/// One fully connected layer, `y = x·W + b` with `W` stored `[in × out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T: Scalar> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Capsule network with a reconstruction decoder.
///
/// Parameters, in order: Conv1 kernels and bias, PrimaryCaps kernels and
/// bias, the per-pair routing transforms `W_ij` (`[I × J × D × E]`), and the
/// decoder layers.
#[derive(Clone, Debug, PartialEq)]
pub struct CapsNet<T: Scalar = f32> {
    config: CapsNetConfig,
    seed: u64,
    epochs_trained: usize,
    conv1_kernels: Tensor<T>,
    conv1_bias: Tensor<T>,
    primary_kernels: Tensor<T>,
    primary_bias: Tensor<T>,
    routing_weights: Tensor<T>,
    decoder: Vec<DenseLayer<T>>,
}

/// Loss terms of one batch recorded on a tape.
pub struct LossGraph<'t, T: Scalar> {
    pub total: Var<'t, T>,
    pub margin: Var<'t, T>,
    pub reconstruction: Var<'t, T>,
    pub lengths: Var<'t, T>,
}

impl<T: Scalar> CapsNet<T> {
    /// Freshly initialized network; `seed` drives every weight draw.
    pub fn new(config: CapsNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let k1 = c.conv1_kernel;
        let k2 = c.primary_kernel;
        let fan_in = |n| ParamInit::FanIn { fan_in: n, cap: 0.1 };

        let conv1_kernels = fan_in(k1 * k1).build(&[c.conv1_channels, 1, k1, k1], &mut rng);
        let primary_kernels = fan_in(c.conv1_channels * k2 * k2)
            .build(&[c.primary_channels(), c.conv1_channels, k2, k2], &mut rng);
        let routing_weights = ParamInit::TruncatedNormal { std: 0.05 }.build(
            &[c.num_primary_capsules(), c.num_classes, c.digit_dim, c.primary_dim],
            &mut rng,
        );
        let mut widths = vec![c.decoder_input()];
        widths.extend(&c.decoder_hidden);
        widths.push(c.pixels());
        let decoder = widths
            .windows(2)
            .map(|w| DenseLayer {
                weights: fan_in(w[0]).build(&[w[0], w[1]], &mut rng),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();

        let mut model = Self {
            conv1_bias: Tensor::zeros(&[c.conv1_channels]),
            primary_bias: Tensor::zeros(&[c.primary_channels()]),
            config,
            seed,
            epochs_trained: 0,
            conv1_kernels,
            primary_kernels,
            routing_weights,
            decoder,
        };
        model.set_trainable(true);
        Ok(model)
    }

    pub fn config(&self) -> &CapsNetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epochs_trained(&self) -> usize {
        self.epochs_trained
    }

    pub(crate) fn add_epoch(&mut self) {
        self.epochs_trained += 1;
    }

    pub fn set_trainable(&mut self, flag: bool) {
        for p in self.parameters_mut() {
            p.set_requires_grad(flag);
        }
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = [
            "conv1.kernels",
            "conv1.bias",
            "primary.kernels",
            "primary.bias",
            "digit.routing_weights",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for l in 0..self.decoder.len() {
            names.push(format!("decoder.{l}.weights"));
            names.push(format!("decoder.{l}.bias"));
        }
        names
    }

    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![
            &self.conv1_kernels,
            &self.conv1_bias,
            &self.primary_kernels,
            &self.primary_bias,
            &self.routing_weights,
        ];
        for layer in &self.decoder {
            out.push(&layer.weights);
            out.push(&layer.bias);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![
            &mut self.conv1_kernels,
            &mut self.conv1_bias,
            &mut self.primary_kernels,
            &mut self.primary_bias,
            &mut self.routing_weights,
        ];
        for layer in &mut self.decoder {
            out.push(&mut layer.weights);
            out.push(&mut layer.bias);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.parameters().iter().all(|p| p.all_finite())
    }

    /// Same network with every parameter converted to another precision.
    pub fn cast<U: Scalar>(&self) -> CapsNet<U> {
        CapsNet {
            config: self.config.clone(),
            seed: self.seed,
            epochs_trained: self.epochs_trained,
            conv1_kernels: self.conv1_kernels.cast(),
            conv1_bias: self.conv1_bias.cast(),
            primary_kernels: self.primary_kernels.cast(),
            primary_bias: self.primary_bias.cast(),
            routing_weights: self.routing_weights.cast(),
            decoder: self
                .decoder
                .iter()
                .map(|l| DenseLayer {
                    weights: l.weights.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    /// Records every parameter on `tape`, in [`CapsNet::parameters`] order.
    /// With `trainable == false` they are recorded as constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Vec<Var<'t, T>> {
        self.parameters()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.param(p)
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    /// Stacks images into a `[B × 1 × H × W]` tensor.
    pub fn batch_tensor(&self, images: &[&Image]) -> Result<Tensor<T>> {
        let s = self.config.image_size;
        let mut data = Vec::with_capacity(images.len() * s * s);
        for img in images {
            if img.width() != s || img.height() != s {
                return Err(Error::dim("CapsNet input", &[img.height(), img.width()], &[s, s]));
            }
            data.extend(img.pixels().iter().map(|&p| T::from_f64_lossy(f64::from(p))));
        }
        Tensor::new(&[images.len(), 1, s, s], data)
    }

    /// Digit capsules `[B × J × D]` for a `[B × 1 × H × W]` batch.
    pub fn digit_caps_graph<'t>(&self, params: &[Var<'t, T>], images: Var<'t, T>) -> Result<Var<'t, T>> {
        let c = &self.config;
        let shape = images.shape();
        let s = c.image_size;
        if shape.len() != 4 || shape[1..] != [1, s, s] {
            return Err(Error::dim("CapsNet input", &shape, &[0, 1, s, s]));
        }
        let b = shape[0];
        let grid = c.primary_grid() * c.primary_grid();
        let (ni, nj, nd, ne) = (c.num_primary_capsules(), c.num_classes, c.digit_dim, c.primary_dim);

        let features = images.conv2d(params[0], params[1], 1)?.relu();
        let primary = features.conv2d(params[2], params[3], c.primary_stride)?;
        // channel m·E + e of map position p becomes component e of capsule m·grid + p
        let u = primary
            .reshape(&[b, c.primary_maps, ne, grid])?
            .permute(&[0, 1, 3, 2])?
            .reshape(&[b, ni, ne])?;
        let u = squash(u);
        let u_hat = params[4]
            .reshape(&[ni, nj * nd, ne])?
            .bmm(u.permute(&[1, 2, 0])?)?
            .reshape(&[ni, nj, nd, b])?
            .permute(&[3, 1, 0, 2])?;
        Ok(route(u_hat, c.routing_iterations)?.capsules)
    }

    /// Decoder output `[B × pixels]` from capsules `[B × J × D]`, keeping
    /// only capsule `classes[b]` of each sample.
    pub fn decoder_graph<'t>(
        &self,
        params: &[Var<'t, T>],
        capsules: Var<'t, T>,
        classes: &[usize],
    ) -> Result<Var<'t, T>> {
        let (nj, nd) = (self.config.num_classes, self.config.digit_dim);
        let b = classes.len();
        if capsules.shape() != [b, nj, nd] {
            return Err(Error::dim("decoder input", &capsules.shape(), &[b, nj, nd]));
        }
        let mut mask = vec![T::zero(); b * nj * nd];
        for (n, &class) in classes.iter().enumerate() {
            self.check_class(class)?;
            mask[(n * nj + class) * nd..][..nd].fill(T::one());
        }
        let mask = capsules.tape().constant(Tensor::new(&[b, nj, nd], mask)?);
        let mut x = capsules.mul(mask)?.reshape(&[b, nj * nd])?;
        let layers = self.decoder.len();
        for l in 0..layers {
            x = x.matmul(params[5 + 2 * l])?.add_bias(params[6 + 2 * l])?;
            x = if l + 1 < layers { x.relu() } else { x.sigmoid() };
        }
        Ok(x)
    }

    /// Batch loss: mean over samples of margin loss plus `mu` times the
    /// per-pixel reconstruction MSE, the decoder conditioned on `labels`.
    pub fn loss_graph<'t>(
        &self,
        params: &[Var<'t, T>],
        images: Var<'t, T>,
        labels: &[usize],
    ) -> Result<LossGraph<'t, T>> {
        let capsules = self.digit_caps_graph(params, images)?;
        let lengths = capsules.norm_last();
        let margin = margin_loss_graph(lengths, labels, &self.config)?;
        let recon = self.decoder_graph(params, capsules, labels)?;
        let target = images.reshape(&[labels.len(), self.config.pixels()])?;
        let reconstruction = recon.mse(target)?;
        let total = margin.add(reconstruction.scale(self.config.mu))?;
        Ok(LossGraph {
            total,
            margin,
            reconstruction,
            lengths,
        })
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.config.num_classes {
            return Err(Error::Domain(format!(
                "class {class} outside 0..{}",
                self.config.num_classes
            )));
        }
        Ok(())
    }

    /// Digit capsules of a single `[1 × H × W]` image.
    pub fn forward(&self, image: &Tensor<T>) -> Result<DigitCapsOutput> {
        let s = self.config.image_size;
        if image.shape() != [1, s, s] {
            return Err(Error::dim("CapsNet::forward", image.shape(), &[1, s, s]));
        }
        let batch = image.clone().reshape(&[1, 1, s, s])?;
        Ok(self.forward_tensor(batch)?.remove(0))
    }

    fn forward_tensor(&self, batch: Tensor<T>) -> Result<Vec<DigitCapsOutput>> {
        let tape = Tape::new();
        let params = self.bind(&tape, false);
        let images = tape.constant(batch);
        let caps = self.digit_caps_graph(&params, images)?.to_tensor();
        let (j, d) = (self.config.num_classes, self.config.digit_dim);
        Ok(caps
            .to_f64_vec()
            .chunks(j * d)
            .map(|c| DigitCapsOutput::from_capsules(Tensor::new(&[j, d], c.to_vec()).expect("shape")))
            .collect())
    }

    /// Digit capsules for many images, evaluated in fixed-size batches.
    pub fn forward_images(&self, images: &[&Image]) -> Result<Vec<DigitCapsOutput>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFERENCE_BATCH) {
            out.extend(self.forward_tensor(self.batch_tensor(chunk)?)?);
        }
        Ok(out)
    }

    /// Reconstructs an image from `[J × D]` capsules using only capsule
    /// `selected`; every pixel lies in `(0, 1)`.
    pub fn decode(&self, capsules: &Tensor<f64>, selected: usize) -> Result<Image> {
        let (j, d) = (self.config.num_classes, self.config.digit_dim);
        self.check_class(selected)?;
        if capsules.shape() != [j, d] {
            return Err(Error::dim("CapsNet::decode", capsules.shape(), &[j, d]));
        }
        let tape = Tape::new();
        let params = self.bind(&tape, false);
        let caps = tape.constant(capsules.cast::<T>().reshape(&[1, j, d])?);
        let out = self.decoder_graph(&params, caps, &[selected])?.to_tensor();
        let s = self.config.image_size;
        Image::from_tensor(&out.reshape(&[s, s])?)
    }

    /// Predicted class: the longest capsule, lowest index on ties.
    pub fn classify(&self, image: &Tensor<T>) -> Result<usize> {
        Ok(argmax_first(&self.forward(image)?.lengths))
    }

    /// Overall loss of a single labelled image.
    pub fn overall_loss(&self, image: &Tensor<T>, label: usize) -> Result<f64> {
        let s = self.config.image_size;
        if image.shape() != [1, s, s] {
            return Err(Error::dim("CapsNet::overall_loss", image.shape(), &[1, s, s]));
        }
        self.check_class(label)?;
        let tape = Tape::new();
        let params = self.bind(&tape, false);
        let images = tape.constant(image.clone().reshape(&[1, 1, s, s])?);
        Ok(self.loss_graph(&params, images, &[label])?.total.item())
    }
}

impl CapsNet<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        ckpt.set("kind", "capsnet")
            .set("seed", self.seed)
            .set("epochs", self.epochs_trained);
        for (k, v) in self.config.to_pairs() {
            ckpt.set(k, v);
        }
        for (name, p) in self.parameter_names().into_iter().zip(self.parameters()) {
            ckpt.push_tensor(name, p.clone());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.get("kind") != Some("capsnet") {
            return Err(Error::Config("checkpoint does not hold a capsnet".into()));
        }
        let config = CapsNetConfig::from_lookup(|k| ckpt.get(k))?;
        let seed = ckpt.parse("seed")?;
        let mut model = Self::new(config, seed)?;
        model.epochs_trained = ckpt.parse("epochs")?;
        let names = model.parameter_names();
        for (name, param) in names.iter().zip(model.parameters_mut()) {
            let stored = ckpt.expect_tensor(name, param.shape())?;
            param.data_mut().copy_from_slice(stored.data());
        }
        Ok(model)
    }
}
