//! Shared fixtures: the bundled MNIST subset and a capsule network trained
//! on it once, cached under the cargo target directory.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Instant;

use capsdec::capsnet::{accuracy, CapsNet, CapsNetConfig, TrainConfig, Trainer};
use capsdec::checkpoint::Checkpoint;
use capsdec::data_io::{load_mnist_dir, select_stimuli, MnistSplit};
use capsdec::image::LabeledImage;

/// Training seed of the cached network.
pub const SEED: u64 = 0;
/// Epochs of the smoke-scale run.
pub const SMOKE_EPOCHS: usize = 3;
/// Epochs of the longer run standing in for full training.
pub const REFERENCE_EPOCHS: usize = 10;
/// Set to any value to ignore cached checkpoints and retrain.
pub const RETRAIN_ENV: &str = "CAPSDEC_RETRAIN";

pub fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-10k")
}

pub fn mnist(split: MnistSplit) -> Vec<LabeledImage> {
    load_mnist_dir(mnist_dir(), split).expect("bundled MNIST subset")
}

/// The 50 sixes and 50 nines used as stimuli throughout.
pub fn stimuli(seed: u64) -> Vec<LabeledImage> {
    select_stimuli(&mnist(MnistSplit::Test), &[6, 9], 50, seed).expect("enough sixes and nines")
}

fn cache_path(epochs: usize) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("capsnet-seed{SEED}-epoch{epochs}.ckpt"))
}

/// Network after `epochs` epochs on the bundled training split with the
/// default configuration. Training runs from scratch when the snapshot is
/// missing and stores every intermediate epoch along the way.
pub fn trained_capsnet(epochs: usize) -> CapsNet {
    let path = cache_path(epochs);
    if std::env::var_os(RETRAIN_ENV).is_none() {
        if let Ok(ckpt) = Checkpoint::load(&path) {
            if let Ok(model) = CapsNet::from_checkpoint(&ckpt) {
                if model.epochs_trained() == epochs && model.seed() == SEED {
                    return model;
                }
            }
        }
    }
    let train = mnist(MnistSplit::Train);
    let test = mnist(MnistSplit::Test);
    let mut model = CapsNet::new(CapsNetConfig::default(), SEED).unwrap();
    let mut trainer = Trainer::new(TrainConfig {
        epochs,
        seed: SEED,
        ..TrainConfig::default()
    })
    .unwrap();
    eprintln!("training capsule network: {} images, {epochs} epochs", train.len());
    for _ in 0..epochs {
        let start = Instant::now();
        let r = trainer.epoch(&mut model, &train).unwrap();
        eprintln!(
            "  epoch {} loss {:.5} test accuracy {:.4} [{:.0?}]",
            r.epoch,
            r.loss.total,
            accuracy(&model, &test).unwrap(),
            start.elapsed()
        );
        model.to_checkpoint().save(cache_path(r.epoch)).unwrap();
    }
    model
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    (values[(n - 1) / 2] + values[n / 2]) / 2.0
}
