//! The voxel pipeline one stage at a time on a single train/test split:
//! encoding model, voxel selection, decoder training and reconstruction.
//!
//! ```text
//! cargo run --release --example staged_pipeline -- <capsnet.ckpt> [mnist-dir] [sigma=0.25]
//! ```

use std::path::PathBuf;

use capsdec::capsnet::CapsNet;
use capsdec::checkpoint::Checkpoint;
use capsdec::data_io::{kfold_split, load_mnist_dir, select_stimuli, synthesize_fmri, MnistSplit, SynthConfig};
use capsdec::encoding::{build_encoding, EncodingModel};
use capsdec::fmri_decoder::{train_decoder, FmriDecoder, FmriDecoderConfig};
use capsdec::image::Image;
use capsdec::metrics::{MetricTriple, SsimConfig};
use capsdec::pipeline::reconstruct_from_fmri;

fn main() -> capsdec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ckpt = args.first().expect("usage: staged_pipeline <capsnet.ckpt> [mnist-dir] [sigma]");
    let mnist = args
        .get(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-10k"));
    let sigma: f64 = args.get(2).map_or(0.25, |s| s.parse().expect("sigma"));

    let capsnet = CapsNet::from_checkpoint(&Checkpoint::load(ckpt)?)?;
    let stimuli = select_stimuli(&load_mnist_dir(&mnist, MnistSplit::Test)?, &[6, 9], 50, 0)?;
    let synth = SynthConfig {
        noise_sigma: sigma,
        ..SynthConfig::default()
    };
    let data = synthesize_fmri(&capsnet, &stimuli, &synth)?;
    let folds = kfold_split(data.len(), 10, 0, &data.labels())?;
    let (train, test): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| folds[i] != 0);
    println!("{} training samples, {} held out", train.len(), test.len());

    let samples = data.samples();
    let images: Vec<&Image> = train.iter().map(|&i| &samples[i].image).collect();
    let caps = capsnet.forward_images(&images)?;
    let features: Vec<Vec<f64>> = train
        .iter()
        .zip(&caps)
        .map(|(&i, o)| o.capsule(usize::from(samples[i].label)).to_vec())
        .collect();
    let rows: Vec<&[f32]> = train.iter().map(|&i| samples[i].voxels.as_slice()).collect();
    let encoder: EncodingModel = build_encoding(&features, &rows, 100)?;
    let best = encoder.selected()[0];
    println!("encoding: best voxel {best} with r2 {:.4}", encoder.r2()[best]);

    let classes = vec![6, 9];
    let inputs: Vec<Vec<f32>> = train
        .iter()
        .map(|&i| encoder.select(&samples[i].voxels))
        .collect::<capsdec::Result<_>>()?;
    let targets: Vec<Vec<f64>> = caps
        .iter()
        .map(|o| classes.iter().flat_map(|&c| o.capsule(c).to_vec()).collect())
        .collect();
    let run = train_decoder(
        &inputs,
        &targets,
        encoder.selected().to_vec(),
        classes,
        &FmriDecoderConfig::default(),
    )?;
    let decoder: FmriDecoder = run.model;
    println!("decoder: final training mse {:.5}", run.loss_history.last().copied().unwrap_or(f64::NAN));

    let cfg = SsimConfig::default();
    for &i in &test {
        let s = &samples[i];
        let (class, recon) = reconstruct_from_fmri(&capsnet, &encoder, &decoder, &s.voxels)?;
        let m = MetricTriple::between_lenient(&recon, &s.image, &cfg)?;
        println!(
            "sample {i:>3}  label {}  chosen {class}  mse {:.4}  pcc {:.4}  ssim {:.4}",
            s.label, m.mse, m.pcc, m.ssim
        );
    }
    Ok(())
}
