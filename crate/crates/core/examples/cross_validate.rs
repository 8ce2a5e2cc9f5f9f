//! Simulated-fMRI experiment end to end: planted voxels, encoding-model
//! recovery, and k-fold reconstruction metrics.
//!
//! ```text
//! cargo run --release --example cross_validate -- <capsnet.ckpt> [mnist-dir] [sigma=0.25] [seed=0] [decoder-epochs=200]
//! ```

use std::collections::HashSet;
use std::path::PathBuf;

use capsdec::capsnet::CapsNet;
use capsdec::checkpoint::Checkpoint;
use capsdec::data_io::{load_mnist_dir, select_stimuli, synthesize_fmri, MnistSplit, Provenance, SynthConfig};
use capsdec::encoding::build_encoding;
use capsdec::fmri_decoder::FmriDecoderConfig;
use capsdec::image::Image;
use capsdec::pipeline::{cross_validate, CvConfig};

fn main() -> capsdec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ckpt = args.first().expect("usage: cross_validate <capsnet.ckpt> [mnist-dir] [sigma] [seed] [epochs]");
    let mnist = args
        .get(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-10k"));
    let sigma: f64 = args.get(2).map_or(0.25, |s| s.parse().expect("sigma"));
    let seed: u64 = args.get(3).map_or(0, |s| s.parse().expect("seed"));
    let epochs: usize = args.get(4).map_or(200, |s| s.parse().expect("epochs"));

    let capsnet = CapsNet::from_checkpoint(&Checkpoint::load(ckpt)?)?;
    let pool = load_mnist_dir(&mnist, MnistSplit::Test)?;
    let stimuli = select_stimuli(&pool, &[6, 9], 50, seed)?;
    let synth = SynthConfig {
        noise_sigma: sigma,
        seed,
        ..SynthConfig::default()
    };
    let dataset = synthesize_fmri(&capsnet, &stimuli, &synth)?;
    println!("{} samples x {} voxels, {}", dataset.len(), dataset.voxel_count(), dataset.provenance());

    let images: Vec<&Image> = dataset.samples().iter().map(|s| &s.image).collect();
    let outputs = capsnet.forward_images(&images)?;
    let features: Vec<Vec<f64>> = dataset
        .samples()
        .iter()
        .zip(&outputs)
        .map(|(s, o)| o.capsule(usize::from(s.label)).to_vec())
        .collect();
    let rows: Vec<&[f32]> = dataset.samples().iter().map(|s| s.voxels.as_slice()).collect();
    let encoding = build_encoding(&features, &rows, synth.signal_count)?;
    if let Provenance::Synthetic { signal_voxels, .. } = dataset.provenance() {
        let planted: HashSet<usize> = signal_voxels.iter().copied().collect();
        let hits = encoding.selected().iter().filter(|v| planted.contains(v)).count();
        println!("top-{} overlap with planted voxels: {hits}/{}", synth.signal_count, planted.len());
    }

    let config = CvConfig {
        seed,
        decoder: FmriDecoderConfig {
            epochs,
            seed,
            ..FmriDecoderConfig::default()
        },
        ..CvConfig::default()
    };
    let cv = cross_validate(&capsnet, &dataset, &config)?;
    let mut theory: Vec<f64> = cv.samples.iter().map(|r| r.theoretical_metrics.ssim).collect();
    theory.sort_by(f64::total_cmp);
    println!("median theoretical ssim {:.4}", (theory[49] + theory[50]) / 2.0);
    print!("{}", cv.predicted_table());
    println!("chosen-class accuracy {:.4}", cv.class_accuracy());

    let dims = cv.samples[0].target_capsules.numel();
    let column = |dim: usize, predicted: bool| -> Vec<f64> {
        cv.samples
            .iter()
            .map(|r| if predicted { &r.predicted_capsules } else { &r.target_capsules }.data()[dim])
            .collect()
    };
    let corr: Vec<f64> = (0..dims)
        .map(|dim| pearson(&column(dim, true), &column(dim, false)))
        .collect();
    println!(
        "held-out capsule correlation per dimension: min {:.4}  mean {:.4}",
        corr.iter().copied().fold(f64::INFINITY, f64::min),
        corr.iter().sum::<f64>() / dims as f64
    );
    let d = cv.samples[0].target_capsules.shape()[1];
    let norms: Vec<f64> = cv
        .samples
        .iter()
        .flat_map(|r| r.predicted_capsules.data().chunks(d).map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()))
        .collect();
    println!(
        "predicted capsule norms in [{:.4}, {:.4}]",
        norms.iter().copied().fold(f64::INFINITY, f64::min),
        norms.iter().copied().fold(0.0, f64::max)
    );
    print!("{}", cv.table2());
    Ok(())
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
