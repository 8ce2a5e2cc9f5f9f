//! Reconstructs test digits from their own capsules (the upper bound for
//! any voxel-based reconstruction) and writes the pairs as PGM images.
//!
//! ```text
//! cargo run --release --example theoretical_reconstruction -- <capsnet.ckpt> [mnist-dir] [out-dir=theory]
//! ```

use std::path::PathBuf;

use capsdec::capsnet::CapsNet;
use capsdec::checkpoint::Checkpoint;
use capsdec::data_io::{load_mnist_dir, select_stimuli, MnistSplit};
use capsdec::metrics::ssim;
use capsdec::pipeline::{theoretical_reconstruction, write_pgm};

fn main() -> capsdec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ckpt = args.first().expect("usage: theoretical_reconstruction <capsnet.ckpt> [mnist-dir] [out-dir]");
    let mnist = args
        .get(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-10k"));
    let out = PathBuf::from(args.get(2).map_or("theory", String::as_str));
    std::fs::create_dir_all(&out).map_err(|e| capsdec::Error::Config(format!("{}: {e}", out.display())))?;

    let capsnet = CapsNet::from_checkpoint(&Checkpoint::load(ckpt)?)?;
    let digits = select_stimuli(&load_mnist_dir(&mnist, MnistSplit::Test)?, &[6, 9], 50, 0)?;
    let mut scores = Vec::with_capacity(digits.len());
    let mut correct = 0;
    for (i, d) in digits.iter().enumerate() {
        let (class, recon) = theoretical_reconstruction(&capsnet, &d.image)?;
        correct += usize::from(class == usize::from(d.label));
        scores.push(ssim(&recon, &d.image)?);
        write_pgm(out.join(format!("{i:03}_stim.pgm")), &d.image)?;
        write_pgm(out.join(format!("{i:03}_theory.pgm")), &recon)?;
    }
    scores.sort_by(f64::total_cmp);
    let n = scores.len();
    println!("{n} digits, {correct} classified correctly");
    println!(
        "ssim min {:.4}  median {:.4}  max {:.4}",
        scores[0],
        (scores[(n - 1) / 2] + scores[n / 2]) / 2.0,
        scores[n - 1]
    );
    println!("wrote {}", out.display());
    Ok(())
}
