//! Command-line front end: one subcommand per pipeline stage.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::capsnet::{accuracy, CapsNet, CapsNetConfig, TrainConfig, Trainer};
use crate::checkpoint::Checkpoint;
use crate::data_io::{
    kfold_split, load_fmri_csv, load_mnist_dir, select_stimuli, synthesize_fmri, write_fmri_csv, MnistSplit,
    SynthConfig, VoxelDataset,
};
use crate::encoding::{build_encoding, EncodingModel};
use crate::error::{Error, Result};
use crate::fmri_decoder::{train_decoder, FmriDecoder, FmriDecoderConfig};
use crate::image::Image;
use crate::metrics::{MetricTriple, SsimConfig};
use crate::pipeline::{
    cross_validate, reconstruct_from_fmri, theoretical_reconstruction, write_pgm, write_reconstructions, CvConfig,
};
use crate::tensor::AdamConfig;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "CAPSDEC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "capsdec", version, about = "Capsule-network reconstruction of visual stimuli from fMRI")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the capsule network on MNIST and write a checkpoint.
    TrainCapsnet(TrainCapsnetArgs),
    /// Simulate voxel responses to MNIST test digits and write a CSV.
    Simulate(SimulateArgs),
    /// Fit the per-voxel encoding model and select the top-k voxels.
    Encode(EncodeArgs),
    /// Train the voxel-to-capsule decoder.
    TrainDecoder(TrainDecoderArgs),
    /// Cross-validate the voxel stage and write metric tables and images.
    Evaluate(EvaluateArgs),
    /// Reconstruct stimuli from voxel rows with trained models.
    Reconstruct(ReconstructArgs),
}

#[derive(Debug, Args)]
pub struct TrainCapsnetArgs {
    /// Directory with the MNIST IDX files (raw or .gz).
    #[arg(long)]
    pub mnist_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Train on only the first N training images.
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub capsnet: PathBuf,
    /// Directory with the MNIST test files the stimuli are drawn from.
    #[arg(long)]
    pub mnist_dir: PathBuf,
    /// Number of stimuli, split evenly between 6s and 9s.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0.25)]
    pub sigma: f64,
    #[arg(long, default_value_t = 100)]
    pub signal: usize,
    #[arg(long, default_value_t = 3092)]
    pub voxels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Restricts fitting to the training part of one fold.
#[derive(Debug, Args)]
pub struct HoldoutArgs {
    /// Leave out this fold when fitting.
    #[arg(long)]
    pub holdout_fold: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Seed of the fold assignment.
    #[arg(long, default_value_t = 0)]
    pub fold_seed: u64,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub capsnet: PathBuf,
    #[arg(long)]
    pub fmri: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[command(flatten)]
    pub holdout: HoldoutArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainDecoderArgs {
    #[arg(long)]
    pub capsnet: PathBuf,
    #[arg(long)]
    pub encoding: PathBuf,
    #[arg(long)]
    pub fmri: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Candidate classes, comma separated.
    #[arg(long, default_value = "6,9", value_delimiter = ',')]
    pub classes: Vec<usize>,
    #[command(flatten)]
    pub holdout: HoldoutArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub capsnet: PathBuf,
    #[arg(long)]
    pub fmri: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub decoder_epochs: usize,
    #[arg(long, default_value = "6,9", value_delimiter = ',')]
    pub classes: Vec<usize>,
    #[arg(long, default_value_t = 7)]
    pub ssim_window: usize,
    /// Skip writing per-sample PGM images.
    #[arg(long)]
    pub no_images: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub capsnet: PathBuf,
    #[arg(long)]
    pub encoding: PathBuf,
    #[arg(long)]
    pub decoder: PathBuf,
    #[arg(long)]
    pub fmri: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub ssim_window: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Sizes the global worker pool from [`THREADS_ENV`], if set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
    // a pool that is already initialized keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Executes one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    println!("resolved config: {:#?}", cli.command);
    match cli.command {
        Command::TrainCapsnet(a) => train_capsnet(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Encode(a) => encode(&a),
        Command::TrainDecoder(a) => train_decoder_cmd(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Reconstruct(a) => reconstruct(&a),
    }
}

fn load_capsnet(path: &Path) -> Result<CapsNet> {
    CapsNet::from_checkpoint(&Checkpoint::load(path)?)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_capsnet(a: &TrainCapsnetArgs) -> Result<()> {
    let mut train = load_mnist_dir(&a.mnist_dir, MnistSplit::Train)?;
    let test = load_mnist_dir(&a.mnist_dir, MnistSplit::Test)?;
    if let Some(limit) = a.train_limit {
        train.truncate(limit);
    }
    println!("{} training images, {} test images", train.len(), test.len());
    let mut model = CapsNet::new(CapsNetConfig::default(), a.seed)?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        adam: AdamConfig {
            learning_rate: a.learning_rate,
            ..AdamConfig::default()
        },
    };
    let mut trainer = Trainer::new(config)?;
    if a.epochs > 0 && train.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    for _ in 0..a.epochs {
        let r = trainer.epoch(&mut model, &train)?;
        println!(
            "epoch {:>3}  loss {:.6}  margin {:.6}  recon_mse {:.6}  test_accuracy {:.4}",
            r.epoch,
            r.loss.total,
            r.loss.margin,
            r.loss.reconstruction,
            accuracy(&model, &test)?
        );
    }
    if a.epochs == 0 {
        println!("test_accuracy {:.4}", accuracy(&model, &test)?);
    }
    create_parent(&a.out)?;
    model.to_checkpoint().save(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let capsnet = load_capsnet(&a.capsnet)?;
    if a.n == 0 || a.n % 2 != 0 {
        return Err(Error::Config(format!("--n {} must be a positive even number", a.n)));
    }
    let pool = load_mnist_dir(&a.mnist_dir, MnistSplit::Test)?;
    let stimuli = select_stimuli(&pool, &[6, 9], a.n / 2, a.seed)?;
    let cfg = SynthConfig {
        signal_count: a.signal,
        noise_sigma: a.sigma,
        seed: a.seed,
        voxel_count: a.voxels,
    };
    let dataset = synthesize_fmri(&capsnet, &stimuli, &cfg)?;
    create_parent(&a.out)?;
    write_fmri_csv(&a.out, &dataset)?;
    println!(
        "wrote {} samples x {} voxels ({}) to {}",
        dataset.len(),
        dataset.voxel_count(),
        dataset.provenance(),
        a.out.display()
    );
    Ok(())
}

/// Sample indices used for fitting under the hold-out options.
fn training_indices(dataset: &VoxelDataset, h: &HoldoutArgs) -> Result<Vec<usize>> {
    match h.holdout_fold {
        None => Ok((0..dataset.len()).collect()),
        Some(f) => {
            if f >= h.folds {
                return Err(Error::Config(format!("--holdout-fold {f} outside 0..{}", h.folds)));
            }
            let folds = kfold_split(dataset.len(), h.folds, h.fold_seed, &dataset.labels())?;
            Ok((0..dataset.len()).filter(|&i| folds[i] != f).collect())
        }
    }
}

fn encode(a: &EncodeArgs) -> Result<()> {
    let capsnet = load_capsnet(&a.capsnet)?;
    let dataset = load_fmri_csv(&a.fmri)?;
    let train = training_indices(&dataset, &a.holdout)?;
    let samples = dataset.samples();
    let images: Vec<&Image> = train.iter().map(|&i| &samples[i].image).collect();
    let outputs = capsnet.forward_images(&images)?;
    let features: Vec<Vec<f64>> = train
        .iter()
        .zip(&outputs)
        .map(|(&i, o)| o.capsule(usize::from(samples[i].label)).to_vec())
        .collect();
    let rows: Vec<&[f32]> = train.iter().map(|&i| samples[i].voxels.as_slice()).collect();
    let model = build_encoding(&features, &rows, a.k)?;
    println!("fitted {} voxels on {} samples", model.voxel_count(), train.len());
    for (rank, &v) in model.selected().iter().take(10).enumerate() {
        println!("  rank {:>3}  voxel {:>5}  r2 {:.6}", rank + 1, v, model.r2()[v]);
    }
    create_parent(&a.out)?;
    model.to_checkpoint().save(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn train_decoder_cmd(a: &TrainDecoderArgs) -> Result<()> {
    let capsnet = load_capsnet(&a.capsnet)?;
    let encoder = EncodingModel::from_checkpoint(&Checkpoint::load(&a.encoding)?)?;
    let dataset = load_fmri_csv(&a.fmri)?;
    let train = training_indices(&dataset, &a.holdout)?;
    let samples = dataset.samples();
    let images: Vec<&Image> = train.iter().map(|&i| &samples[i].image).collect();
    let outputs = capsnet.forward_images(&images)?;
    if let Some(c) = a.classes.iter().find(|&&c| c >= capsnet.config().num_classes) {
        return Err(Error::Config(format!("class {c} not produced by the network")));
    }
    let targets: Vec<Vec<f64>> = outputs
        .iter()
        .map(|o| a.classes.iter().flat_map(|&c| o.capsule(c).to_vec()).collect())
        .collect();
    let inputs: Vec<Vec<f32>> = train
        .iter()
        .map(|&i| encoder.select(&samples[i].voxels))
        .collect::<Result<_>>()?;
    let config = FmriDecoderConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        capsule_dim: capsnet.config().digit_dim,
        ..FmriDecoderConfig::default()
    };
    let run = train_decoder(&inputs, &targets, encoder.selected().to_vec(), a.classes.clone(), &config)?;
    if let Some(last) = run.loss_history.last() {
        println!("final epoch training mse {last:.6}");
    }
    println!("training-set mse {:.6}", run.model.mse(&inputs, &targets)?);
    create_parent(&a.out)?;
    run.model.to_checkpoint().save(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn ssim_config(window: usize) -> SsimConfig {
    SsimConfig {
        window,
        ..SsimConfig::default()
    }
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let capsnet = load_capsnet(&a.capsnet)?;
    let dataset = load_fmri_csv(&a.fmri)?;
    let config = CvConfig {
        folds: a.folds,
        seed: a.seed,
        k: a.k,
        candidate_classes: a.classes.clone(),
        decoder: FmriDecoderConfig {
            epochs: a.decoder_epochs,
            seed: a.seed,
            ..FmriDecoderConfig::default()
        },
        ssim: ssim_config(a.ssim_window),
    };
    let cv = cross_validate(&capsnet, &dataset, &config)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_text(&a.out.join("metrics.csv"), &cv.predicted_table())?;
    write_text(&a.out.join("theoretical.csv"), &cv.theoretical_table())?;
    write_text(&a.out.join("samples.csv"), &cv.sample_table())?;
    write_text(&a.out.join("table2.txt"), &cv.table2())?;
    if !a.no_images {
        write_reconstructions(a.out.join("images"), &cv.samples)?;
    }
    print!("{}", cv.predicted_table());
    println!("class accuracy {:.4}", cv.class_accuracy());
    print!("{}", cv.table2());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let capsnet = load_capsnet(&a.capsnet)?;
    let encoder = EncodingModel::from_checkpoint(&Checkpoint::load(&a.encoding)?)?;
    let decoder = FmriDecoder::from_checkpoint(&Checkpoint::load(&a.decoder)?)?;
    let dataset = load_fmri_csv(&a.fmri)?;
    let ssim = ssim_config(a.ssim_window);
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut table = String::from("sample,label,chosen_class,mse,pcc,ssim\n");
    for (i, s) in dataset.samples().iter().enumerate() {
        let (class, predicted) = reconstruct_from_fmri(&capsnet, &encoder, &decoder, &s.voxels)?;
        let (_, theory) = theoretical_reconstruction(&capsnet, &s.image)?;
        let m = MetricTriple::between_lenient(&predicted, &s.image, &ssim)?;
        table.push_str(&format!(
            "{i},{},{class},{:.6},{:.6},{:.6}\n",
            s.label, m.mse, m.pcc, m.ssim
        ));
        write_pgm(a.out.join(format!("{i:03}_stim.pgm")), &s.image)?;
        write_pgm(a.out.join(format!("{i:03}_theory.pgm")), &theory)?;
        write_pgm(a.out.join(format!("{i:03}_pred.pgm")), &predicted)?;
    }
    write_text(&a.out.join("reconstructions.csv"), &table)?;
    print!("{table}");
    println!("wrote {}", a.out.display());
    Ok(())
}
