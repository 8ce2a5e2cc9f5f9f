//! Trains the capsule network on MNIST, saving a checkpoint after every epoch.
//!
//! ```text
//! cargo run --release --example train_capsnet -- [mnist-dir] [epochs] [out.ckpt]
//! ```
//!
//! Defaults: the bundled `data/mnist-10k` subset, 3 epochs, `capsnet.ckpt`.

use std::time::Instant;

use capsdec::capsnet::{accuracy, CapsNet, CapsNetConfig, TrainConfig, Trainer};
use capsdec::data_io::{load_mnist_dir, MnistSplit};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-10k").to_string());
    let epochs: usize = args.next().map_or(Ok(3), |s| s.parse())?;
    let out = args.next().unwrap_or_else(|| "capsnet.ckpt".to_string());

    let train = load_mnist_dir(&dir, MnistSplit::Train)?;
    let test = load_mnist_dir(&dir, MnistSplit::Test)?;
    println!("{} training / {} test digits from {dir}", train.len(), test.len());

    let mut model = CapsNet::new(CapsNetConfig::default(), 0)?;
    let config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config)?;
    for _ in 0..epochs {
        let start = Instant::now();
        let report = trainer.epoch(&mut model, &train)?;
        println!(
            "epoch {:>2}  loss {:.5} (margin {:.5}, recon mse {:.5})  test acc {:.2}%  [{:.0?}]",
            report.epoch,
            report.loss.total,
            report.loss.margin,
            report.loss.reconstruction,
            100.0 * accuracy(&model, &test)?,
            start.elapsed()
        );
        model.to_checkpoint().save(&out)?;
    }
    if epochs == 0 {
        model.to_checkpoint().save(&out)?;
    }
    println!("saved {out}");
    Ok(())
}
