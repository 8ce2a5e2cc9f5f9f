//! MSE, Pearson correlation and SSIM between a digit and distorted copies.
//!
//! ```text
//! cargo run --example image_metrics -- [mnist-dir]
//! ```

use std::path::PathBuf;

use capsdec::data_io::{load_mnist_dir, MnistSplit};
use capsdec::image::Image;
use capsdec::metrics::{MetricTriple, SsimConfig};

fn main() -> capsdec::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-10k"));
    let digits = load_mnist_dir(&dir, MnistSplit::Test)?;
    let reference = &digits[0].image;
    let (w, h) = (reference.width(), reference.height());
    let map = |f: &dyn Fn(usize, usize, f32) -> f32| -> capsdec::Result<Image> {
        let px = reference.pixels();
        Image::new(w, h, (0..w * h).map(|i| f(i % w, i / w, px[i])).collect())
    };
    let variants = [
        ("identical", reference.clone()),
        ("contrast x0.5", map(&|_, _, p| 0.5 * p + 0.25)?),
        ("inverted", map(&|_, _, p| 1.0 - p)?),
        ("shift right 2", map(&|x, y, _| if x >= 2 { reference.pixels()[y * w + x - 2] } else { 0.0 })?),
        ("blank", Image::zeros(w, h)),
        ("other digit", digits[1].image.clone()),
    ];
    let cfg = SsimConfig::default();
    println!("digit {} vs. variants", digits[0].label);
    println!("{:<16}{:>10}{:>10}{:>10}", "variant", "MSE", "PCC", "SSIM");
    for (name, img) in &variants {
        let m = MetricTriple::between_lenient(reference, img, &cfg)?;
        println!("{name:<16}{:>10.4}{:>10.4}{:>10.4}", m.mse, m.pcc, m.ssim);
    }
    Ok(())
}
