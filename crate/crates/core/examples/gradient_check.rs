//! Finite-difference check of the full training loss on a small capsule
//! network: convolutions, squash, three routing rounds and the decoder.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use capsdec::capsnet::{network_grad_check, CapsNet, CapsNetConfig};
use capsdec::image::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> capsdec::Result<()> {
    let config = CapsNetConfig::tiny();
    println!(
        "{}x{} input, {} primary capsules, {} classes",
        config.image_size,
        config.image_size,
        config.num_primary_capsules(),
        config.num_classes
    );
    let mut model = CapsNet::<f64>::new(config, 7)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for p in model.parameters_mut() {
        if p.ndim() == 1 {
            p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.05..0.05));
        }
    }
    let images: Vec<Image> = (0..2)
        .map(|_| Image::new(8, 8, (0..64).map(|_| rng.random_range(0.0..1.0)).collect()))
        .collect::<capsdec::Result<_>>()?;
    let refs: Vec<&Image> = images.iter().collect();
    for h in [1e-4, 1e-5, 1e-6] {
        let err = network_grad_check(&model, &refs, &[0, 1], h)?;
        println!("h = {h:e}: worst relative error {err:.3e}");
    }
    Ok(())
}
