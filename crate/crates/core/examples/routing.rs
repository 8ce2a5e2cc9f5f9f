//! Dynamic routing on random predictions: couplings per round and the
//! resulting capsule lengths.
//!
//! ```text
//! cargo run --example routing -- [iterations=3] [seed=0]
//! ```

use capsdec::capsnet::route;
use capsdec::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> capsdec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iterations: usize = args.first().map_or(3, |s| s.parse().expect("iterations"));
    let seed: u64 = args.get(1).map_or(0, |s| s.parse().expect("seed"));
    let (upper, lower, dim) = (3, 6, 4);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // lower capsules 0..3 agree on upper capsule 0; the rest are noise
    let shared: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut data = Vec::with_capacity(upper * lower * dim);
    for j in 0..upper {
        for i in 0..lower {
            for k in 0..dim {
                let noise = rng.random_range(-0.3..0.3);
                data.push(if j == 0 && i < 3 { shared[k] + 0.1 * noise } else { noise });
            }
        }
    }
    let tape = Tape::new();
    let u_hat = tape.constant(Tensor::new(&[1, upper, lower, dim], data)?);
    let routed = route(u_hat, iterations)?;

    for (round, c) in routed.couplings.iter().enumerate() {
        println!("round {}: couplings c[j][i]", round + 1);
        for j in 0..upper {
            let row: Vec<String> = (0..lower).map(|i| format!("{:.3}", c.get(&[0, j, i]))).collect();
            println!("  upper {j}: {}", row.join(" "));
        }
    }
    let lengths = routed.capsules.norm_last().to_tensor();
    println!("capsule lengths: {:?}", lengths.data());
    Ok(())
}
