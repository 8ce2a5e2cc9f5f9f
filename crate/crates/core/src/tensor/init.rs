use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Scalar, Tensor};

/// How a parameter tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamInit {
    Zeros,
    /// Zero-mean normal with the given std, resampled beyond two std.
    TruncatedNormal { std: f64 },
    /// Truncated normal with `std = min(cap, sqrt(2 / fan_in))`.
    FanIn { fan_in: usize, cap: f64 },
}

impl ParamInit {
    pub fn std(&self) -> f64 {
        match *self {
            ParamInit::Zeros => 0.0,
            ParamInit::TruncatedNormal { std } => std,
            ParamInit::FanIn { fan_in, cap } => (2.0 / fan_in.max(1) as f64).sqrt().min(cap),
        }
    }

    pub fn build<T: Scalar, R: Rng + ?Sized>(&self, shape: &[usize], rng: &mut R) -> Tensor<T> {
        match self {
            ParamInit::Zeros => Tensor::zeros(shape),
            _ => truncated_normal(shape, self.std(), rng),
        }
    }
}

/// Samples a tensor from a zero-mean normal truncated at ±2·std.
pub fn truncated_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::from_f64_lossy(z * std);
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn truncation_bounds_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Tensor<f64> = truncated_normal(&[1000], 0.05, &mut rng);
        assert!(t.data().iter().all(|x| x.abs() <= 0.1 + 1e-15));
        let mean = t.data().iter().sum::<f64>() / 1000.0;
        assert!(mean.abs() < 0.01);
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        let u: Tensor<f64> = truncated_normal(&[1000], 0.05, &mut rng2);
        assert_eq!(t, u);
    }

    #[test]
    fn fan_in_std_is_capped() {
        assert_eq!(ParamInit::FanIn { fan_in: 81, cap: 0.1 }.std(), 0.1);
        let s = ParamInit::FanIn { fan_in: 20736, cap: 0.1 }.std();
        assert!((s - (2.0f64 / 20736.0).sqrt()).abs() < 1e-15);
    }
}
