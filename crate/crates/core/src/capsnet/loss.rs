use super::config::CapsNetConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// Margin loss of one sample:
/// `Σ_c T_c·max(0, m⁺−‖v_c‖)² + λ(1−T_c)·max(0, ‖v_c‖−m⁻)²`.
pub fn margin_loss(lengths: &[f64], label: usize, config: &CapsNetConfig) -> Result<f64> {
    if label >= lengths.len() {
        return Err(Error::Domain(format!(
            "label {label} outside 0..{}",
            lengths.len()
        )));
    }
    Ok(lengths
        .iter()
        .enumerate()
        .map(|(c, &l)| {
            if c == label {
                (config.m_plus - l).max(0.0).powi(2)
            } else {
                config.lambda * (l - config.m_minus).max(0.0).powi(2)
            }
        })
        .sum())
}

/// Batch mean of the margin loss for capsule lengths `[B × J]`.
pub fn margin_loss_graph<'t, T: Scalar>(
    lengths: Var<'t, T>,
    labels: &[usize],
    config: &CapsNetConfig,
) -> Result<Var<'t, T>> {
    let shape = lengths.shape();
    let [b, j] = shape[..] else {
        return Err(Error::dim("margin loss", &shape, &[labels.len(), 0]));
    };
    if b != labels.len() {
        return Err(Error::dim("margin loss", &shape, &[labels.len(), j]));
    }
    let mut present = vec![T::zero(); b * j];
    let mut absent = vec![T::one(); b * j];
    for (n, &label) in labels.iter().enumerate() {
        if label >= j {
            return Err(Error::Domain(format!("label {label} outside 0..{j}")));
        }
        present[n * j + label] = T::one();
        absent[n * j + label] = T::zero();
    }
    let tape = lengths.tape();
    let present = tape.constant(Tensor::new(&[b, j], present)?);
    let absent = tape.constant(Tensor::new(&[b, j], absent)?);
    let pos = lengths.affine(-1.0, config.m_plus).relu().square().mul(present)?;
    let neg = lengths
        .affine(1.0, -config.m_minus)
        .relu()
        .square()
        .mul(absent)?
        .scale(config.lambda);
    Ok(pos.add(neg)?.sum().scale(1.0 / b as f64))
}
