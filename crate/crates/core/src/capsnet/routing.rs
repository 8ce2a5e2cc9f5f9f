//! Dynamic routing by agreement between a lower and an upper capsule layer.

use super::squash::squash;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Result of routing recorded on a tape.
pub struct Routed<'t, T: Scalar> {
    /// Upper-layer capsules `v`, shape `[B × J × D]`.
    pub capsules: Var<'t, T>,
    /// Coupling coefficients used at each iteration, each `[B × J × I]`.
    pub couplings: Vec<Tensor<T>>,
}

/// Routes predictions `u_hat` (layout `[B × J × I × D]`: batch, upper
/// capsule, lower capsule, upper dimension) for `iterations` rounds.
///
/// Logits start at zero. Each round takes couplings as the softmax of the
/// logits over the upper capsules, forms `s_j = Σ_i c_ij û_{j|i}`, squashes
/// it, and (except after the last round) adds the agreement `û_{j|i}·v_j`
/// to the logits. Gradients flow through every round, couplings included.
pub fn route<'t, T: Scalar>(u_hat: Var<'t, T>, iterations: usize) -> Result<Routed<'t, T>> {
    let shape = u_hat.shape();
    let [b, j, i, d] = shape[..] else {
        return Err(Error::dim("routing predictions", &shape, &[0, 0, 0, 0]));
    };
    if iterations == 0 {
        return Err(Error::Domain("routing needs at least one iteration".into()));
    }
    let tape = u_hat.tape();
    let predictions = u_hat.reshape(&[b * j, i, d])?;
    let mut logits = tape.constant(Tensor::zeros(&[b, j, i]));
    let mut couplings = Vec::with_capacity(iterations);
    let mut capsules = None;
    for round in 0..iterations {
        let c = logits.softmax(1)?;
        couplings.push(c.to_tensor());
        let s = c.reshape(&[b * j, 1, i])?.bmm(predictions)?.reshape(&[b, j, d])?;
        let v = squash(s);
        if round + 1 < iterations {
            let agreement = predictions
                .bmm(v.reshape(&[b * j, d, 1])?)?
                .reshape(&[b, j, i])?;
            logits = logits.add(agreement)?;
        }
        capsules = Some(v);
    }
    Ok(Routed {
        capsules: capsules.expect("at least one iteration"),
        couplings,
    })
}

/// Capsules and their lengths for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct DigitCapsOutput {
    /// `[J × D]` capsule vectors.
    pub capsules: Tensor<f64>,
    /// `[J]` Euclidean norms of the capsules.
    pub lengths: Vec<f64>,
}

impl DigitCapsOutput {
    pub fn from_capsules(capsules: Tensor<f64>) -> Self {
        let d = capsules.shape()[1];
        let lengths = capsules
            .data()
            .chunks(d)
            .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        Self { capsules, lengths }
    }

    pub fn capsule(&self, class: usize) -> &[f64] {
        let d = self.capsules.shape()[1];
        &self.capsules.data()[class * d..(class + 1) * d]
    }

    /// Index of the longest capsule; ties go to the lowest index.
    pub fn longest(&self) -> usize {
        argmax_first(&self.lengths)
    }
}

/// Index of the maximum, lowest index on ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Routes a single sample given as `[I × J × D]` predictions.
pub fn routing(u_hat: &Tensor<f64>, iterations: usize) -> Result<DigitCapsOutput> {
    let [i, j, d] = u_hat.shape()[..] else {
        return Err(Error::dim("routing", u_hat.shape(), &[0, 0, 0]));
    };
    let tape = Tape::new();
    let u = tape
        .constant(u_hat.clone())
        .permute(&[1, 0, 2])?
        .reshape(&[1, j, i, d])?;
    let routed = route(u, iterations)?;
    let capsules = routed.capsules.to_tensor().reshape(&[j, d])?;
    Ok(DigitCapsOutput::from_capsules(capsules))
}
