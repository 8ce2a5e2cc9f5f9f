use super::CapsNet;
use crate::error::Result;
use crate::image::Image;
use crate::tensor::{grad_check, Tape, Var};

/// Worst relative error between the backpropagated gradient of the overall
/// loss and central finite differences, over every network parameter.
///
/// Each parameter tensor is checked in turn with the others held fixed.
pub fn network_grad_check(model: &CapsNet<f64>, images: &[&Image], labels: &[usize], h: f64) -> Result<f64> {
    let batch = model.batch_tensor(images)?;
    let params = model.parameters();
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        let err = grad_check(
            |tape: &Tape<f64>, probe: Var<'_, f64>| {
                let bound: Vec<Var<'_, f64>> = params
                    .iter()
                    .enumerate()
                    .map(|(i, p)| if i == k { probe } else { tape.constant((*p).clone()) })
                    .collect();
                let x = tape.constant(batch.clone());
                Ok(model.loss_graph(&bound, x, labels)?.total)
            },
            params[k],
            h,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capsnet::CapsNetConfig;

    #[test]
    fn tiny_network_gradients_match() {
        let mut model = CapsNet::<f64>::new(CapsNetConfig::tiny(), 3).unwrap();
        // nonzero biases keep the ReLUs off their kinks
        for (i, p) in model.parameters_mut().into_iter().enumerate() {
            if p.shape().len() == 1 {
                for (j, v) in p.data_mut().iter_mut().enumerate() {
                    *v = 0.05 * ((i * 7 + j) as f64 * 0.91).sin();
                }
            }
        }
        let img = |phase: f32| {
            let px = (0..64).map(|i| (i as f32 * 0.37 + phase).sin() * 0.5 + 0.5).collect();
            Image::new(8, 8, px).unwrap()
        };
        let (a, b) = (img(0.0), img(1.3));
        let err = network_grad_check(&model, &[&a, &b], &[0, 1], 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
