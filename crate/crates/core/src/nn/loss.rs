use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Distortion term of the training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Distortion {
    /// Unsquared Euclidean norm of the residual.
    L2,
    L1,
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    /// Batch mean of the distortion term.
    pub distortion: f64,
    pub regularizer: f64,
    /// Gradient of `loss` with respect to the prediction.
    pub grad_prediction: Tensor,
    /// `2λW` for each weight tensor, in the order given.
    pub weight_grads: Vec<Tensor>,
}

/// Objective: mean over the batch of `‖target − prediction‖` plus `λ Σ ‖W‖²`.
///
/// A rank-1 prediction is one sample; otherwise the leading dimension is the
/// batch. Only the tensors passed as `weights` are regularized, so callers
/// leave biases out.
pub fn loss_and_grad(
    prediction: &Tensor,
    target: &Tensor,
    distortion: Distortion,
    weights: &[&Tensor],
    lambda: f64,
) -> Result<LossOutput> {
    if prediction.shape() != target.shape() {
        return Err(invalid!(
            "prediction {:?} and target {:?} differ in shape",
            prediction.shape(),
            target.shape()
        ));
    }
    if !(lambda >= 0.0) {
        return Err(invalid!("weight decay must be non-negative, got {lambda}"));
    }
    let batch = if prediction.shape().len() <= 1 { 1 } else { prediction.shape()[0] };
    let per = if batch == 0 { 0 } else { prediction.len() / batch };
    let mut grad = vec![0.0; prediction.len()];
    let mut total = 0.0;
    for b in 0..batch {
        let p = &prediction.data()[b * per..(b + 1) * per];
        let t = &target.data()[b * per..(b + 1) * per];
        let g = &mut grad[b * per..(b + 1) * per];
        match distortion {
            Distortion::L2 => {
                let norm = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                total += norm;
                if norm > 0.0 {
                    for ((g, a), b) in g.iter_mut().zip(p).zip(t) {
                        *g = (a - b) / norm / batch as f64;
                    }
                }
            }
            Distortion::L1 => {
                for ((g, a), b) in g.iter_mut().zip(p).zip(t) {
                    let d = a - b;
                    total += d.abs();
                    *g = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    } / batch as f64;
                }
            }
        }
    }
    let dist = if batch == 0 { 0.0 } else { total / batch as f64 };
    let regularizer = lambda * weights.iter().map(|w| w.sum_sq()).sum::<f64>();
    let weight_grads = weights.iter().map(|w| w.map(|v| 2.0 * lambda * v)).collect();
    Ok(LossOutput {
        loss: dist + regularizer,
        distortion: dist,
        regularizer,
        grad_prediction: Tensor::from_vec(prediction.shape(), grad)?,
        weight_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn equal_inputs_zero_loss_and_zero_gradient() {
        let out = loss_and_grad(&t(&[1.0, 2.0]), &t(&[1.0, 2.0]), Distortion::L2, &[], 0.0).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_prediction.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn three_four_five() {
        let out = loss_and_grad(&t(&[3.0, 4.0]), &t(&[0.0, 0.0]), Distortion::L2, &[], 0.0).unwrap();
        assert_eq!(out.loss, 5.0);
        assert_eq!(out.grad_prediction.data(), &[0.6, 0.8]);
        let l1 = loss_and_grad(&t(&[3.0, -4.0]), &t(&[0.0, 0.0]), Distortion::L1, &[], 0.0).unwrap();
        assert_eq!(l1.loss, 7.0);
    }

    #[test]
    fn regularizer_counts_only_given_tensors() {
        let w = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let out = loss_and_grad(&t(&[0.0]), &t(&[0.0]), Distortion::L2, &[&w], 0.0005).unwrap();
        assert!((out.regularizer - 0.0025).abs() < 1e-15);
        assert_eq!(out.weight_grads[0].data(), &[0.001, 0.002]);
    }

    #[test]
    fn batch_mean() {
        let p = Tensor::from_vec(&[2, 2], vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let out = loss_and_grad(&p, &Tensor::zeros(&[2, 2]), Distortion::L2, &[], 0.0).unwrap();
        assert_eq!(out.loss, 2.5);
    }

    #[test]
    fn rejects_shape_mismatch_and_negative_lambda() {
        assert!(loss_and_grad(&t(&[0.0]), &t(&[0.0, 1.0]), Distortion::L2, &[], 0.0).is_err());
        assert!(loss_and_grad(&t(&[0.0]), &t(&[0.0]), Distortion::L2, &[], -1.0).is_err());
    }
}
