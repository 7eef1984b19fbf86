use ndarray::{Array2, ArrayView2, Zip};

use super::Real;
use crate::error::{Error, Result};

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid<F: Real>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

pub fn sigmoid_array<F: Real>(z: ArrayView2<F>) -> Array2<F> {
    z.mapv(sigmoid)
}

/// Mean multi-label binary cross-entropy over all `B x C` logits.
///
/// Uses `max(z, 0) - z y + ln(1 + exp(-|z|))` per element. Returns the loss
/// and its gradient w.r.t. the logits, `(sigmoid(z) - y) / (B C)`.
pub fn bce_multilabel<F: Real>(logits: ArrayView2<F>, targets: ArrayView2<F>) -> Result<(F, Array2<F>)> {
    if logits.dim() != targets.dim() {
        return Err(Error::Shape(format!(
            "logits {:?} vs targets {:?}",
            logits.dim(),
            targets.dim()
        )));
    }
    if let Some(bad) = targets.iter().position(|&y| y != F::zero() && y != F::one()) {
        return Err(Error::InvalidArgument(format!(
            "target at flat index {bad} is not binary"
        )));
    }
    let n = F::of(logits.len().max(1) as f64);
    let mut total = F::zero();
    let mut grad = Array2::zeros(logits.raw_dim());
    Zip::from(&mut grad).and(&logits).and(&targets).for_each(|g, &z, &y| {
        total += z.max(F::zero()) - z * y + (-z.abs()).exp().ln_1p();
        *g = (sigmoid(z) - y) / n;
    });
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradcheck, Differentiable};
    use crate::nn::{Param, ParamsMut};
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_logit_positive_target_is_ln2() {
        let (loss, grad) = bce_multilabel(array![[0.0f64]].view(), array![[1.0]].view()).unwrap();
        assert_relative_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
        assert_relative_eq!(grad[[0, 0]], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn saturated_logits_do_not_overflow() {
        let (loss, grad) = bce_multilabel(array![[50.0f32, -50.0]].view(), array![[1.0, 0.0]].view()).unwrap();
        assert!(loss.is_finite() && (0.0..1e-12).contains(&loss));
        assert!(grad.iter().all(|g| g.is_finite()));
        let (loss, _) = bce_multilabel(array![[-1000.0f32]].view(), array![[1.0]].view()).unwrap();
        assert_relative_eq!(loss, 1000.0, epsilon = 1e-3);
    }

    #[test]
    fn non_binary_target_rejected() {
        let err = bce_multilabel(array![[0.0f64]].view(), array![[0.5]].view()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn sigmoid_symmetry() {
        for z in [-30.0f64, -2.0, 0.0, 0.7, 45.0] {
            assert_relative_eq!(sigmoid(z) + sigmoid(-z), 1.0, epsilon = 1e-15);
        }
    }

    struct BceCase {
        logits: Param<f64>,
        targets: Array2<f64>,
    }

    impl Differentiable for BceCase {
        fn objective(&mut self, with_grad: bool) -> f64 {
            let (loss, grad) = bce_multilabel(self.logits.value.view(), self.targets.view()).unwrap();
            if with_grad {
                self.logits.grad += &grad;
            }
            loss
        }

        fn params_mut(&mut self) -> ParamsMut<'_, f64> {
            vec![("logits".into(), &mut self.logits)]
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-3.0..3.0));
        let targets = Array2::from_shape_simple_fn((3, 4), || f64::from(rng.random_bool(0.4) as u8));
        let mut case = BceCase {
            logits: Param::new(logits),
            targets,
        };
        let report = gradcheck(&mut case, 1e-3, 1e-4);
        assert!(report.passed, "{report:?}");
    }
}
