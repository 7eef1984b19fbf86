use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::Real;
use crate::error::{Error, Result};

/// Mask recorded by [`dropout_forward`] and replayed in the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum DropoutMask<F: Real> {
    Identity,
    /// Entries are `0` or `1 / keep`.
    Scale(Array2<F>),
}

impl<F: Real> DropoutMask<F> {
    pub fn backward(&self, upstream: ArrayView2<F>) -> Array2<F> {
        match self {
            DropoutMask::Identity => upstream.to_owned(),
            DropoutMask::Scale(mask) => &upstream * mask,
        }
    }
}

/// Inverted dropout: kept entries are scaled by `1 / keep` during training so
/// evaluation is an exact identity.
pub fn dropout_forward<F: Real, R: Rng + ?Sized>(
    x: ArrayView2<F>,
    keep: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Array2<F>, DropoutMask<F>)> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "dropout keep probability must be in (0, 1], got {keep}"
        )));
    }
    if !training || keep == 1.0 {
        return Ok((x.to_owned(), DropoutMask::Identity));
    }
    let scale = F::of(1.0 / keep);
    let mask = Array2::from_shape_simple_fn(
        x.raw_dim(),
        || {
            if rng.random::<f64>() < keep {
                scale
            } else {
                F::zero()
            }
        },
    );
    Ok((&x * &mask, DropoutMask::Scale(mask)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn keep_one_and_eval_mode_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f32 - 7.5);
        let (y, mask) = dropout_forward(x.view(), 1.0, true, &mut rng).unwrap();
        assert_eq!(y, x);
        assert_eq!(mask, DropoutMask::Identity);
        let (y, _) = dropout_forward(x.view(), 0.6, false, &mut rng).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn training_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = Array2::<f64>::ones((1, 100_000));
        let (y, _) = dropout_forward(x.view(), 0.6, true, &mut rng).unwrap();
        let mean = y.mean().unwrap();
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
    }

    #[test]
    fn backward_reuses_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::<f64>::ones((3, 3));
        let (y, mask) = dropout_forward(x.view(), 0.5, true, &mut rng).unwrap();
        assert_eq!(mask.backward(x.view()), y);
    }

    #[test]
    fn invalid_keep_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::<f64>::ones((1, 1));
        for keep in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(dropout_forward(x.view(), keep, true, &mut rng).is_err());
        }
    }
}
