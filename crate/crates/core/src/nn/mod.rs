//! Minimal differentiable-layer substrate.
//!
//! Layers are generic over [`Real`] so the same code trains in `f32` and is
//! gradient-checked in `f64`. Every layer exposes an explicit `forward` that
//! returns whatever its `backward` needs; there is no tape or graph.

mod adam;
mod dense;
mod dropout;
pub mod gradcheck;
mod loss;
mod schedule;

use std::fmt::{Debug, Display};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, Adam, AdamConfig};
pub use dense::Dense;
pub use dropout::{dropout_forward, DropoutMask};
pub use gradcheck::{gradcheck, Differentiable, GradCheckReport};
pub use loss::{bce_multilabel, sigmoid, sigmoid_array};
pub use schedule::{lr_schedule, Schedule, TrainConfig};

/// Floating point element type of every tensor in the crate.
pub trait Real:
    Float + NumAssign + LinalgScalar + ScalarOperand + FromPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite real")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// A trainable matrix with its gradient and Adam moment estimates.
///
/// Vectors (biases) are stored as `1 x n` matrices so every parameter shares
/// one representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param<F: Real> {
    pub value: Array2<F>,
    pub grad: Array2<F>,
    pub adam_m: Array2<F>,
    pub adam_v: Array2<F>,
}

impl<F: Real> Param<F> {
    pub fn new(value: Array2<F>) -> Self {
        let dim = value.raw_dim();
        Self {
            value,
            grad: Array2::zeros(dim),
            adam_m: Array2::zeros(dim),
            adam_v: Array2::zeros(dim),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    /// Converts to another precision. Gradients and moments are reset.
    pub fn cast<G: Real>(&self) -> Param<G> {
        Param::new(self.value.mapv(|x| G::of(x.as_f64())))
    }
}

/// Named mutable access to every parameter of a model, in declared order.
pub type ParamsMut<'a, F> = Vec<(String, &'a mut Param<F>)>;

/// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn init_uniform<F: Real, R: rand::Rng + ?Sized>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut R,
) -> Array2<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || F::of(rng.random_range(-bound..=bound)))
}
