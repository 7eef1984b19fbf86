use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::{init_uniform, Param, ParamsMut, Real};
use crate::error::{Error, Result};

/// Fully connected layer `y = x W + b` over a batch of row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F: Real> {
    pub weight: Param<F>,
    pub bias: Param<F>,
}

impl<F: Real> Dense<F> {
    pub fn new(weight: Array2<F>, bias: Array2<F>) -> Result<Self> {
        if bias.nrows() != 1 || bias.ncols() != weight.ncols() {
            return Err(Error::Shape(format!(
                "dense bias {:?} does not match weight {:?}",
                bias.dim(),
                weight.dim()
            )));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
        })
    }

    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(init_uniform(n_in, n_out, n_in, rng)),
            bias: Param::zeros(1, n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        if x.ncols() != self.n_in() {
            return Err(Error::Shape(format!(
                "dense input width {} but layer expects {}",
                x.ncols(),
                self.n_in()
            )));
        }
        Ok(x.dot(&self.weight.value) + self.bias.value.row(0))
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `x`.
    pub fn backward(&mut self, x: ArrayView2<F>, upstream: ArrayView2<F>) -> Array2<F> {
        self.weight.grad += &x.t().dot(&upstream);
        let mut bias_grad = self.bias.grad.row_mut(0);
        bias_grad += &upstream.sum_axis(Axis(0));
        upstream.dot(&self.weight.value.t())
    }

    pub fn params_mut(&mut self, prefix: &str) -> ParamsMut<'_, F> {
        vec![
            (format!("{prefix}.weight"), &mut self.weight),
            (format!("{prefix}.bias"), &mut self.bias),
        ]
    }

    pub fn cast<G: Real>(&self) -> Dense<G> {
        Dense {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}
