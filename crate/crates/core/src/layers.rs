//! Dense layer and weight initialisation shared by the models.

use rand::Rng;

use crate::tensor::{Bound, ParamId, ParamStore, Result, Tape, Tensor, Var};

/// Uniform(-k, k) samples for a tensor of the given shape.
pub fn uniform<R: Rng + ?Sized>(shape: &[usize], k: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-k..=k))
}

/// `y = W·x + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let k = 1.0 / (input_dim as f64).sqrt();
        let weight = store.add(format!("{prefix}.w"), uniform(&[output_dim, input_dim], k, rng));
        let bias = store.add(format!("{prefix}.b"), Tensor::zeros(&[output_dim]));
        Self {
            input_dim,
            output_dim,
            weight,
            bias,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, bound: &Bound, x: Var) -> Result<Var> {
        let wx = tape.matmul(bound[self.weight], x)?;
        tape.add(wx, bound[self.bias])
    }
}
