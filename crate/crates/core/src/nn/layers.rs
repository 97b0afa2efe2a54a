use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{init_fan_in, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::Result;

/// Affine map `x·W + b` with `W: in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), init_fan_in(rng, input, output));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[1, output])));
        Linear {
            w,
            b,
            input,
            output,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}
