//! Kolmogorov-Arnold layers built from spline-parameterized edge functions.

mod layer;
mod spline;

pub use layer::{KanLayer, KanStack, COEF_INIT};
pub use spline::{bspline_basis, silu, silu_derivative, SplineFunction, SplineGrid};

use crate::error::Result;
use crate::numerics::Matrix;

pub fn spline_eval(f: &SplineFunction, x: f64) -> f64 {
    f.eval(x)
}

pub fn kan_layer_forward(layer: &KanLayer, x: &Matrix) -> Result<Matrix> {
    layer.forward(x)
}

pub fn kan_stack_forward(stack: &KanStack, x: &Matrix) -> Result<Matrix> {
    stack.forward(x)
}

pub fn kan_stack_backward(stack: &KanStack, x: &Matrix, upstream: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    stack.backward(x, upstream)
}
