//! Dense tensors with reverse-mode automatic differentiation and Adam.
//!
//! Just enough machinery to train the pixelwise denoiser: elementwise
//! arithmetic with broadcasting, `matmul`, the handful of transcendental
//! functions the activations need, `mean` for the loss, and `concat`.

mod adam;
mod tape;
mod tensor;

pub use adam::{Adam, Parameter};
pub use tape::{sigmoid, GradNode, Gradients, Tape, Var};
pub use tensor::Tensor;
