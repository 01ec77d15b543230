//! Dense f64 tensors, a reverse-mode tape, Adam, and a finite-difference
//! gradient checker.

mod gradcheck;
mod optim;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_sampled, relative_error, GradCheck};
pub use optim::Adam;
pub use param::{ParamSet, Parameter};
pub use tape::{Grads, Tape, Var};
pub use tensor::{cross_entropy_logits, layernorm, matmul, relu, softmax, Tensor};

use rand::Rng;

/// Uniform `[-scale, scale)` initialization.
pub fn uniform(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("valid shape")
}
