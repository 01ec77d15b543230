use sha2::{Digest, Sha256};

use super::tape::Grads;
use super::tensor::Tensor;

/// A named tensor with a trainable flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, trainable: bool) -> Self {
        Parameter { name: name.into(), value, trainable }
    }
}

/// Anything that owns parameters: models, adapter stacks, plain vectors.
pub trait ParamSet {
    fn visit(&self, f: &mut dyn FnMut(&Parameter));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));

    fn accumulate_grads(&mut self, grads: &Grads) {
        self.visit_mut(&mut |p| {
            if let Some(g) = grads.param(&p.name) {
                p.value.accumulate_grad(g).expect("gradient shape matches parameter");
            }
        });
    }

    fn zero_grads(&mut self) {
        self.visit_mut(&mut |p| p.value.zero_grad());
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.visit_mut(&mut |p| p.trainable = trainable);
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.value.len());
        n
    }

    fn trainable_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values
    /// whose name satisfies `filter`.
    fn hash_where(&self, filter: &dyn Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        self.visit(&mut |p| {
            if filter(&p.name) {
                h.update(p.name.as_bytes());
                for s in p.value.shape() {
                    h.update((*s as u64).to_le_bytes());
                }
                for v in p.value.data() {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        });
        hex::encode(h.finalize())
    }

    fn hash_all(&self) -> String {
        self.hash_where(&|_| true)
    }
}

impl ParamSet for Vec<Parameter> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.iter().for_each(f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.iter_mut().for_each(f)
    }
}

impl ParamSet for Parameter {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(self)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(self)
    }
}
