use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Scalar, Shape, Tensor};

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique identity of a learned parameter; optimizer state and
/// gradient lookups key on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

/// A named learned tensor.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    id: ParamId,
    name: String,
    pub value: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Param {
            id: ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed)),
            name: name.into(),
            value,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Visitor over a model's parameters in declaration order. Declaration order
/// is the checkpoint order, so it must be stable across runs.
pub trait ParamVisitor<T: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.numel());
        n
    }
}

/// Seeded fan-in-scaled weight initialization.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        use rand::SeedableRng;
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in [-sqrt(1/fan_in), sqrt(1/fan_in)]. Draws f64 so the f32
    /// and f64 instantiations of one seed agree up to rounding.
    pub fn fan_in_uniform<T: Scalar>(&mut self, shape: impl Into<Shape>, fan_in: usize) -> Tensor<T> {
        let shape = shape.into();
        let bound = (1.0 / fan_in as f64).sqrt();
        let data: Vec<T> = (0..shape.numel())
            .map(|_| T::from_f64(self.rng.gen_range(-bound..bound)))
            .collect();
        Tensor::new(shape, data).expect("generated length matches shape")
    }

    pub fn zeros<T: Scalar>(&mut self, shape: impl Into<Shape>) -> Tensor<T> {
        Tensor::zeros(shape)
    }
}
