use std::collections::HashMap;

use crate::autodiff::{Graph, Scalar};
use crate::error::Result;
use crate::nn::{ParamId, ParamVisitor};
use crate::train::OptimizerKind;

struct Slot<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// SGD-with-momentum / Adam over a model's parameters, with state keyed by
/// parameter identity. Updates run in the model's own precision so training
/// curves are bit-reproducible per build.
pub struct Optimizer<T: Scalar> {
    kind: OptimizerKind,
    state: HashMap<ParamId, Slot<T>>,
    step_count: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            state: HashMap::new(),
            step_count: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update from the gradients recorded on `graph`.
    pub fn step<M: ParamVisitor<T>>(
        &mut self,
        model: &mut M,
        graph: &Graph<T>,
        lr: f64,
    ) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count;
        let kind = self.kind;
        let state = &mut self.state;
        model.visit_mut(&mut |p| {
            let Some(grad) = graph.param_grad(p.id()) else {
                return; // parameter unused in this graph
            };
            let n = p.numel();
            let slot = state.entry(p.id()).or_insert_with(|| Slot {
                m: vec![T::ZERO; n],
                v: vec![T::ZERO; n],
            });
            let w = p.value.data_mut();
            let g = grad.data();
            match kind {
                OptimizerKind::SgdMomentum { momentum } => {
                    let mu = T::from_f64(momentum);
                    let lr_t = T::from_f64(lr);
                    for i in 0..n {
                        slot.m[i] = mu * slot.m[i] + g[i];
                        w[i] -= lr_t * slot.m[i];
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let b1 = T::from_f64(beta1);
                    let b2 = T::from_f64(beta2);
                    let one = T::ONE;
                    let eps_t = T::from_f64(eps);
                    let lr_t = T::from_f64(lr);
                    let c1 = T::from_f64(1.0 / (1.0 - beta1.powi(t as i32)));
                    let c2 = T::from_f64(1.0 / (1.0 - beta2.powi(t as i32)));
                    for i in 0..n {
                        slot.m[i] = b1 * slot.m[i] + (one - b1) * g[i];
                        slot.v[i] = b2 * slot.v[i] + (one - b2) * g[i] * g[i];
                        let m_hat = slot.m[i] * c1;
                        let v_hat = slot.v[i] * c2;
                        w[i] -= lr_t * m_hat / (v_hat.sqrt() + eps_t);
                    }
                }
            }
        });
        Ok(())
    }

    /// Moment buffers in the model's parameter order, for state files.
    pub(crate) fn export_state<M: ParamVisitor<T>>(&self, model: &M) -> Vec<(Vec<T>, Vec<T>)> {
        let mut out = Vec::new();
        model.visit(&mut |p| {
            let (m, v) = self
                .state
                .get(&p.id())
                .map(|s| (s.m.clone(), s.v.clone()))
                .unwrap_or_else(|| (vec![T::ZERO; p.numel()], vec![T::ZERO; p.numel()]));
            out.push((m, v));
        });
        out
    }

    pub(crate) fn import_state<M: ParamVisitor<T>>(
        &mut self,
        model: &M,
        slots: Vec<(Vec<T>, Vec<T>)>,
        step_count: u64,
    ) {
        self.state.clear();
        let mut it = slots.into_iter();
        model.visit(&mut |p| {
            if let Some((m, v)) = it.next() {
                self.state.insert(p.id(), Slot { m, v });
            }
        });
        self.step_count = step_count;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::nn::Param;

    struct OneParam {
        w: Param<f64>,
    }

    impl ParamVisitor<f64> for OneParam {
        fn visit(&self, f: &mut dyn FnMut(&Param<f64>)) {
            f(&self.w);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
            f(&mut self.w);
        }
    }

    /// loss = (w * x) with constant x, so grad(w) = x; a hand-rolled Adam
    /// trace over three steps must match the optimizer exactly.
    #[test]
    fn adam_matches_scalar_oracle() {
        let (beta1, beta2, eps, lr) = (0.9, 0.999, 1e-8, 0.05);
        let x = 2.0;
        let mut model = OneParam {
            w: Param::new("w", Tensor::scalar(1.5)),
        };
        let mut opt = Optimizer::new(OptimizerKind::Adam { beta1, beta2, eps });

        // oracle state
        let (mut w_ref, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);

        for t in 1..=3u32 {
            let mut g = Graph::new();
            let wv = g.param(model.w.id(), &model.w.value);
            let xv = g.constant(Tensor::scalar(x));
            let prod = g.mul(wv, xv).unwrap();
            let loss = g.sum_all(prod);
            g.backward(loss).unwrap();
            opt.step(&mut model, &g, lr).unwrap();

            let grad = x;
            m = beta1 * m + (1.0 - beta1) * grad;
            v = beta2 * v + (1.0 - beta2) * grad * grad;
            let m_hat = m / (1.0 - beta1.powi(t as i32));
            let v_hat = v / (1.0 - beta2.powi(t as i32));
            w_ref -= lr * m_hat / (v_hat.sqrt() + eps);

            let w_opt = model.w.value.item();
            assert!(
                (w_opt - w_ref).abs() < 1e-15,
                "step {t}: {w_opt} vs oracle {w_ref}"
            );
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut model = OneParam {
            w: Param::new("w", Tensor::scalar(0.75)),
        };
        let mut opt = Optimizer::new(OptimizerKind::adam_default());
        let mut g = Graph::new();
        let wv = g.param(model.w.id(), &model.w.value);
        let xv = g.constant(Tensor::scalar(3.0));
        let prod = g.mul(wv, xv).unwrap();
        let loss = g.sum_all(prod);
        g.backward(loss).unwrap();
        opt.step(&mut model, &g, 0.0).unwrap();
        assert_eq!(model.w.value.item(), 0.75);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut model = OneParam {
            w: Param::new("w", Tensor::scalar(0.0)),
        };
        let mut opt = Optimizer::new(OptimizerKind::SgdMomentum { momentum: 0.5 });
        let run = |model: &mut OneParam, opt: &mut Optimizer<f64>| {
            let mut g = Graph::new();
            let wv = g.param(model.w.id(), &model.w.value);
            let xv = g.constant(Tensor::scalar(1.0));
            let prod = g.mul(wv, xv).unwrap();
            let loss = g.sum_all(prod);
            g.backward(loss).unwrap();
            opt.step(model, &g, 0.1).unwrap();
        };
        run(&mut model, &mut opt); // m=1, w=-0.1
        run(&mut model, &mut opt); // m=1.5, w=-0.25
        assert!((model.w.value.item() + 0.25).abs() < 1e-15);
    }
}
