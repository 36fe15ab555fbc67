//! Central finite-difference verification of analytic gradients.
//!
//! The numeric side only ever runs forward passes, so it stays independent of
//! the backward implementation it is checking.

use crate::autodiff::{Graph, Scalar, Shape, Tensor, Var};
use crate::error::Result;
use crate::nn::ParamVisitor;

/// Step for 64-bit checks; 32-bit checks need a coarser one (see callers).
pub const DEFAULT_STEP: f64 = 1e-5;

/// Result of one gradient check: the largest relative error over all checked
/// elements, with the element that produced it.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    fn empty() -> Self {
        GradCheckReport {
            max_rel_err: 0.0,
            worst_input: 0,
            worst_element: 0,
            analytic: 0.0,
            numeric: 0.0,
        }
    }

    fn update(&mut self, input: usize, element: usize, analytic: f64, numeric: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
        if rel > self.max_rel_err {
            *self = GradCheckReport {
                max_rel_err: rel,
                worst_input: input,
                worst_element: element,
                analytic,
                numeric,
            };
        }
    }
}

/// Compares analytic gradients of a scalar-valued builder against central
/// finite differences, perturbing every element of every input.
///
/// `build` must construct the scalar output from the given leaves alone.
pub fn check_gradients<T, F>(build: F, inputs: &[Tensor<T>], step: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    // analytic pass
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.var(t.clone())).collect();
    let out = build(&mut graph, &vars)?;
    graph.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            graph
                .grad(v)
                .map(|g| g.data().iter().map(|x| x.to_f64()).collect())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |perturbed: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.var(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item().to_f64())
    };

    let mut report = GradCheckReport::empty();
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for ei in 0..t.numel() {
            let orig = t.data()[ei];
            work[ti].data_mut()[ei] = orig + T::from_f64(step);
            let plus = eval(&work)?;
            work[ti].data_mut()[ei] = orig - T::from_f64(step);
            let minus = eval(&work)?;
            work[ti].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            report.update(ti, ei, analytic[ti][ei], numeric);
        }
    }
    Ok(report)
}

/// Gradient check of a whole module: perturbs every learned parameter and
/// every input element, comparing against the recorded backward pass.
///
/// `run` wires the module forward from the input leaf to a scalar.
pub fn check_module_gradients<T, M, F>(
    module: &mut M,
    input: &Tensor<T>,
    run: F,
    step: f64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    M: ParamVisitor<T>,
    F: Fn(&mut Graph<T>, &M, Var) -> Result<Var>,
{
    // analytic pass
    let mut graph = Graph::new();
    let xv = graph.var(input.clone());
    let loss = run(&mut graph, module, xv)?;
    graph.backward(loss)?;
    let input_grad: Vec<f64> = graph
        .grad(xv)
        .map(|g| g.data().iter().map(|x| x.to_f64()).collect())
        .unwrap_or_else(|| vec![0.0; input.numel()]);
    let mut param_grads: Vec<Vec<f64>> = Vec::new();
    module.visit(&mut |p| {
        param_grads.push(
            graph
                .param_grad(p.id())
                .map(|g| g.data().iter().map(|x| x.to_f64()).collect())
                .unwrap_or_else(|| vec![0.0; p.numel()]),
        );
    });

    let eval = |module: &M, input: &Tensor<T>| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.var(input.clone());
        let loss = run(&mut g, module, xv)?;
        Ok(g.value(loss).item().to_f64())
    };

    let mut report = GradCheckReport::empty();

    // input elements
    let mut work = input.clone();
    for ei in 0..input.numel() {
        let orig = work.data()[ei];
        work.data_mut()[ei] = orig + T::from_f64(step);
        let plus = eval(module, &work)?;
        work.data_mut()[ei] = orig - T::from_f64(step);
        let minus = eval(module, &work)?;
        work.data_mut()[ei] = orig;
        report.update(usize::MAX, ei, input_grad[ei], (plus - minus) / (2.0 * step));
    }

    // parameter elements, one parameter at a time
    let mut n_params = 0usize;
    module.visit(&mut |_| n_params += 1);
    for pi in 0..n_params {
        let mut numel = 0usize;
        {
            let mut idx = 0usize;
            module.visit(&mut |p| {
                if idx == pi {
                    numel = p.numel();
                }
                idx += 1;
            });
        }
        for ei in 0..numel {
            let set = |delta: f64, module: &mut M| {
                let mut idx = 0usize;
                module.visit_mut(&mut |p| {
                    if idx == pi {
                        let orig = p.value.data()[ei];
                        p.value.data_mut()[ei] = orig + T::from_f64(delta);
                    }
                    idx += 1;
                });
            };
            set(step, module);
            let plus = eval(module, input)?;
            set(-2.0 * step, module);
            let minus = eval(module, input)?;
            set(step, module); // restore
            report.update(pi, ei, param_grads[pi][ei], (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}

/// Deterministic pseudo-random tensor for gradcheck inputs, values in
/// [lo, hi] (pick ranges away from activation kinks).
pub fn probe_tensor<T: Scalar>(shape: impl Into<Shape>, seed: u64, lo: f64, hi: f64) -> Tensor<T> {
    let shape = shape.into();
    let n = shape.numel();
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    let data: Vec<T> = (0..n)
        .map(|_| {
            // splitmix64 step
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            let unit = (z >> 11) as f64 / (1u64 << 53) as f64;
            T::from_f64(lo + unit * (hi - lo))
        })
        .collect();
    Tensor::new(shape, data).expect("length matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_a_correct_gradient() {
        let x = probe_tensor::<f64>(Shape::scalar(), 5, 0.2, 1.5);
        let report = check_gradients(
            |g, vars| {
                let y = g.sigmoid(vars[0]);
                Ok(g.sum_all(y))
            },
            &[x],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-9, "{report:?}");
    }

    #[test]
    fn harness_resolution_would_flag_a_factor_two_bug() {
        let x = probe_tensor::<f64>(vec![1, 1, 1, 3], 6, 0.5, 1.0);
        let report = check_gradients(
            |g, vars| {
                let y = g.mul(vars[0], vars[0])?;
                Ok(g.sum_all(y))
            },
            &[x],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-9);
        let wrong = report.analytic * 2.0;
        let rel = (wrong - report.numeric).abs() / wrong.abs().max(1.0);
        assert!(rel > 1e-2);
    }
}
