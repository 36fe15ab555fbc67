//! Finite-difference gradient suite: every differentiable op and every block
//! family, 64-bit, relative error < 1e-6 (coarser step and tolerance for the
//! one 32-bit spot check).

use attflow::autodiff::gradcheck::{
    check_gradients, check_module_gradients, probe_tensor, DEFAULT_STEP,
};
use attflow::autodiff::{kernels, Graph, Scalar, Tensor, Var};
use attflow::nn::{AttentionGate, BlockKind, BlockSpec, ExtractorBlock, Initializer, ParamVisitor};
use attflow::Result;

const TOL_64: f64 = 1e-6;

/// Reduces any output to a scalar with fixed pseudo-random weights so that
/// spatially symmetric gradient bugs cannot cancel.
fn weighted_sum<T: Scalar>(g: &mut Graph<T>, y: Var, seed: u64) -> Result<Var> {
    let dims = g.value(y).dims().to_vec();
    let w = g.constant(probe_tensor::<T>(dims, seed, -1.0, 1.0));
    let prod = g.mul(y, w)?;
    Ok(g.sum_all(prod))
}

#[test]
fn conv2d_gradients() {
    for (ci, co, k, s, p, groups) in [
        (3usize, 4usize, 3usize, 1usize, 1usize, 1usize),
        (2, 2, 4, 2, 1, 1),
        (3, 5, 1, 1, 0, 1), // the direct 1x1 path
        (4, 4, 3, 2, 1, 2), // grouped
        (2, 3, 5, 1, 2, 1),
    ] {
        let x = probe_tensor::<f64>(vec![2, ci, 6, 6], 11, -1.0, 1.0);
        let w = probe_tensor::<f64>(vec![co, ci / groups, k, k], 12, -0.8, 0.8);
        let b = probe_tensor::<f64>(vec![co], 13, -0.3, 0.3);
        let report = check_gradients(
            |g, vars| {
                let y = g.conv2d_grouped(vars[0], vars[1], Some(vars[2]), s, p, groups)?;
                weighted_sum(g, y, 99)
            },
            &[x, w, b],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(
            report.max_rel_err < TOL_64,
            "conv k{k} s{s} p{p} g{groups}: {report:?}"
        );
    }
}

#[test]
fn deconv2d_gradients() {
    for (ci, co, k, s, p) in [(3usize, 2usize, 4usize, 2usize, 1usize), (2, 3, 3, 1, 1)] {
        let x = probe_tensor::<f64>(vec![2, ci, 4, 5], 21, -1.0, 1.0);
        let w = probe_tensor::<f64>(vec![ci, co, k, k], 22, -0.8, 0.8);
        let b = probe_tensor::<f64>(vec![co], 23, -0.3, 0.3);
        let report = check_gradients(
            |g, vars| {
                let y = g.deconv2d(vars[0], vars[1], Some(vars[2]), s, p)?;
                weighted_sum(g, y, 98)
            },
            &[x, w, b],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.max_rel_err < TOL_64, "deconv k{k} s{s}: {report:?}");
    }
}

#[test]
fn activation_gradients() {
    // inputs bounded away from the leaky_relu kink at 0
    let x = probe_tensor::<f64>(vec![1, 2, 4, 4], 31, 0.05, 1.5);
    let x_neg = probe_tensor::<f64>(vec![1, 2, 4, 4], 32, -1.5, -0.05);
    for input in [x, x_neg] {
        let report = check_gradients(
            |g, vars| {
                let y = g.leaky_relu(vars[0], 0.1);
                weighted_sum(g, y, 97)
            },
            &[input],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.max_rel_err < TOL_64, "leaky_relu: {report:?}");
    }

    let x = probe_tensor::<f64>(vec![1, 2, 3, 3], 33, -2.0, 2.0);
    let report = check_gradients(
        |g, vars| {
            let y = g.sigmoid(vars[0]);
            weighted_sum(g, y, 96)
        },
        &[x],
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.max_rel_err < TOL_64, "sigmoid: {report:?}");
}

#[test]
fn pooling_and_resize_gradients() {
    let x = probe_tensor::<f64>(vec![1, 3, 8, 8], 41, -1.0, 1.0);
    let report = check_gradients(
        |g, vars| {
            let y = g.avg_pool2d(vars[0], 2, 2)?;
            weighted_sum(g, y, 95)
        },
        &[x.clone()],
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.max_rel_err < TOL_64, "avg_pool 2/2: {report:?}");

    let report = check_gradients(
        |g, vars| {
            let y = g.avg_pool2d_padded(vars[0], 3, 1, 1)?;
            weighted_sum(g, y, 94)
        },
        &[x.clone()],
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.max_rel_err < TOL_64, "avg_pool 3/1/1: {report:?}");

    for (th, tw) in [(16usize, 16usize), (4, 4), (5, 7)] {
        let report = check_gradients(
            |g, vars| {
                let y = g.bilinear_resize(vars[0], th, tw)?;
                weighted_sum(g, y, 93)
            },
            &[x.clone()],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.max_rel_err < TOL_64, "bilinear {th}x{tw}: {report:?}");
    }

    let report = check_gradients(
        |g, vars| {
            let y = g.global_avg_pool(vars[0])?;
            weighted_sum(g, y, 92)
        },
        &[x],
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.max_rel_err < TOL_64, "global_avg_pool: {report:?}");
}

#[test]
fn elementwise_and_concat_gradients() {
    let a = probe_tensor::<f64>(vec![1, 2, 3, 3], 51, -1.0, 1.0);
    let b = probe_tensor::<f64>(vec![1, 2, 3, 3], 52, -1.0, 1.0);
    let c = probe_tensor::<f64>(vec![1, 3, 3, 3], 53, -1.0, 1.0);

    let report = check_gradients(
        |g, vars| {
            let sum = g.add(vars[0], vars[1])?;
            let diff = g.sub(sum, vars[1])?;
            let prod = g.mul(diff, vars[0])?;
            let scaled = g.scale(prod, 0.37);
            let cat = g.concat_channels(&[scaled, vars[2]])?;
            weighted_sum(g, cat, 91)
        },
        &[a, b, c],
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.max_rel_err < TOL_64, "elementwise chain: {report:?}");
}

#[test]
fn loss_gradients() {
    // epe against a fixed target; distances bounded away from zero
    let pred = probe_tensor::<f64>(vec![2, 2, 4, 4], 61, 2.0, 4.0);
    let target = probe_tensor::<f64>(vec![2, 2, 4, 4], 62, -1.0, 1.0);
    let report = check_gradients(
        |g, vars| g.epe_loss(vars[0], &target),
        &[pred],
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.max_rel_err < TOL_64, "epe_loss: {report:?}");

    let logits = probe_tensor::<f64>(vec![3, 5], 63, -2.0, 2.0);
    let labels = [0usize, 3, 4];
    let report = check_gradients(
        |g, vars| g.softmax_cross_entropy(vars[0], &labels),
        &[logits],
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.max_rel_err < TOL_64, "softmax_ce: {report:?}");
}

#[test]
fn block_gradients_all_families() {
    for (kind, width) in [
        (BlockKind::Plain, 0usize),
        (BlockKind::Residual, 0),
        (BlockKind::Inception, 0),
        (BlockKind::Cardinality, 2),
    ] {
        for stride in [1usize, 2] {
            let spec = BlockSpec::new(kind, 8, 8, stride).with_width(width);
            let mut init = Initializer::new(7);
            let mut block = ExtractorBlock::<f64>::build("b", spec, &mut init).unwrap();
            let x = probe_tensor::<f64>(vec![1, 8, 6, 6], 71, -1.0, 1.0);
            let report = check_module_gradients(
                &mut block,
                &x,
                |g, m, xv| {
                    let y = m.forward(g, xv)?;
                    weighted_sum(g, y, 90)
                },
                DEFAULT_STEP,
            )
            .unwrap();
            assert!(
                report.max_rel_err < TOL_64,
                "{kind:?} s{stride}: {report:?}"
            );
        }
    }
}

#[test]
fn attention_gate_gradients() {
    let mut init = Initializer::new(9);
    let mut gate = AttentionGate::<f64>::build("g", 8, &mut init).unwrap();
    // activate the mask so the whole A(x) path carries gradient
    gate.visit_mut(&mut |p| {
        if p.name().contains("attdeconv2.weight") {
            p.value = probe_tensor::<f64>(p.value.dims().to_vec(), 15, -0.3, 0.3);
        }
    });
    let x = probe_tensor::<f64>(vec![1, 8, 4, 4], 72, -1.5, 1.5);
    let report = check_module_gradients(
        &mut gate,
        &x,
        |g, m, xv| {
            let y = m.forward(g, xv)?;
            weighted_sum(g, y, 89)
        },
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.max_rel_err < TOL_64, "attention gate: {report:?}");
}

#[test]
fn f32_mode_spot_check() {
    // 32-bit arithmetic with a coarser step; tolerance 1e-2
    let x = probe_tensor::<f32>(vec![1, 2, 5, 5], 81, -1.0, 1.0);
    let w = probe_tensor::<f32>(vec![3, 2, 3, 3], 82, -0.8, 0.8);
    let report = check_gradients(
        |g, vars| {
            let y = g.conv2d(vars[0], vars[1], None, 1, 1)?;
            let y = g.sigmoid(y);
            weighted_sum(g, y, 88)
        },
        &[x, w],
        1e-2,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-2, "f32 conv+sigmoid: {report:?}");
}

#[test]
fn shape_algebra_exhaustive() {
    // conv and deconv output sizes for all (k, s, p) in {1,3,4,5,7}x{1,2}x{0..3}
    for k in [1usize, 3, 4, 5, 7] {
        for s in [1usize, 2] {
            for p in 0usize..4 {
                for len in [7usize, 8, 12, 129] {
                    if len + 2 * p >= k {
                        let out = kernels::conv_out_len(len, k, s, p);
                        assert_eq!(out, (len + 2 * p - k) / s + 1);
                        let mut g = Graph::<f32>::new();
                        let x = g.constant(Tensor::zeros(vec![1, 1, len, len]));
                        let w = g.constant(Tensor::zeros(vec![1, 1, k, k]));
                        let y = g.conv2d(x, w, None, s, p).unwrap();
                        assert_eq!(g.value(y).dims()[2], out);
                    }
                    if (len - 1) * s + k > 2 * p {
                        let out = kernels::deconv_out_len(len, k, s, p);
                        assert_eq!(out as isize, ((len - 1) * s + k) as isize - 2 * p as isize);
                        let mut g = Graph::<f32>::new();
                        let x = g.constant(Tensor::zeros(vec![1, 1, len, len]));
                        let w = g.constant(Tensor::zeros(vec![1, 1, k, k]));
                        let y = g.deconv2d(x, w, None, s, p).unwrap();
                        assert_eq!(g.value(y).dims()[2], out);
                    }
                }
            }
        }
    }
}
