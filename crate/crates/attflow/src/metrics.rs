//! Endpoint error, the multi-scale training loss over a flow pyramid, and
//! classification accuracy.

use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::data::FlowField;
use crate::error::{Error, Result};
use crate::model::FlowPyramid;

/// Mean Euclidean distance between predicted and ground-truth flow vectors.
pub fn epe(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::shape(
            "epe",
            &[pred.height(), pred.width()],
            &[gt.height(), gt.width()],
        ));
    }
    let n = (pred.width() * pred.height()) as f64;
    let sum: f64 = pred
        .data()
        .chunks_exact(2)
        .zip(gt.data().chunks_exact(2))
        .map(|(p, g)| {
            let du = (p[0] - g[0]) as f64;
            let dv = (p[1] - g[1]) as f64;
            (du * du + dv * dv).sqrt()
        })
        .sum();
    Ok(sum / n)
}

/// Per-level weights of the pyramid loss, index 0 = full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights(pub [f64; 7]);

impl LossWeights {
    /// Coarse-heavy defaults in the lineage the networks come from.
    pub fn default_schedule() -> Self {
        LossWeights([0.0025, 0.005, 0.01, 0.02, 0.08, 0.16, 0.32])
    }

    pub fn only(level: usize) -> Self {
        let mut w = [0.0; 7];
        w[level] = 1.0;
        LossWeights(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument("loss weights must be >= 0".into()));
        }
        if !self.0.iter().any(|&w| w > 0.0) {
            return Err(Error::InvalidArgument(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Weighted sum over pyramid levels of the endpoint error against the
/// box-downsampled ground truth (flow kept in full-resolution pixel units).
/// Differentiable w.r.t. the predictions; `gt` is a [B,2,H,W] constant at
/// full input resolution.
pub fn multiscale_loss<T: Scalar>(
    g: &mut Graph<T>,
    pyramid: &FlowPyramid,
    gt: &Tensor<T>,
    weights: &LossWeights,
) -> Result<Var> {
    weights.validate()?;
    let (_, c, _, _) = gt.shape().as_nchw()?;
    if c != 2 {
        return Err(Error::InvalidArgument(format!(
            "ground truth must have 2 channels, got {c}"
        )));
    }
    let mut total: Option<Var> = None;
    for level in pyramid.levels() {
        let w = weights.0[level.scale_log2 as usize];
        if w == 0.0 {
            continue;
        }
        let factor = 1usize << level.scale_log2;
        let gt_level = downsample_gt(gt, factor)?;
        let term = g.epe_loss(level.var, &gt_level)?;
        let weighted = g.scale(term, w);
        total = Some(match total {
            Some(acc) => g.add(acc, weighted)?,
            None => weighted,
        });
    }
    total.ok_or_else(|| {
        Error::InvalidArgument("no pyramid level carries a positive loss weight".into())
    })
}

/// Box-average downsample of a batched [B,2,H,W] ground-truth tensor.
pub fn downsample_gt<T: Scalar>(gt: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = gt.shape().as_nchw()?;
    if factor == 1 {
        return Ok(gt.clone());
    }
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "downsample factor {factor} must divide {h}x{w}"
        )));
    }
    let data = crate::autodiff::kernels::avg_pool2d_fwd(gt.data(), b * c, h, w, factor, factor, 0);
    Tensor::new(
        crate::autodiff::Shape::nchw(b, c, h / factor, w / factor),
        data,
    )
}

/// Fraction of matching labels.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::InvalidArgument(
            "accuracy of an empty label list is undefined".into(),
        ));
    }
    if predicted.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "label lists differ in length: {} vs {}",
            predicted.len(),
            truth.len()
        )));
    }
    let hits = predicted
        .iter()
        .zip(truth)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epe_zero_when_equal() {
        let f = FlowField::constant(4, 4, 1.5, -0.5);
        assert_eq!(epe(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn epe_three_four_five() {
        let gt = FlowField::constant(8, 8, 3.0, 4.0);
        let pred = FlowField::zeros(8, 8);
        assert!((epe(&pred, &gt).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn epe_matches_per_pixel_loop_oracle() {
        // brute-force scalar loop, kept separate from the vectorized path
        let w = 8;
        let h = 8;
        let mk = |seed: u64| {
            let mut data = Vec::new();
            let mut s = seed;
            for _ in 0..w * h * 2 {
                s = crate::data::splitmix64(s);
                data.push(((s >> 11) as f64 / (1u64 << 53) as f64 * 10.0 - 5.0) as f32);
            }
            FlowField::new(w, h, data).unwrap()
        };
        let pred = mk(1);
        let gt = mk(2);
        let mut oracle = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                let (pu, pv) = pred.get(x, y);
                let (gu, gv) = gt.get(x, y);
                oracle +=
                    (((pu - gu) as f64).powi(2) + ((pv - gv) as f64).powi(2)).sqrt();
            }
        }
        oracle /= (w * h) as f64;
        assert!((epe(&pred, &gt).unwrap() - oracle).abs() < 1e-6);
    }

    #[test]
    fn epe_shape_mismatch_rejected() {
        let a = FlowField::zeros(4, 4);
        let b = FlowField::zeros(4, 5);
        assert!(epe(&a, &b).is_err());
    }

    #[test]
    fn accuracy_bounds() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 3], &[4, 5, 6]).unwrap(), 0.0);
        assert!(accuracy(&[], &[]).is_err());
    }
}
