use crate::autodiff::kernels::{self, ConvGeom, DeconvGeom};
use crate::autodiff::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};
use crate::nn::ParamId;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Record ops for backward.
    Record,
    /// Forward only; backward is rejected.
    Inference,
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    },
    Deconv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    Sigmoid {
        input: Var,
    },
    AvgPool {
        input: Var,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Bilinear {
        input: Var,
        out_h: usize,
        out_w: usize,
    },
    ConcatChannels {
        inputs: Vec<Var>,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Sub {
        lhs: Var,
        rhs: Var,
    },
    Mul {
        lhs: Var,
        rhs: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    SumAll {
        input: Var,
    },
    GlobalAvgPool {
        input: Var,
    },
    /// Mean over batch and pixels of the 2-channel endpoint distance to a
    /// constant target.
    EpeLoss {
        pred: Var,
        target: Tensor<T>,
    },
    /// Mean cross-entropy of row-wise softmax against integer labels.
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Deconv2d { .. } => "deconv2d",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::AvgPool { .. } => "avg_pool2d",
            Op::Bilinear { .. } => "bilinear_resize",
            Op::ConcatChannels { .. } => "concat_channels",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::SumAll { .. } => "sum_all",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::EpeLoss { .. } => "epe_loss",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Topologically ordered record of executed ops. Single-threaded during
/// record and backward; one backward pass per graph.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
    mode: Mode,
    backward_done: bool,
    check_finite: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self::with_mode(Mode::Record)
    }

    pub fn inference() -> Self {
        Self::with_mode(Mode::Inference)
    }

    pub fn with_mode(mode: Mode) -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            mode,
            backward_done: false,
            // Forward outputs are scanned for NaN/Inf when debug assertions
            // are enabled; heavy runs may switch this off.
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that accumulates a gradient during backward.
    pub fn var(&mut self, value: Tensor<T>) -> Var {
        let track = self.mode == Mode::Record;
        self.push(value, Op::Leaf, track)
    }

    /// Registers a named parameter; repeated registration of the same
    /// parameter returns the existing leaf so gradients accumulate.
    pub fn param(&mut self, id: ParamId, value: &Tensor<T>) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(pid, _)| *pid == id) {
            return v;
        }
        let v = self.var(value.clone());
        self.params.push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param_grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(pid, _)| *pid == id)
            .and_then(|&(_, v)| self.grad(v))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        if self.check_finite && !value.is_finite() {
            panic!(
                "non-finite values in output of `{}` (shape {:?})",
                op.name(),
                value.dims()
            );
        }
        let op = if self.mode == Mode::Record { op } else { Op::Leaf };
        let needs_grad = needs_grad && self.mode == Mode::Record;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    // ---- ops ------------------------------------------------------------

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.conv2d_grouped(input, weight, bias, stride, pad, 1)
    }

    pub fn conv2d_grouped(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let (b, c_in, h, w) = self.value(input).shape().as_nchw()?;
        let wdims = self.value(weight).dims().to_vec();
        let [c_out, wc, kh, kw] = wdims.as_slice() else {
            return Err(Error::InvalidArgument(format!(
                "conv2d weight must be 4-D [Co,Ci/g,kh,kw], got {wdims:?}"
            )));
        };
        let (c_out, wc, kh, kw) = (*c_out, *wc, *kh, *kw);
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "conv2d groups {groups} must divide in/out channels {c_in}/{c_out}"
            )));
        }
        if wc != c_in / groups {
            return Err(Error::shape(
                format!("conv2d: weight expects {wc} input channels/group, input supplies {} ({} channels / {groups} groups)", c_in / groups, c_in),
                self.value(input).dims(),
                &wdims,
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::InvalidArgument(format!(
                "conv2d kernel {kh}x{kw} exceeds padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        if let Some(bv) = bias {
            let bd = self.value(bv).dims();
            if bd != [c_out] {
                return Err(Error::shape("conv2d bias", bd, &[c_out]));
            }
        }
        let geom = ConvGeom {
            batch: b,
            c_in,
            c_out,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            groups,
        };
        let (oh, ow) = geom.out_hw();
        let out = kernels::conv2d_fwd(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|bv| self.value(bv).data().to_vec()).as_deref(),
            &geom,
        );
        let value = Tensor::new(Shape::nchw(b, c_out, oh, ow), out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let needs = self.any_needs_grad(&deps);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
                groups,
            },
            needs,
        ))
    }

    pub fn deconv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (b, c_in, h, w) = self.value(input).shape().as_nchw()?;
        let wdims = self.value(weight).dims().to_vec();
        let [wci, c_out, kh, kw] = wdims.as_slice() else {
            return Err(Error::InvalidArgument(format!(
                "deconv2d weight must be 4-D [Ci,Co,kh,kw], got {wdims:?}"
            )));
        };
        let (wci, c_out, kh, kw) = (*wci, *c_out, *kh, *kw);
        if stride == 0 {
            return Err(Error::InvalidArgument("deconv2d stride must be >= 1".into()));
        }
        if wci != c_in {
            return Err(Error::shape(
                format!("deconv2d: weight expects {wci} input channels, input has {c_in}"),
                self.value(input).dims(),
                &wdims,
            ));
        }
        if (h - 1) * stride + kh <= 2 * pad || (w - 1) * stride + kw <= 2 * pad {
            return Err(Error::InvalidArgument(format!(
                "deconv2d output collapses: input {h}x{w}, kernel {kh}x{kw}, stride {stride}, pad {pad}"
            )));
        }
        if let Some(bv) = bias {
            let bd = self.value(bv).dims();
            if bd != [c_out] {
                return Err(Error::shape("deconv2d bias", bd, &[c_out]));
            }
        }
        let geom = DeconvGeom {
            batch: b,
            c_in,
            c_out,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
        };
        let (oh, ow) = geom.out_hw();
        let out = kernels::deconv2d_fwd(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|bv| self.value(bv).data().to_vec()).as_deref(),
            &geom,
        );
        let value = Tensor::new(Shape::nchw(b, c_out, oh, ow), out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let needs = self.any_needs_grad(&deps);
        Ok(self.push(
            value,
            Op::Deconv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            needs,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        let value = self.value(input).map(|v| if v > T::ZERO { v } else { v * s });
        let needs = self.any_needs_grad(&[input]);
        self.push(value, Op::LeakyRelu { input, slope }, needs)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(sigmoid_scalar);
        let needs = self.any_needs_grad(&[input]);
        self.push(value, Op::Sigmoid { input }, needs)
    }

    pub fn avg_pool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        self.avg_pool2d_padded(input, k, stride, 0)
    }

    pub fn avg_pool2d_padded(&mut self, input: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(input).shape().as_nchw()?;
        if k == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "avg_pool2d kernel and stride must be >= 1".into(),
            ));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::InvalidArgument(format!(
                "avg_pool2d window {k} exceeds padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let out = kernels::avg_pool2d_fwd(self.value(input).data(), b * c, h, w, k, stride, pad);
        let oh = kernels::conv_out_len(h, k, stride, pad);
        let ow = kernels::conv_out_len(w, k, stride, pad);
        let value = Tensor::new(Shape::nchw(b, c, oh, ow), out)?;
        let needs = self.any_needs_grad(&[input]);
        Ok(self.push(value, Op::AvgPool { input, k, stride, pad }, needs))
    }

    pub fn bilinear_resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(input).shape().as_nchw()?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument(
                "bilinear_resize target dims must be >= 1".into(),
            ));
        }
        let out = kernels::bilinear_resize_fwd(self.value(input).data(), b * c, h, w, out_h, out_w);
        let value = Tensor::new(Shape::nchw(b, c, out_h, out_w), out)?;
        let needs = self.any_needs_grad(&[input]);
        Ok(self.push(value, Op::Bilinear { input, out_h, out_w }, needs))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let (b0, _, h0, w0) = self.value(inputs[0]).shape().as_nchw()?;
        let mut c_total = 0;
        for &v in inputs {
            let (b, c, h, w) = self.value(v).shape().as_nchw()?;
            if (b, h, w) != (b0, h0, w0) {
                return Err(Error::shape(
                    "concat_channels: batch/spatial dims differ",
                    self.value(inputs[0]).dims(),
                    self.value(v).dims(),
                ));
            }
            c_total += c;
        }
        let plane = h0 * w0;
        let mut out = vec![T::ZERO; b0 * c_total * plane];
        for b in 0..b0 {
            let mut c_off = 0;
            for &v in inputs {
                let t = self.value(v);
                let c = t.dims()[1];
                let src = &t.data()[b * c * plane..(b + 1) * c * plane];
                out[(b * c_total + c_off) * plane..(b * c_total + c_off + c) * plane]
                    .copy_from_slice(src);
                c_off += c;
            }
        }
        let value = Tensor::new(Shape::nchw(b0, c_total, h0, w0), out)?;
        let needs = self.any_needs_grad(inputs);
        Ok(self.push(
            value,
            Op::ConcatChannels {
                inputs: inputs.to_vec(),
            },
            needs,
        ))
    }

    fn binary_same_shape(&mut self, lhs: Var, rhs: Var, what: &str) -> Result<()> {
        let a = self.value(lhs).dims();
        let b = self.value(rhs).dims();
        if a != b {
            return Err(Error::shape(what, a, b));
        }
        Ok(())
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary_same_shape(lhs, rhs, "add")?;
        let data = zip_map(self.value(lhs), self.value(rhs), |a, b| a + b);
        let needs = self.any_needs_grad(&[lhs, rhs]);
        Ok(self.push(data, Op::Add { lhs, rhs }, needs))
    }

    pub fn sub(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary_same_shape(lhs, rhs, "sub")?;
        let data = zip_map(self.value(lhs), self.value(rhs), |a, b| a - b);
        let needs = self.any_needs_grad(&[lhs, rhs]);
        Ok(self.push(data, Op::Sub { lhs, rhs }, needs))
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary_same_shape(lhs, rhs, "mul")?;
        let data = zip_map(self.value(lhs), self.value(rhs), |a, b| a * b);
        let needs = self.any_needs_grad(&[lhs, rhs]);
        Ok(self.push(data, Op::Mul { lhs, rhs }, needs))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let f = T::from_f64(factor);
        let value = self.value(input).map(|v| v * f);
        let needs = self.any_needs_grad(&[input]);
        self.push(value, Op::Scale { input, factor }, needs)
    }

    pub fn sum_all(&mut self, input: Var) -> Var {
        let s: T = self.value(input).data().iter().copied().sum();
        let needs = self.any_needs_grad(&[input]);
        self.push(Tensor::scalar(s), Op::SumAll { input }, needs)
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(input).shape().as_nchw()?;
        let inv = T::ONE / T::from_usize(h * w);
        let data = self.value(input).data();
        let mut out = vec![T::ZERO; b * c];
        for (i, slot) in out.iter_mut().enumerate() {
            let s: T = data[i * h * w..(i + 1) * h * w].iter().copied().sum();
            *slot = s * inv;
        }
        let value = Tensor::new(Shape::nchw(b, c, 1, 1), out)?;
        let needs = self.any_needs_grad(&[input]);
        Ok(self.push(value, Op::GlobalAvgPool { input }, needs))
    }

    /// Differentiable mean endpoint distance between a predicted 2-channel
    /// field and a constant target of the same shape.
    pub fn epe_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let (b, c, h, w) = self.value(pred).shape().as_nchw()?;
        if c != 2 {
            return Err(Error::InvalidArgument(format!(
                "epe_loss expects 2-channel flow, got {c} channels"
            )));
        }
        if self.value(pred).dims() != target.dims() {
            return Err(Error::shape("epe_loss", self.value(pred).dims(), target.dims()));
        }
        let loss = epe_mean(self.value(pred).data(), target.data(), b, h, w);
        let needs = self.any_needs_grad(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::EpeLoss {
                pred,
                target: target.clone(),
            },
            needs,
        ))
    }

    /// Mean softmax cross-entropy; logits [B,C] or [B,C,1,1].
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = logits_rows(self.value(logits))?;
        if labels.len() != b {
            return Err(Error::InvalidArgument(format!(
                "softmax_cross_entropy: {b} logit rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let data = self.value(logits).data();
        let mut total = T::ZERO;
        for (row, &label) in labels.iter().enumerate() {
            let row_data = &data[row * c..(row + 1) * c];
            let (log_probs, _) = log_softmax_row(row_data);
            total -= log_probs[label];
        }
        let loss = total / T::from_usize(b);
        let needs = self.any_needs_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            needs,
        ))
    }

    // ---- backward --------------------------------------------------------

    /// Populates gradients for every tracked leaf reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.mode != Mode::Record {
            return Err(Error::Graph(
                "backward on an inference graph (no ops recorded)".into(),
            ));
        }
        if self.backward_done {
            return Err(Error::Graph(
                "backward already called on this graph; record a fresh graph".into(),
            ));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.dims()
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::ONE));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].clone() else { continue };
            self.backprop_node(id, &g, &mut grads)?;
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(
        &self,
        id: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
                groups,
            } => {
                let (b, c_in, h, w) = self.value(*input).shape().as_nchw()?;
                let wd = self.value(*weight).dims();
                let geom = ConvGeom {
                    batch: b,
                    c_in,
                    c_out: wd[0],
                    h,
                    w,
                    kh: wd[2],
                    kw: wd[3],
                    stride: *stride,
                    pad: *pad,
                    groups: *groups,
                };
                let want_in = self.nodes[input.0].needs_grad;
                let want_w = self.nodes[weight.0].needs_grad;
                let want_b = bias.map(|bv| self.nodes[bv.0].needs_grad).unwrap_or(false);
                let (di, dw, db) = kernels::conv2d_bwd(
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g.data(),
                    &geom,
                    want_in,
                    want_w,
                    want_b,
                );
                if let Some(di) = di {
                    accumulate(grads, *input, self.value(*input).shape(), di)?;
                }
                if let Some(dw) = dw {
                    accumulate(grads, *weight, self.value(*weight).shape(), dw)?;
                }
                if let (Some(db), Some(bv)) = (db, bias) {
                    accumulate(grads, *bv, self.value(*bv).shape(), db)?;
                }
            }
            Op::Deconv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let (b, c_in, h, w) = self.value(*input).shape().as_nchw()?;
                let wd = self.value(*weight).dims();
                let geom = DeconvGeom {
                    batch: b,
                    c_in,
                    c_out: wd[1],
                    h,
                    w,
                    kh: wd[2],
                    kw: wd[3],
                    stride: *stride,
                    pad: *pad,
                };
                let want_in = self.nodes[input.0].needs_grad;
                let want_w = self.nodes[weight.0].needs_grad;
                let want_b = bias.map(|bv| self.nodes[bv.0].needs_grad).unwrap_or(false);
                let (di, dw, db) = kernels::deconv2d_bwd(
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g.data(),
                    &geom,
                    want_in,
                    want_w,
                    want_b,
                );
                if let Some(di) = di {
                    accumulate(grads, *input, self.value(*input).shape(), di)?;
                }
                if let Some(dw) = dw {
                    accumulate(grads, *weight, self.value(*weight).shape(), dw)?;
                }
                if let (Some(db), Some(bv)) = (db, bias) {
                    accumulate(grads, *bv, self.value(*bv).shape(), db)?;
                }
            }
            Op::LeakyRelu { input, slope } => {
                let s = T::from_f64(*slope);
                let x = self.value(*input).data();
                let d: Vec<T> = x
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > T::ZERO { gv } else { gv * s })
                    .collect();
                accumulate(grads, *input, self.value(*input).shape(), d)?;
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                let d: Vec<T> = y
                    .iter()
                    .zip(g.data())
                    .map(|(&yv, &gv)| gv * yv * (T::ONE - yv))
                    .collect();
                accumulate(grads, *input, self.value(*input).shape(), d)?;
            }
            Op::AvgPool { input, k, stride, pad } => {
                let (b, c, h, w) = self.value(*input).shape().as_nchw()?;
                let d = kernels::avg_pool2d_bwd(g.data(), b * c, h, w, *k, *stride, *pad);
                accumulate(grads, *input, self.value(*input).shape(), d)?;
            }
            Op::Bilinear { input, out_h, out_w } => {
                let (b, c, h, w) = self.value(*input).shape().as_nchw()?;
                let d = kernels::bilinear_resize_bwd(g.data(), b * c, h, w, *out_h, *out_w);
                accumulate(grads, *input, self.value(*input).shape(), d)?;
            }
            Op::ConcatChannels { inputs } => {
                let (b, c_total, h, w) = node.value.shape().as_nchw()?;
                let plane = h * w;
                let gd = g.data();
                let mut c_off = 0;
                for &v in inputs {
                    let c = self.value(v).dims()[1];
                    if self.nodes[v.0].needs_grad {
                        let mut d = vec![T::ZERO; b * c * plane];
                        for bi in 0..b {
                            let src = &gd[(bi * c_total + c_off) * plane
                                ..(bi * c_total + c_off + c) * plane];
                            d[bi * c * plane..(bi + 1) * c * plane].copy_from_slice(src);
                        }
                        accumulate(grads, v, self.value(v).shape(), d)?;
                    }
                    c_off += c;
                }
            }
            Op::Add { lhs, rhs } => {
                if self.nodes[lhs.0].needs_grad {
                    accumulate(grads, *lhs, self.value(*lhs).shape(), g.data().to_vec())?;
                }
                if self.nodes[rhs.0].needs_grad {
                    accumulate(grads, *rhs, self.value(*rhs).shape(), g.data().to_vec())?;
                }
            }
            Op::Sub { lhs, rhs } => {
                if self.nodes[lhs.0].needs_grad {
                    accumulate(grads, *lhs, self.value(*lhs).shape(), g.data().to_vec())?;
                }
                if self.nodes[rhs.0].needs_grad {
                    let d: Vec<T> = g.data().iter().map(|&v| -v).collect();
                    accumulate(grads, *rhs, self.value(*rhs).shape(), d)?;
                }
            }
            Op::Mul { lhs, rhs } => {
                if self.nodes[lhs.0].needs_grad {
                    let d: Vec<T> = g
                        .data()
                        .iter()
                        .zip(self.value(*rhs).data())
                        .map(|(&gv, &rv)| gv * rv)
                        .collect();
                    accumulate(grads, *lhs, self.value(*lhs).shape(), d)?;
                }
                if self.nodes[rhs.0].needs_grad {
                    let d: Vec<T> = g
                        .data()
                        .iter()
                        .zip(self.value(*lhs).data())
                        .map(|(&gv, &lv)| gv * lv)
                        .collect();
                    accumulate(grads, *rhs, self.value(*rhs).shape(), d)?;
                }
            }
            Op::Scale { input, factor } => {
                let f = T::from_f64(*factor);
                let d: Vec<T> = g.data().iter().map(|&v| v * f).collect();
                accumulate(grads, *input, self.value(*input).shape(), d)?;
            }
            Op::SumAll { input } => {
                let gv = g.item();
                let n = self.value(*input).numel();
                accumulate(grads, *input, self.value(*input).shape(), vec![gv; n])?;
            }
            Op::GlobalAvgPool { input } => {
                let (b, c, h, w) = self.value(*input).shape().as_nchw()?;
                let inv = T::ONE / T::from_usize(h * w);
                let gd = g.data();
                let mut d = vec![T::ZERO; b * c * h * w];
                for i in 0..b * c {
                    let gv = gd[i] * inv;
                    d[i * h * w..(i + 1) * h * w].iter_mut().for_each(|v| *v = gv);
                }
                accumulate(grads, *input, self.value(*input).shape(), d)?;
            }
            Op::EpeLoss { pred, target } => {
                let (b, _, h, w) = self.value(*pred).shape().as_nchw()?;
                let d = epe_grad(self.value(*pred).data(), target.data(), b, h, w, g.item());
                accumulate(grads, *pred, self.value(*pred).shape(), d)?;
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let (b, c) = logits_rows(self.value(*logits))?;
                let data = self.value(*logits).data();
                let gv = g.item() / T::from_usize(b);
                let mut d = vec![T::ZERO; data.len()];
                for (row, &label) in labels.iter().enumerate() {
                    let row_data = &data[row * c..(row + 1) * c];
                    let (_, probs) = log_softmax_row(row_data);
                    for j in 0..c {
                        let delta = if j == label { T::ONE } else { T::ZERO };
                        d[row * c + j] = (probs[j] - delta) * gv;
                    }
                }
                accumulate(grads, *logits, self.value(*logits).shape(), d)?;
            }
        }
        Ok(())
    }
}

fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    // numerically stable in both tails
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().clone(), data).expect("shapes checked by caller")
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Tensor<T>>],
    var: Var,
    shape: &Shape,
    delta: Vec<T>,
) -> Result<()> {
    match &mut grads[var.0] {
        Some(existing) => {
            for (dst, src) in existing.data_mut().iter_mut().zip(&delta) {
                *dst += *src;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.clone(), delta)?);
        }
    }
    Ok(())
}

fn logits_rows<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.dims() {
        &[b, c] => Ok((b, c)),
        &[b, c, 1, 1] => Ok((b, c)),
        other => Err(Error::InvalidArgument(format!(
            "expected logits [B,C] or [B,C,1,1], got {other:?}"
        ))),
    }
}

fn log_softmax_row<T: Scalar>(row: &[T]) -> (Vec<T>, Vec<T>) {
    let m = row.iter().fold(row[0], |a, &b| a.maxv(b));
    let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
    let z: T = exps.iter().copied().sum();
    let log_z = z.ln();
    let log_probs: Vec<T> = row.iter().map(|&v| v - m - log_z).collect();
    let probs: Vec<T> = exps.iter().map(|&e| e / z).collect();
    (log_probs, probs)
}

fn epe_mean<T: Scalar>(pred: &[T], target: &[T], b: usize, h: usize, w: usize) -> T {
    let plane = h * w;
    let mut total = T::ZERO;
    for bi in 0..b {
        let u = &pred[(bi * 2) * plane..(bi * 2 + 1) * plane];
        let v = &pred[(bi * 2 + 1) * plane..(bi * 2 + 2) * plane];
        let tu = &target[(bi * 2) * plane..(bi * 2 + 1) * plane];
        let tv = &target[(bi * 2 + 1) * plane..(bi * 2 + 2) * plane];
        for i in 0..plane {
            let du = u[i] - tu[i];
            let dv = v[i] - tv[i];
            total += (du * du + dv * dv).sqrt();
        }
    }
    total / T::from_usize(b * plane)
}

fn epe_grad<T: Scalar>(pred: &[T], target: &[T], b: usize, h: usize, w: usize, g: T) -> Vec<T> {
    let plane = h * w;
    let scale = g / T::from_usize(b * plane);
    let mut d = vec![T::ZERO; pred.len()];
    for bi in 0..b {
        for i in 0..plane {
            let iu = (bi * 2) * plane + i;
            let iv = (bi * 2 + 1) * plane + i;
            let du = pred[iu] - target[iu];
            let dv = pred[iv] - target[iv];
            let dist = (du * du + dv * dv).sqrt();
            if dist > T::ZERO {
                d[iu] = scale * du / dist;
                d[iv] = scale * dv / dist;
            }
            // subgradient 0 at exact zero distance
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut g = Graph::<f64>::new();
        let x = g.var(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        assert!((g.value(y).item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grad_of_sigmoid_at_zero_is_quarter() {
        let mut g = Graph::<f64>::new();
        let x = g.var(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert!((g.grad(x).unwrap().item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn grad_of_weighted_sum_is_the_input() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![1, 1, 1, 3], vec![2.0, -1.0, 0.5]).unwrap());
        let w = g.var(Tensor::new(vec![1, 1, 1, 3], vec![0.0, 0.0, 0.0]).unwrap());
        let prod = g.mul(w, x).unwrap();
        let loss = g.sum_all(prod);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[2.0, -1.0, 0.5]);
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.var(Tensor::scalar(1.0));
        let y = g.sigmoid(x);
        g.backward(y).unwrap();
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn backward_on_non_scalar_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.var(Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        let y = g.sigmoid(x);
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn concat_channel_count_matches_table() {
        let mut g = Graph::<f32>::new();
        let vars: Vec<Var> = [1024usize, 512, 512, 256, 128]
            .iter()
            .map(|&c| g.constant(Tensor::zeros(Shape::nchw(1, c, 2, 2))))
            .collect();
        let out = g.concat_channels(&vars).unwrap();
        assert_eq!(g.value(out).dims(), &[1, 2432, 2, 2]);
    }

    #[test]
    fn concat_rejects_mismatched_spatial_dims() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(Shape::nchw(1, 2, 4, 4)));
        let b = g.constant(Tensor::zeros(Shape::nchw(1, 2, 4, 5)));
        assert!(g.concat_channels(&[a, b]).is_err());
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(Shape::nchw(1, 3, 8, 8)));
        let w = g.constant(Tensor::zeros(vec![4, 2, 3, 3]));
        let err = g.conv2d(x, w, None, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3, 8, 8]") && msg.contains("[4, 2, 3, 3]"), "{msg}");
    }

    #[test]
    fn conv_shape_formula_cases() {
        // 6x384x512 input, 7x7 s2 p3, 64 out -> 64x192x256
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(Shape::nchw(1, 6, 384, 512)));
        let w = g.constant(Tensor::zeros(vec![64, 6, 7, 7]));
        let y = g.conv2d(x, w, None, 2, 3).unwrap();
        assert_eq!(g.value(y).dims(), &[1, 64, 192, 256]);

        // 1x1 s1 p0 keeps spatial dims
        let w1 = g.constant(Tensor::zeros(vec![8, 6, 1, 1]));
        let y1 = g.conv2d(x, w1, None, 1, 0).unwrap();
        assert_eq!(g.value(y1).dims(), &[1, 8, 384, 512]);
    }

    #[test]
    fn deconv_shape_formula_cases() {
        // 64x32x32, 4x4 s2 p1, 128 out -> 128x64x64
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(Shape::nchw(1, 64, 32, 32)));
        let w = g.constant(Tensor::zeros(vec![64, 128, 4, 4]));
        let y = g.deconv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(g.value(y).dims(), &[1, 128, 64, 64]);

        // 1x1 s1 p0 is a spatial identity
        let w1 = g.constant(Tensor::zeros(vec![64, 32, 1, 1]));
        let y1 = g.deconv2d(x, w1, None, 1, 0).unwrap();
        assert_eq!(g.value(y1).dims(), &[1, 32, 32, 32]);
    }

    #[test]
    fn conv_deconv_adjointness_inner_products() {
        // <conv(x), y> == <x, deconv(y)> with a shared (bias-free) weight,
        // on geometries where the strided conv inverts shape exactly
        let n = |i: usize| ((i * 2654435761) % 1000) as f64 / 500.0 - 1.0;
        for (co, k, s, p) in [(1usize, 4usize, 2usize, 1usize), (2, 3, 1, 1), (3, 1, 1, 0)] {
            let mut g = Graph::<f64>::new();
            let ci = 2;
            let x_t = Tensor::new(vec![1, ci, 4, 4], (0..ci * 16).map(n).collect()).unwrap();
            let w_t =
                Tensor::new(vec![co, ci, k, k], (50..50 + co * ci * k * k).map(n).collect())
                    .unwrap();
            let x = g.constant(x_t.clone());
            let w = g.constant(w_t.clone());
            let cx = g.conv2d(x, w, None, s, p).unwrap();
            let y_t = Tensor::new(
                g.value(cx).dims().to_vec(),
                (0..g.value(cx).numel()).map(|i| n(i + 100)).collect(),
            )
            .unwrap();
            let y = g.constant(y_t.clone());
            // shared weight read as [Ci_d=co, Co_d=ci, k, k]
            let dy = g.deconv2d(y, w, None, s, p).unwrap();
            assert_eq!(g.value(dy).dims(), x_t.dims());
            let lhs: f64 = g
                .value(cx)
                .data()
                .iter()
                .zip(y_t.data())
                .map(|(a, b)| a * b)
                .sum();
            let rhs: f64 = x_t
                .data()
                .iter()
                .zip(g.value(dy).data())
                .map(|(a, b)| a * b)
                .sum();
            assert!((lhs - rhs).abs() < 1e-10, "k{k} s{s} p{p}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn bilinear_constant_field_stays_constant() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full(Shape::nchw(1, 2, 4, 6), 3.25));
        let y = g.bilinear_resize(x, 9, 13).unwrap();
        assert!(g.value(y).data().iter().all(|&v| (v - 3.25).abs() < 1e-6));
    }
}
