use crate::autodiff::{Graph, Mode, Scalar, Shape, Tensor, Var};
use crate::data::{FlowField, RgbImage};
use crate::error::{Error, Result};
use crate::model::{build, FlowPyramid, ModelSpec, PyramidLevel, INPUT_MULTIPLE};
use crate::nn::{AttentionGate, ConvLayer, DeconvLayer, ExtractorBlock, Param, ParamVisitor};

/// Coarsest scale (as log2) that still takes an attention gate: 1/4, the
/// contour scales. At the required input divisibility of 64 those feature
/// maps always satisfy the gate's divisible-by-4 spatial contract.
pub const GATE_MAX_SCALE_LOG2: u8 = 2;

pub(crate) enum NodeOp<T: Scalar> {
    Input,
    Conv(ConvLayer<T>),
    Deconv(DeconvLayer<T>),
    Block(ExtractorBlock<T>),
    Gate(AttentionGate<T>),
    AvgPool { k: usize, stride: usize },
    /// Bilinear resize to the spatial dims of a reference node.
    BilinearTo { reference: usize },
    Concat,
    /// Constant elementwise multiply (the raw-prediction to pixel-units map).
    Scale { factor: f64 },
}

pub(crate) struct LayerNode<T: Scalar> {
    pub name: String,
    pub op: NodeOp<T>,
    pub inputs: Vec<usize>,
    /// 1/2^k of input resolution, for the report and gating rules.
    pub scale_log2: u8,
}

/// A built flow estimation network: an executable layer graph plus the spec
/// that produced it.
pub struct FlowNetwork<T: Scalar> {
    spec: ModelSpec,
    pub(crate) nodes: Vec<LayerNode<T>>,
    /// (scale_log2, node index) of each prediction head output.
    pub(crate) predictions: Vec<(u8, usize)>,
}

impl<T: Scalar> FlowNetwork<T> {
    /// Builds the network described by `spec` with seeded weight init.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        build::build_network(spec, seed)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub(crate) fn from_parts(
        spec: ModelSpec,
        nodes: Vec<LayerNode<T>>,
        predictions: Vec<(u8, usize)>,
    ) -> Self {
        FlowNetwork {
            spec,
            nodes,
            predictions,
        }
    }

    /// Runs the network on a [B,6,H,W] image-pair stack already on the graph.
    pub fn forward(&self, g: &mut Graph<T>, input: Var) -> Result<FlowPyramid> {
        let (_, c, h, w) = g.value(input).shape().as_nchw()?;
        if c != 6 {
            return Err(Error::InvalidArgument(format!(
                "flow network input must stack two RGB frames into 6 channels, got {c}"
            )));
        }
        if h % INPUT_MULTIPLE != 0 || w % INPUT_MULTIPLE != 0 {
            return Err(Error::Indivisible {
                h,
                w,
                multiple: INPUT_MULTIPLE,
                context: "flow network input (six stride-2 encoder stages)".into(),
            });
        }
        let mut values: Vec<Var> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let out = match &node.op {
                NodeOp::Input => input,
                NodeOp::Conv(layer) => layer.forward(g, values[node.inputs[0]])?,
                NodeOp::Deconv(layer) => layer.forward(g, values[node.inputs[0]])?,
                NodeOp::Block(block) => block.forward(g, values[node.inputs[0]])?,
                NodeOp::Gate(gate) => gate.forward(g, values[node.inputs[0]])?,
                NodeOp::AvgPool { k, stride } => {
                    g.avg_pool2d(values[node.inputs[0]], *k, *stride)?
                }
                NodeOp::BilinearTo { reference } => {
                    let (_, _, th, tw) = g.value(values[*reference]).shape().as_nchw()?;
                    g.bilinear_resize(values[node.inputs[0]], th, tw)?
                }
                NodeOp::Concat => {
                    let srcs: Vec<Var> = node.inputs.iter().map(|&i| values[i]).collect();
                    g.concat_channels(&srcs)?
                }
                NodeOp::Scale { factor } => g.scale(values[node.inputs[0]], *factor),
            };
            values.push(out);
        }
        Ok(FlowPyramid::new(
            self.predictions
                .iter()
                .map(|&(scale, idx)| PyramidLevel {
                    scale_log2: scale,
                    var: values[idx],
                })
                .collect(),
        ))
    }

    /// Full-resolution flow for one image pair: finest pyramid level,
    /// bilinearly upsampled to input size when the model stops coarser.
    pub fn estimate(&self, image1: &RgbImage, image2: &RgbImage) -> Result<FlowField> {
        let input = images_to_input::<T>(image1, image2)?;
        let mut g = Graph::with_mode(Mode::Inference);
        let input = g.constant(input);
        let pyramid = self.forward(&mut g, input)?;
        let finest = pyramid.finest();
        let full = if finest.scale_log2 == 0 {
            finest.var
        } else {
            g.bilinear_resize(finest.var, image1.height(), image1.width())?
        };
        FlowField::from_tensor(g.value(full), 0)
    }

    /// Number of stride-2 stages in the encoder (the 1/64 bottleneck).
    pub fn encoder_downsamples(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.name.starts_with("block") || n.name.starts_with("conv"))
            .filter(|n| match &n.op {
                NodeOp::Conv(c) => c.stride == 2,
                NodeOp::Block(b) => b.spec().stride == 2,
                _ => false,
            })
            .count()
    }

    pub fn gate_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, NodeOp::Gate(_)))
            .count()
    }
}

impl<T: Scalar> ParamVisitor<T> for FlowNetwork<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for node in &self.nodes {
            match &node.op {
                NodeOp::Conv(l) => l.visit(f),
                NodeOp::Deconv(l) => l.visit(f),
                NodeOp::Block(b) => b.visit(f),
                NodeOp::Gate(gate) => gate.visit(f),
                _ => {}
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for node in &mut self.nodes {
            match &mut node.op {
                NodeOp::Conv(l) => l.visit_mut(f),
                NodeOp::Deconv(l) => l.visit_mut(f),
                NodeOp::Block(b) => b.visit_mut(f),
                NodeOp::Gate(gate) => gate.visit_mut(f),
                _ => {}
            }
        }
    }
}

/// Stacks two RGB frames into a [1,6,H,W] tensor with values in [-0.5, 0.5].
pub fn images_to_input<T: Scalar>(image1: &RgbImage, image2: &RgbImage) -> Result<Tensor<T>> {
    if image1.width() != image2.width() || image1.height() != image2.height() {
        return Err(Error::shape(
            "image pair",
            &[image1.height(), image1.width()],
            &[image2.height(), image2.width()],
        ));
    }
    let (h, w) = (image1.height(), image1.width());
    let plane = h * w;
    let mut data = vec![T::ZERO; 6 * plane];
    for (slot, img) in [(0usize, image1), (3, image2)] {
        for c in 0..3 {
            for i in 0..plane {
                let byte = img.data()[i * 3 + c];
                data[(slot + c) * plane + i] = T::from_f64(byte as f64 / 255.0 - 0.5);
            }
        }
    }
    Tensor::new(Shape::nchw(1, 6, h, w), data)
}

/// Copies a sample's image pair into one batch slot of a [B,6,H,W] buffer.
pub fn write_input_planes<T: Scalar>(image1: &RgbImage, image2: &RgbImage, dst: &mut [T]) {
    let plane = image1.height() * image1.width();
    debug_assert_eq!(dst.len(), 6 * plane);
    for (slot, img) in [(0usize, image1), (3, image2)] {
        for c in 0..3 {
            for i in 0..plane {
                let byte = img.data()[i * 3 + c];
                dst[(slot + c) * plane + i] = T::from_f64(byte as f64 / 255.0 - 0.5);
            }
        }
    }
}
