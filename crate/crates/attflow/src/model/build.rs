//! Constructs the layer graph for each zoo entry.
//!
//! Decoder notes, shared by every variant:
//! - "up*" layers carry flow predictions between scales and are plain 4x4
//!   stride-2 deconvolutions with no activation.
//! - "deconv*" feature layers are 4x4 stride-2 and LeakyRelu-activated,
//!   except where an attention gate replaces the activation.
//! - In the midway decoder, `deconv4`/`deconv5` and `down4`/`down5` run the
//!   coarse direction, so they are stride-2 4x4 *convolutions*: the fusion
//!   tensor sits at 1/16 and the coarse predictions at 1/32 and 1/64.
//! - Attention gates replace the activation of decoder feature deconvs at
//!   1/4 scale and finer, where the channel count divides by 8 (the gate
//!   bottleneck needs /4 and /8). Those are the contour scales every
//!   remaining prediction reads; coarse refinement and the encoder stay
//!   linear so the gates do not slow the early global-motion phase.

use crate::autodiff::Scalar;
use crate::error::Result;
use crate::model::network::{LayerNode, NodeOp};
use crate::model::{ExtractorKind, FlowNetwork, ModelSpec, FLOW_SCALE, GATE_MAX_SCALE_LOG2};
use crate::nn::{
    Activation, AttentionGate, BlockKind, BlockSpec, ConvLayer, DeconvLayer, ExtractorBlock,
    Initializer,
};

struct NetBuilder<T: Scalar> {
    nodes: Vec<LayerNode<T>>,
    init: Initializer,
    gates_enabled: bool,
}

impl<T: Scalar> NetBuilder<T> {
    fn new(seed: u64, gates_enabled: bool) -> Self {
        NetBuilder {
            nodes: Vec::new(),
            init: Initializer::new(seed),
            gates_enabled,
        }
    }

    fn push(&mut self, name: &str, op: NodeOp<T>, inputs: Vec<usize>, scale: u8) -> usize {
        self.nodes.push(LayerNode {
            name: name.to_string(),
            op,
            inputs,
            scale_log2: scale,
        });
        self.nodes.len() - 1
    }

    fn input(&mut self) -> usize {
        self.push("input", NodeOp::Input, vec![], 0)
    }

    fn scale_of(&self, idx: usize) -> u8 {
        self.nodes[idx].scale_log2
    }

    fn conv(
        &mut self,
        name: &str,
        src: usize,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        act: Activation,
    ) -> usize {
        let mut layer = ConvLayer::new(name, in_ch, out_ch, k, stride, act, &mut self.init);
        if k % 2 == 0 {
            // even kernels halve exactly with p = (k - stride)/2
            layer = layer.with_pad((k - stride) / 2);
        }
        let scale = self.scale_of(src) + (stride / 2) as u8;
        self.push(name, NodeOp::Conv(layer), vec![src], scale)
    }

    fn deconv(
        &mut self,
        name: &str,
        src: usize,
        in_ch: usize,
        out_ch: usize,
        act: Activation,
    ) -> usize {
        let layer = DeconvLayer::new(name, in_ch, out_ch, 4, 2, act, &mut self.init);
        let scale = self.scale_of(src) - 1;
        self.push(name, NodeOp::Deconv(layer), vec![src], scale)
    }

    fn block(&mut self, name: &str, src: usize, spec: BlockSpec) -> Result<usize> {
        let block = ExtractorBlock::build(name, spec, &mut self.init)?;
        let scale = self.scale_of(src) + (spec.stride / 2) as u8;
        Ok(self.push(name, NodeOp::Block(block), vec![src], scale))
    }

    fn avgpool(&mut self, name: &str, src: usize, factor: usize) -> usize {
        let scale = self.scale_of(src) + factor.trailing_zeros() as u8;
        self.push(
            name,
            NodeOp::AvgPool {
                k: factor,
                stride: factor,
            },
            vec![src],
            scale,
        )
    }

    fn bilinear_to(&mut self, name: &str, src: usize, reference: usize) -> usize {
        let scale = self.scale_of(reference);
        self.push(name, NodeOp::BilinearTo { reference }, vec![src], scale)
    }

    fn concat(&mut self, name: &str, srcs: &[usize]) -> usize {
        let scale = self.scale_of(srcs[0]);
        self.push(name, NodeOp::Concat, srcs.to_vec(), scale)
    }

    /// Wraps `src` in an attention gate when gating is on and the feature
    /// qualifies (fine enough scale, channels divisible by 8). Returns the
    /// node downstream consumers should read.
    fn maybe_gate(&mut self, src: usize, channels: usize) -> Result<usize> {
        let scale = self.scale_of(src);
        if !self.gates_enabled || scale > GATE_MAX_SCALE_LOG2 || channels % 8 != 0 || channels == 0
        {
            return Ok(src);
        }
        let name = format!("{}.att", self.nodes[src].name);
        let gate = AttentionGate::build(&name, channels, &mut self.init)?;
        Ok(self.push(&name, NodeOp::Gate(gate), vec![src], scale))
    }

    /// Stride-2 feature deconv whose LeakyRelu is replaced by an attention
    /// gate at gated positions.
    fn decoder_deconv(&mut self, name: &str, src: usize, in_ch: usize, out_ch: usize) -> Result<usize> {
        let out_scale = self.scale_of(src) - 1;
        let will_gate = self.gates_enabled
            && out_scale <= GATE_MAX_SCALE_LOG2
            && out_ch % 8 == 0
            && out_ch > 0;
        let act = if will_gate {
            Activation::None
        } else {
            Activation::leaky()
        };
        let raw = self.deconv(name, src, in_ch, out_ch, act);
        self.maybe_gate(raw, out_ch)
    }

    /// Prediction head: a 3x3 conv regressing flow at 1/FLOW_SCALE of pixel
    /// units, plus the constant rescale to pixels. Returns (raw, pixels);
    /// inter-scale flow carriers consume the raw node, the pyramid exposes
    /// the pixel node.
    fn predict(&mut self, name: &str, src: usize, in_ch: usize) -> (usize, usize) {
        let raw = self.conv(name, src, in_ch, 2, 3, 1, Activation::None);
        let scale = self.scale_of(raw);
        let px = self.push(
            &format!("{name}.flow"),
            NodeOp::Scale { factor: FLOW_SCALE },
            vec![raw],
            scale,
        );
        (raw, px)
    }

    /// Plain stride-2 deconv carrying a 2-channel raw flow between scales.
    fn upflow(&mut self, name: &str, src: usize) -> usize {
        self.deconv(name, src, 2, 2, Activation::None)
    }
}

pub(crate) fn build_network<T: Scalar>(spec: ModelSpec, seed: u64) -> Result<FlowNetwork<T>> {
    spec.validate()?;
    let mut b = NetBuilder::new(seed, spec.use_attention);
    let input = b.input();
    let ch = spec.channels();
    let enc = build_encoder(&mut b, &spec, input, &ch)?;
    let predictions = if spec.use_midway {
        build_midway_decoder(&mut b, &enc, &ch, spec.channel_divisor)?
    } else {
        build_refinement_decoder(&mut b, &enc, &ch, &spec)?
    };
    Ok(FlowNetwork::from_parts(spec, b.nodes, predictions))
}

/// Encoder: ten stages to the 1/64 bottleneck. Returns the node index of
/// every stage output (block1..block6_1).
fn build_encoder<T: Scalar>(
    b: &mut NetBuilder<T>,
    spec: &ModelSpec,
    input: usize,
    ch: &[usize; 10],
) -> Result<[usize; 10]> {
    let names = [
        "block1", "block2", "block3", "block3_1", "block4", "block4_1", "block5", "block5_1",
        "block6", "block6_1",
    ];
    let strides = [2usize, 2, 2, 1, 2, 1, 2, 1, 2, 1];

    let mut out = [0usize; 10];
    match spec.extractor {
        ExtractorKind::Plain => {
            // the original plain-conv encoder: 7x7, two 5x5, then 3x3
            let kernels = [7usize, 5, 5, 3, 3, 3, 3, 3, 3, 3];
            let mut src = input;
            let mut in_ch = 6;
            for i in 0..10 {
                src = b.conv(
                    names[i],
                    src,
                    in_ch,
                    ch[i],
                    kernels[i],
                    strides[i],
                    Activation::leaky(),
                );
                in_ch = ch[i];
                out[i] = src;
            }
        }
        family => {
            let kind = match family {
                ExtractorKind::Res => BlockKind::Residual,
                ExtractorKind::Inc => BlockKind::Inception,
                ExtractorKind::NeXt32 | ExtractorKind::NeXt64 => BlockKind::Cardinality,
                ExtractorKind::Plain => unreachable!(),
            };
            let width = family
                .cardinality_width()
                .map(|w| (w / spec.channel_divisor).max(1))
                .unwrap_or(0);
            // block1 stays a plain 7x7 stride-2 conv over the 6-channel stack
            let mut src = b.conv("block1", input, 6, ch[0], 7, 2, Activation::leaky());
            out[0] = src;
            let mut in_ch = ch[0];
            for i in 1..10 {
                let bs = BlockSpec::new(kind, in_ch, ch[i], strides[i]).with_width(width);
                src = b.block(names[i], src, bs)?;
                in_ch = ch[i];
                out[i] = src;
            }
        }
    }
    Ok(out)
}

/// The coarse-to-fine refinement decoder: predictions from 1/64 up to 1/4,
/// extended to full resolution for attention variants.
fn build_refinement_decoder<T: Scalar>(
    b: &mut NetBuilder<T>,
    enc: &[usize; 10],
    ch: &[usize; 10],
    spec: &ModelSpec,
) -> Result<Vec<(u8, usize)>> {
    let d = spec.channel_divisor;
    let dec = [512 / d, 256 / d, 128 / d, 64 / d, 32 / d, 16 / d]; // deconv5..deconv0 outputs
    let mut preds = Vec::new();

    let (pr6, pr6_px) = b.predict("pr6", enc[9], ch[9]);
    preds.push((6u8, pr6_px));

    let deconv5 = b.deconv("deconv5", enc[9], ch[9], dec[0], Activation::leaky());
    let up6 = b.upflow("upflow6", pr6);
    let cat5 = b.concat("concat5", &[enc[7], deconv5, up6]);
    let c5 = ch[7] + dec[0] + 2;
    let (pr5, pr5_px) = b.predict("pr5", cat5, c5);
    preds.push((5, pr5_px));

    let deconv4 = b.deconv("deconv4", cat5, c5, dec[1], Activation::leaky());
    let up5 = b.upflow("upflow5", pr5);
    let cat4 = b.concat("concat4", &[enc[5], deconv4, up5]);
    let c4 = ch[5] + dec[1] + 2;
    let (pr4, pr4_px) = b.predict("pr4", cat4, c4);
    preds.push((4, pr4_px));

    let deconv3 = b.deconv("deconv3", cat4, c4, dec[2], Activation::leaky());
    let up4 = b.upflow("upflow4", pr4);
    let cat3 = b.concat("concat3", &[enc[3], deconv3, up4]);
    let c3 = ch[3] + dec[2] + 2;
    let (pr3, pr3_px) = b.predict("pr3", cat3, c3);
    preds.push((3, pr3_px));

    let deconv2 = b.decoder_deconv("deconv2", cat3, c3, dec[3])?;
    let up3 = b.upflow("upflow3", pr3);
    let cat2 = b.concat("concat2", &[enc[1], deconv2, up3]);
    let c2 = ch[1] + dec[3] + 2;
    let (pr2, pr2_px) = b.predict("pr2", cat2, c2);
    preds.push((2, pr2_px));

    if spec.full_resolution_output {
        let deconv1 = b.decoder_deconv("deconv1", cat2, c2, dec[4])?;
        let up2 = b.upflow("upflow2", pr2);
        let cat1 = b.concat("concat1", &[enc[0], deconv1, up2]);
        let c1 = ch[0] + dec[4] + 2;
        let (pr1, pr1_px) = b.predict("pr1", cat1, c1);
        preds.push((1, pr1_px));

        let deconv0 = b.decoder_deconv("deconv0", cat1, c1, dec[5])?;
        let up1 = b.upflow("upflow1", pr1);
        let cat0 = b.concat("concat0", &[deconv0, up1]);
        let c0 = dec[5] + 2;
        let (_pr0, pr0_px) = b.predict("pr0", cat0, c0);
        preds.push((0, pr0_px));
    }
    Ok(preds)
}

/// The midway decoder: deep and shallow features are pulled to block4_1's
/// 1/16 scale and fused into one wide tensor; the mid-scale flow comes out
/// first, is extended down to 1/32 and 1/64, then refined up to full
/// resolution.
fn build_midway_decoder<T: Scalar>(
    b: &mut NetBuilder<T>,
    enc: &[usize; 10],
    ch: &[usize; 10],
    divisor: usize,
) -> Result<Vec<(u8, usize)>> {
    let d = divisor;
    let mut preds = Vec::new();

    // pull everything to block4_1's scale
    let biup_1 = b.bilinear_to("biup_1", enc[9], enc[5]);
    let biup_2 = b.bilinear_to("biup_2", enc[7], enc[5]);
    let avgdown_1 = b.avgpool("avgdown_1", enc[3], 2);
    let avgdown_2 = b.avgpool("avgdown_2", enc[1], 4);
    let fusion = b.concat("concat", &[biup_1, biup_2, enc[5], avgdown_1, avgdown_2]);
    let fusion_ch = ch[9] + ch[7] + ch[5] + ch[3] + ch[1];

    let (pr4, pr4_px) = b.predict("pr4", fusion, fusion_ch);
    preds.push((4u8, pr4_px));

    // coarse direction: stride-2 convolutions down to 1/32 and 1/64
    let down4 = b.conv("down4", pr4, 2, 2, 4, 2, Activation::None);
    let deconv4 = b.conv("deconv4", fusion, fusion_ch, ch[7], 4, 2, Activation::leaky());
    let cat5 = b.concat("concat5", &[enc[7], deconv4, down4]);
    let c5 = ch[7] + ch[7] + 2;
    let (pr5, pr5_px) = b.predict("pr5", cat5, c5);
    preds.push((5, pr5_px));

    let down5 = b.conv("down5", pr5, 2, 2, 4, 2, Activation::None);
    let deconv5 = b.conv("deconv5", cat5, c5, ch[9], 4, 2, Activation::leaky());
    let cat6 = b.concat("concat6", &[enc[9], deconv5, down5]);
    let c6 = ch[9] + ch[9] + 2;
    let (_pr6, pr6_px) = b.predict("pr6", cat6, c6);
    preds.push((6, pr6_px));

    // fine direction: transposed convolutions back to full resolution
    let up4 = b.upflow("up4", pr4);
    let deconv3 = b.deconv("deconv3", fusion, fusion_ch, ch[3], Activation::leaky());
    let cat3 = b.concat("concat3", &[enc[3], deconv3, up4]);
    let c3 = ch[3] + ch[3] + 2;
    let (pr3, pr3_px) = b.predict("pr3", cat3, c3);
    preds.push((3, pr3_px));

    let up3 = b.upflow("up3", pr3);
    let deconv2 = b.decoder_deconv("deconv2", cat3, c3, ch[1])?;
    let cat2 = b.concat("concat2", &[enc[1], deconv2, up3]);
    let c2 = ch[1] + ch[1] + 2;
    let (pr2, pr2_px) = b.predict("pr2", cat2, c2);
    preds.push((2, pr2_px));

    let up2 = b.upflow("up2", pr2);
    let deconv1 = b.decoder_deconv("deconv1", cat2, c2, 64 / d)?;
    let cat1 = b.concat("concat1", &[deconv1, up2]);
    let c1 = 64 / d + 2;
    let (pr1, pr1_px) = b.predict("pr1", cat1, c1);
    preds.push((1, pr1_px));

    let up1 = b.upflow("up1", pr1);
    let deconv0 = b.decoder_deconv("deconv0", cat1, c1, 32 / d)?;
    let cat0 = b.concat("concat0", &[deconv0, up1]);
    let c0 = 32 / d + 2;
    let (_pr0, pr0_px) = b.predict("pr0", cat0, c0);
    preds.push((0, pr0_px));

    Ok(preds)
}
