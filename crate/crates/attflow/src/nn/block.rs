use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Scalar, Var};
use crate::error::{Error, Result};
use crate::nn::layers::LEAKY_SLOPE;
use crate::nn::{Activation, ConvLayer, Initializer, Param, ParamVisitor};

/// Feature-extractor families selectable for the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Plain,
    Residual,
    Inception,
    Cardinality,
}

/// Declarative description of one extractor block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    /// Width of each of the 4 grouped paths; Cardinality blocks only.
    pub cardinality_width: usize,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        BlockSpec {
            kind,
            in_ch,
            out_ch,
            stride,
            cardinality_width: 0,
        }
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.cardinality_width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_ch == 0 {
            return Err(Error::InvalidArgument("block out_ch must be > 0".into()));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::InvalidArgument(format!(
                "block stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        match self.kind {
            BlockKind::Cardinality if self.cardinality_width == 0 => Err(Error::InvalidArgument(
                "Cardinality block requires a path width".into(),
            )),
            BlockKind::Inception if self.out_ch % 4 != 0 => Err(Error::InvalidArgument(format!(
                "Inception block out_ch must split into 4 equal branches, got {}",
                self.out_ch
            ))),
            _ => Ok(()),
        }
    }
}

const CARDINALITY: usize = 4;

/// Built block with learned weights, ready to run.
#[derive(Debug, Clone)]
pub enum ExtractorBlock<T: Scalar> {
    Plain {
        spec: BlockSpec,
        conv: ConvLayer<T>,
    },
    /// Two 3x3 convs (stride on the first) plus identity or 1x1 projection
    /// shortcut; activation after the add.
    Residual {
        spec: BlockSpec,
        conv1: ConvLayer<T>,
        conv2: ConvLayer<T>,
        shortcut: Option<ConvLayer<T>>,
    },
    /// Four branches (1x1 | 1x1-3x3 | 1x1-5x5 | avgpool-1x1), each producing
    /// out_ch/4 channels, concatenated.
    Inception {
        spec: BlockSpec,
        b1: ConvLayer<T>,
        b2a: ConvLayer<T>,
        b2b: ConvLayer<T>,
        b3a: ConvLayer<T>,
        b3b: ConvLayer<T>,
        b4: ConvLayer<T>,
    },
    /// 1x1 reduce, grouped 3x3 (4 groups of the stated width), 1x1 expand,
    /// plus shortcut; activation after the add.
    Cardinality {
        spec: BlockSpec,
        reduce: ConvLayer<T>,
        grouped: ConvLayer<T>,
        expand: ConvLayer<T>,
        shortcut: Option<ConvLayer<T>>,
    },
}

impl<T: Scalar> ExtractorBlock<T> {
    pub fn build(name: &str, spec: BlockSpec, init: &mut Initializer) -> Result<Self> {
        spec.validate()?;
        let act = Activation::leaky();
        let (i, o, s) = (spec.in_ch, spec.out_ch, spec.stride);
        let needs_projection = i != o || s != 1;
        Ok(match spec.kind {
            BlockKind::Plain => ExtractorBlock::Plain {
                spec,
                conv: ConvLayer::new(&format!("{name}.conv"), i, o, 3, s, act, init),
            },
            BlockKind::Residual => ExtractorBlock::Residual {
                spec,
                conv1: ConvLayer::new(&format!("{name}.conv1"), i, o, 3, s, act, init),
                conv2: ConvLayer::new(&format!("{name}.conv2"), o, o, 3, 1, Activation::None, init),
                shortcut: needs_projection.then(|| {
                    ConvLayer::new(&format!("{name}.proj"), i, o, 1, s, Activation::None, init)
                }),
            },
            BlockKind::Inception => {
                let quarter = o / 4;
                ExtractorBlock::Inception {
                    spec,
                    b1: ConvLayer::new(&format!("{name}.b1"), i, quarter, 1, s, act, init),
                    b2a: ConvLayer::new(&format!("{name}.b2a"), i, quarter, 1, 1, act, init),
                    b2b: ConvLayer::new(&format!("{name}.b2b"), quarter, quarter, 3, s, act, init),
                    b3a: ConvLayer::new(&format!("{name}.b3a"), i, quarter, 1, 1, act, init),
                    b3b: ConvLayer::new(&format!("{name}.b3b"), quarter, quarter, 5, s, act, init),
                    b4: ConvLayer::new(&format!("{name}.b4"), i, quarter, 1, 1, act, init),
                }
            }
            BlockKind::Cardinality => {
                let inner = CARDINALITY * spec.cardinality_width;
                ExtractorBlock::Cardinality {
                    spec,
                    reduce: ConvLayer::new(&format!("{name}.reduce"), i, inner, 1, 1, act, init),
                    grouped: ConvLayer::grouped(
                        &format!("{name}.grouped"),
                        inner,
                        inner,
                        3,
                        s,
                        CARDINALITY,
                        act,
                        init,
                    ),
                    expand: ConvLayer::new(&format!("{name}.expand"), inner, o, 1, 1, Activation::None, init),
                    shortcut: needs_projection.then(|| {
                        ConvLayer::new(&format!("{name}.proj"), i, o, 1, s, Activation::None, init)
                    }),
                }
            }
        })
    }

    pub fn spec(&self) -> &BlockSpec {
        match self {
            ExtractorBlock::Plain { spec, .. }
            | ExtractorBlock::Residual { spec, .. }
            | ExtractorBlock::Inception { spec, .. }
            | ExtractorBlock::Cardinality { spec, .. } => spec,
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let spec = self.spec();
        let got_ch = g.value(x).dims().get(1).copied().unwrap_or(0);
        if got_ch != spec.in_ch {
            return Err(Error::shape(
                format!("block expects {} input channels", spec.in_ch),
                g.value(x).dims(),
                &[spec.in_ch],
            ));
        }
        match self {
            ExtractorBlock::Plain { conv, .. } => conv.forward(g, x),
            ExtractorBlock::Residual {
                conv1,
                conv2,
                shortcut,
                ..
            } => {
                let h = conv1.forward(g, x)?;
                let h = conv2.forward(g, h)?;
                let skip = match shortcut {
                    Some(proj) => proj.forward(g, x)?,
                    None => x,
                };
                let sum = g.add(h, skip)?;
                Ok(g.leaky_relu(sum, LEAKY_SLOPE))
            }
            ExtractorBlock::Inception {
                b1,
                b2a,
                b2b,
                b3a,
                b3b,
                b4,
                ..
            } => {
                let spec = *self.spec();
                let y1 = b1.forward(g, x)?;
                let y2 = b2a.forward(g, x)?;
                let y2 = b2b.forward(g, y2)?;
                let y3 = b3a.forward(g, x)?;
                let y3 = b3b.forward(g, y3)?;
                let pooled = g.avg_pool2d_padded(x, 3, spec.stride, 1)?;
                let y4 = b4.forward(g, pooled)?;
                g.concat_channels(&[y1, y2, y3, y4])
            }
            ExtractorBlock::Cardinality {
                reduce,
                grouped,
                expand,
                shortcut,
                ..
            } => {
                let h = reduce.forward(g, x)?;
                let h = grouped.forward(g, h)?;
                let h = expand.forward(g, h)?;
                let skip = match shortcut {
                    Some(proj) => proj.forward(g, x)?,
                    None => x,
                };
                let sum = g.add(h, skip)?;
                Ok(g.leaky_relu(sum, LEAKY_SLOPE))
            }
        }
    }
}

impl<T: Scalar> ParamVisitor<T> for ExtractorBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        match self {
            ExtractorBlock::Plain { conv, .. } => conv.visit(f),
            ExtractorBlock::Residual {
                conv1,
                conv2,
                shortcut,
                ..
            } => {
                conv1.visit(f);
                conv2.visit(f);
                if let Some(p) = shortcut {
                    p.visit(f);
                }
            }
            ExtractorBlock::Inception {
                b1,
                b2a,
                b2b,
                b3a,
                b3b,
                b4,
                ..
            } => {
                for layer in [b1, b2a, b2b, b3a, b3b, b4] {
                    layer.visit(f);
                }
            }
            ExtractorBlock::Cardinality {
                reduce,
                grouped,
                expand,
                shortcut,
                ..
            } => {
                reduce.visit(f);
                grouped.visit(f);
                expand.visit(f);
                if let Some(p) = shortcut {
                    p.visit(f);
                }
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            ExtractorBlock::Plain { conv, .. } => conv.visit_mut(f),
            ExtractorBlock::Residual {
                conv1,
                conv2,
                shortcut,
                ..
            } => {
                conv1.visit_mut(f);
                conv2.visit_mut(f);
                if let Some(p) = shortcut {
                    p.visit_mut(f);
                }
            }
            ExtractorBlock::Inception {
                b1,
                b2a,
                b2b,
                b3a,
                b3b,
                b4,
                ..
            } => {
                for layer in [b1, b2a, b2b, b3a, b3b, b4] {
                    layer.visit_mut(f);
                }
            }
            ExtractorBlock::Cardinality {
                reduce,
                grouped,
                expand,
                shortcut,
                ..
            } => {
                reduce.visit_mut(f);
                grouped.visit_mut(f);
                expand.visit_mut(f);
                if let Some(p) = shortcut {
                    p.visit_mut(f);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Shape, Tensor};

    fn run_block(spec: BlockSpec, b: usize, h: usize, w: usize) -> Vec<usize> {
        let mut init = Initializer::new(11);
        let block = ExtractorBlock::<f32>::build("t", spec, &mut init).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(Shape::nchw(b, spec.in_ch, h, w), 0.1));
        let y = block.forward(&mut g, x).unwrap();
        g.value(y).dims().to_vec()
    }

    #[test]
    fn blocks_obey_channel_and_stride_contracts() {
        for kind in [
            BlockKind::Plain,
            BlockKind::Residual,
            BlockKind::Inception,
            BlockKind::Cardinality,
        ] {
            for stride in [1, 2] {
                let spec = BlockSpec::new(kind, 16, 32, stride).with_width(8);
                let dims = run_block(spec, 2, 8, 8);
                let expect_hw = if stride == 2 { 4 } else { 8 };
                assert_eq!(dims, vec![2, 32, expect_hw, expect_hw], "{kind:?} s{stride}");
            }
        }
    }

    #[test]
    fn residual_zero_weights_pass_activation_of_input() {
        let spec = BlockSpec::new(BlockKind::Residual, 8, 8, 1);
        let mut init = Initializer::new(3);
        let mut block = ExtractorBlock::<f64>::build("t", spec, &mut init).unwrap();
        // zero both convs: residual branch contributes conv2.bias = 0
        block.visit_mut(&mut |p| p.value = Tensor::zeros(p.value.shape().clone()));
        let mut g = Graph::new();
        let data: Vec<f64> = (0..8 * 4 * 4).map(|i| (i as f64) * 0.1 - 1.0).collect();
        let x_t = Tensor::new(Shape::nchw(1, 8, 4, 4), data.clone()).unwrap();
        let x = g.constant(x_t);
        let y = block.forward(&mut g, x).unwrap();
        for (xi, yi) in data.iter().zip(g.value(y).data()) {
            let expect = if *xi > 0.0 { *xi } else { xi * LEAKY_SLOPE };
            assert!((yi - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn cardinality_counts_grouped_channels() {
        let spec = BlockSpec::new(BlockKind::Cardinality, 128, 256, 1).with_width(32);
        let mut init = Initializer::new(5);
        let block = ExtractorBlock::<f32>::build("t", spec, &mut init).unwrap();
        // 4 paths of width 32: grouped conv holds 128 channels in 4 groups
        let ExtractorBlock::Cardinality { grouped, .. } = &block else {
            panic!("wrong variant")
        };
        assert_eq!(grouped.in_ch(), 128);
        assert_eq!(grouped.groups, 4);
        assert_eq!(grouped.weight.value.dims(), &[128, 32, 3, 3]);
        let dims = run_block(spec, 1, 4, 4);
        assert_eq!(dims, vec![1, 256, 4, 4]);
    }

    #[test]
    fn inception_branches_sum_to_out_channels() {
        let dims = run_block(BlockSpec::new(BlockKind::Inception, 64, 128, 1), 1, 4, 4);
        assert_eq!(dims, vec![1, 128, 4, 4]);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let spec = BlockSpec::new(BlockKind::Plain, 16, 32, 1);
        let mut init = Initializer::new(1);
        let block = ExtractorBlock::<f32>::build("t", spec, &mut init).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(Shape::nchw(1, 8, 4, 4)));
        assert!(block.forward(&mut g, x).is_err());
    }
}
