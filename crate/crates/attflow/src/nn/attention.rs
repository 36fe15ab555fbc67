use crate::autodiff::{Graph, Scalar, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvLayer, DeconvLayer, Initializer, Param, ParamVisitor};

/// Sigmoid attention gate: y = sigmoid(x + x * A(x)) where A squeezes the
/// feature map through a x/4, x/8 bottleneck and expands back. The final
/// deconv starts zeroed, so a fresh gate computes sigmoid(x) exactly.
#[derive(Debug, Clone)]
pub struct AttentionGate<T: Scalar> {
    channels: usize,
    attconv1: ConvLayer<T>,
    attconv2: ConvLayer<T>,
    attdeconv1: DeconvLayer<T>,
    attdeconv2: DeconvLayer<T>,
}

impl<T: Scalar> AttentionGate<T> {
    pub fn build(name: &str, channels: usize, init: &mut Initializer) -> Result<Self> {
        if channels % 8 != 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "attention gate needs channels divisible by 8, got {channels}"
            )));
        }
        let act = Activation::leaky();
        Ok(AttentionGate {
            channels,
            attconv1: ConvLayer::new(&format!("{name}.attconv1"), channels, channels / 4, 3, 2, act, init),
            attconv2: ConvLayer::new(
                &format!("{name}.attconv2"),
                channels / 4,
                channels / 8,
                3,
                2,
                act,
                init,
            ),
            attdeconv1: DeconvLayer::new(
                &format!("{name}.attdeconv1"),
                channels / 8,
                channels / 4,
                4,
                2,
                act,
                init,
            ),
            attdeconv2: DeconvLayer::new(
                &format!("{name}.attdeconv2"),
                channels / 4,
                channels,
                4,
                2,
                Activation::None,
                init,
            )
            .zeroed(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// The mask sub-network A(x): S -> S/2 -> S/4 -> S/2 -> S spatially.
    fn mask(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let a = self.attconv1.forward(g, x)?;
        let a = self.attconv2.forward(g, a)?;
        let a = self.attdeconv1.forward(g, a)?;
        self.attdeconv2.forward(g, a)
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (_, c, h, w) = g.value(x).shape().as_nchw()?;
        if c != self.channels {
            return Err(Error::shape(
                format!("attention gate built for {} channels", self.channels),
                g.value(x).dims(),
                &[self.channels],
            ));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Indivisible {
                h,
                w,
                multiple: 4,
                context: "attention gate (two stride-2 layers down and back up)".into(),
            });
        }
        let a = self.mask(g, x)?;
        let xa = g.mul(x, a)?;
        let gated = g.add(x, xa)?;
        Ok(g.sigmoid(gated))
    }
}

impl<T: Scalar> ParamVisitor<T> for AttentionGate<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.attconv1.visit(f);
        self.attconv2.visit(f);
        self.attdeconv1.visit(f);
        self.attdeconv2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.attconv1.visit_mut(f);
        self.attconv2.visit_mut(f);
        self.attdeconv1.visit_mut(f);
        self.attdeconv2.visit_mut(f);
    }
}

/// Exact learned-parameter count of a gate over `channels` feature maps
/// (weights + biases of the four layers).
pub fn attention_param_count(channels: usize) -> usize {
    assert!(
        channels % 8 == 0 && channels > 0,
        "gate channels must be divisible by 8, got {channels}"
    );
    let c = channels;
    let q = c / 4;
    let e = c / 8;
    (9 * c * q + q) + (9 * q * e + e) + (16 * e * q + q) + (16 * q * c + c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Shape, Tensor};

    #[test]
    fn param_count_closed_form_512() {
        assert_eq!(attention_param_count(512), 1_844_032);
    }

    #[test]
    fn param_count_matches_built_gate() {
        for c in [8usize, 16, 64] {
            let mut init = Initializer::new(2);
            let gate = AttentionGate::<f32>::build("g", c, &mut init).unwrap();
            assert_eq!(gate.param_count(), attention_param_count(c), "channels {c}");
        }
    }

    #[test]
    fn count_scales_roughly_quadratically() {
        let r = attention_param_count(1024) as f64 / attention_param_count(512) as f64;
        assert!((r - 4.0).abs() < 0.1, "ratio {r}");
    }

    #[test]
    fn fresh_gate_is_sigmoid_identity() {
        let mut init = Initializer::new(9);
        let gate = AttentionGate::<f64>::build("g", 8, &mut init).unwrap();
        let mut g = Graph::new();
        let data: Vec<f64> = (0..8 * 4 * 4).map(|i| (i as f64) * 0.31 - 6.0).collect();
        let x_t = Tensor::new(Shape::nchw(1, 8, 4, 4), data).unwrap();
        let x = g.constant(x_t.clone());
        let y = gate.forward(&mut g, x).unwrap();
        for (xv, yv) in x_t.data().iter().zip(g.value(y).data()) {
            let expect = 1.0 / (1.0 + (-xv).exp());
            assert!((yv - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_gives_half() {
        let mut init = Initializer::new(9);
        let gate = AttentionGate::<f64>::build("g", 8, &mut init).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(Shape::nchw(1, 8, 4, 4)));
        let y = gate.forward(&mut g, x).unwrap();
        assert!(g.value(y).data().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn output_stays_inside_open_unit_interval() {
        let mut init = Initializer::new(42);
        let mut gate = AttentionGate::<f64>::build("g", 8, &mut init).unwrap();
        // un-zero the last deconv so the mask is active
        let mut init2 = Initializer::new(43);
        gate.visit_mut(&mut |p| {
            if p.name().contains("attdeconv2.weight") {
                let shape = p.value.shape().clone();
                p.value = init2.fan_in_uniform(shape, 2 * 16);
            }
        });
        let mut g = Graph::new();
        let data: Vec<f64> = (0..8 * 8 * 8).map(|i| ((i * 37) % 80) as f64 / 10.0 - 4.0).collect();
        let x = g.constant(Tensor::new(Shape::nchw(1, 8, 8, 8), data).unwrap());
        let y = gate.forward(&mut g, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn indivisible_spatial_dims_report_requirement() {
        let mut init = Initializer::new(1);
        let gate = AttentionGate::<f32>::build("g", 8, &mut init).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(Shape::nchw(1, 8, 6, 8)));
        let err = gate.forward(&mut g, x).unwrap_err();
        assert!(err.to_string().contains("divisible by 4"), "{err}");
    }

    #[test]
    fn scalar_probe_formula() {
        // x = 1 with the mask forced to 1: y = sigmoid(1 + 1*1) = sigmoid(2)
        let x = 1.0f64;
        let a = 1.0f64;
        let y = 1.0 / (1.0 + (-(x + x * a)).exp());
        assert!((y - 0.880797).abs() < 1e-6);
    }

    #[test]
    fn monotone_gating_for_frozen_nonnegative_mask() {
        // with A(x) frozen at c >= 0, larger nonnegative inputs gate larger
        for c in [0.0f64, 0.5, 2.0] {
            let f = |x: f64| 1.0 / (1.0 + (-(x + x * c)).exp());
            let mut prev = f(0.0);
            for i in 1..20 {
                let cur = f(i as f64 * 0.37);
                assert!(cur > prev);
                prev = cur;
            }
        }
    }
}
