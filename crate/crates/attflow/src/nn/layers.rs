use crate::autodiff::{Graph, Scalar, Var};
use crate::error::Result;
use crate::nn::{Initializer, Param, ParamVisitor};

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    None,
    LeakyRelu(f64),
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(LEAKY_SLOPE)
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Var {
        match *self {
            Activation::None => x,
            Activation::LeakyRelu(slope) => g.leaky_relu(x, slope),
        }
    }
}

/// Convolution with bias and optional activation. Padding defaults to
/// floor(k/2), the choice under which stride-2 layers exactly halve even
/// spatial dims.
#[derive(Debug, Clone)]
pub struct ConvLayer<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub activation: Activation,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
        init: &mut Initializer,
    ) -> Self {
        Self::grouped(name, in_ch, out_ch, kernel, stride, 1, activation, init)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn grouped(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        activation: Activation,
        init: &mut Initializer,
    ) -> Self {
        let fan_in = (in_ch / groups) * kernel * kernel;
        let weight = Param::new(
            format!("{name}.weight"),
            init.fan_in_uniform(vec![out_ch, in_ch / groups, kernel, kernel], fan_in),
        );
        let bias = Param::new(format!("{name}.bias"), init.zeros(vec![out_ch]));
        ConvLayer {
            weight,
            bias,
            stride,
            pad: kernel / 2,
            groups,
            activation,
            in_ch,
            out_ch,
            kernel,
        }
    }

    pub fn with_pad(mut self, pad: usize) -> Self {
        self.pad = pad;
        self
    }

    pub fn in_ch(&self) -> usize {
        self.in_ch
    }

    pub fn out_ch(&self) -> usize {
        self.out_ch
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight.id(), &self.weight.value);
        let b = g.param(self.bias.id(), &self.bias.value);
        let y = g.conv2d_grouped(x, w, Some(b), self.stride, self.pad, self.groups)?;
        Ok(self.activation.apply(g, y))
    }
}

impl<T: Scalar> ParamVisitor<T> for ConvLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Transposed convolution with bias and optional activation.
#[derive(Debug, Clone)]
pub struct DeconvLayer<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub pad: usize,
    pub activation: Activation,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
}

impl<T: Scalar> DeconvLayer<T> {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
        init: &mut Initializer,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight = Param::new(
            format!("{name}.weight"),
            init.fan_in_uniform(vec![in_ch, out_ch, kernel, kernel], fan_in),
        );
        let bias = Param::new(format!("{name}.bias"), init.zeros(vec![out_ch]));
        DeconvLayer {
            weight,
            bias,
            stride,
            pad: (kernel - stride).div_ceil(2),
            activation,
            in_ch,
            out_ch,
            kernel,
        }
    }

    /// Zeroes weight and bias so the layer output is identically zero.
    pub fn zeroed(mut self) -> Self {
        self.weight.value = crate::autodiff::Tensor::zeros(self.weight.value.shape().clone());
        self.bias.value = crate::autodiff::Tensor::zeros(self.bias.value.shape().clone());
        self
    }

    pub fn in_ch(&self) -> usize {
        self.in_ch
    }

    pub fn out_ch(&self) -> usize {
        self.out_ch
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight.id(), &self.weight.value);
        let b = g.param(self.bias.id(), &self.bias.value);
        let y = g.deconv2d(x, w, Some(b), self.stride, self.pad)?;
        Ok(self.activation.apply(g, y))
    }
}

impl<T: Scalar> ParamVisitor<T> for DeconvLayer<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Shape, Tensor};

    #[test]
    fn stride2_conv_halves_even_dims() {
        let mut init = Initializer::new(7);
        let layer = ConvLayer::<f32>::new("c", 4, 8, 5, 2, Activation::leaky(), &mut init);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(Shape::nchw(2, 4, 16, 24)));
        let y = layer.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).dims(), &[2, 8, 8, 12]);
    }

    #[test]
    fn deconv_4x4_s2_doubles_dims() {
        let mut init = Initializer::new(7);
        let layer = DeconvLayer::<f32>::new("d", 4, 2, 4, 2, Activation::None, &mut init);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(Shape::nchw(1, 4, 6, 9)));
        let y = layer.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).dims(), &[1, 2, 12, 18]);
    }
}
