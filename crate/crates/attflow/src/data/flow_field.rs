use crate::autodiff::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Dense H×W field of (u,v) pixel displacements, stored row-major with the
/// two components interleaved — the same layout the `.flo` format uses.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 2 {
            return Err(Error::InvalidArgument(format!(
                "flow field {width}x{height} needs {} floats, got {}",
                width * height * 2,
                data.len()
            )));
        }
        Ok(FlowField {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            data: vec![0.0; width * height * 2],
        }
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        let mut data = Vec::with_capacity(width * height * 2);
        for _ in 0..width * height {
            data.push(u);
            data.push(v);
        }
        FlowField {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    pub fn set(&mut self, x: usize, y: usize, u: f32, v: f32) {
        let i = (y * self.width + x) * 2;
        self.data[i] = u;
        self.data[i + 1] = v;
    }

    pub fn max_norm(&self) -> f32 {
        self.data
            .chunks_exact(2)
            .map(|uv| (uv[0] * uv[0] + uv[1] * uv[1]).sqrt())
            .fold(0.0, f32::max)
    }

    /// Mean displacement magnitude; the endpoint error of the zero-flow
    /// predictor against this field as ground truth.
    pub fn mean_norm(&self) -> f64 {
        let n = (self.width * self.height) as f64;
        self.data
            .chunks_exact(2)
            .map(|uv| ((uv[0] as f64).powi(2) + (uv[1] as f64).powi(2)).sqrt())
            .sum::<f64>()
            / n
    }

    /// Planar [1,2,H,W] tensor (u plane then v plane).
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        let mut out = vec![T::ZERO; 2 * plane];
        for i in 0..plane {
            out[i] = T::from_f32(self.data[2 * i]);
            out[plane + i] = T::from_f32(self.data[2 * i + 1]);
        }
        Tensor::new(Shape::nchw(1, 2, self.height, self.width), out).expect("sized correctly")
    }

    /// Copies the planar (u,v) planes into a batch slot of a [B,2,H,W] buffer.
    pub fn write_planar<T: Scalar>(&self, dst: &mut [T]) {
        let plane = self.width * self.height;
        debug_assert_eq!(dst.len(), 2 * plane);
        for i in 0..plane {
            dst[i] = T::from_f32(self.data[2 * i]);
            dst[plane + i] = T::from_f32(self.data[2 * i + 1]);
        }
    }

    /// Extracts one batch item of a planar [B,2,H,W] tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, batch: usize) -> Result<Self> {
        let (b, c, h, w) = t.shape().as_nchw()?;
        if c != 2 || batch >= b {
            return Err(Error::InvalidArgument(format!(
                "expected [B,2,H,W] with batch < {b}, got shape {:?} batch {batch}",
                t.dims()
            )));
        }
        let plane = h * w;
        let base = batch * 2 * plane;
        let mut data = vec![0.0f32; 2 * plane];
        for i in 0..plane {
            data[2 * i] = t.data()[base + i].to_f32();
            data[2 * i + 1] = t.data()[base + plane + i].to_f32();
        }
        FlowField::new(w, h, data)
    }

    /// Downsamples by an integer factor with box averaging; flow values stay
    /// in full-resolution pixel units.
    pub fn downsample(&self, factor: usize) -> Result<FlowField> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "downsample factor {factor} must divide {}x{}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let inv = 1.0 / (factor * factor) as f32;
        let mut out = FlowField::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut su = 0.0;
                let mut sv = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        let (u, v) = self.get(x * factor + dx, y * factor + dy);
                        su += u;
                        sv += v;
                    }
                }
                out.set(x, y, su * inv, sv * inv);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let mut f = FlowField::zeros(3, 2);
        f.set(0, 0, 1.0, -2.0);
        f.set(2, 1, 0.5, 4.0);
        let t = f.to_tensor::<f64>();
        assert_eq!(t.dims(), &[1, 2, 2, 3]);
        let back = FlowField::from_tensor(&t, 0).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn downsample_averages_and_keeps_units() {
        let f = FlowField::constant(4, 4, 3.0, -1.0);
        let d = f.downsample(2).unwrap();
        assert_eq!(d.width(), 2);
        assert_eq!(d.get(1, 1), (3.0, -1.0));
    }
}
