//! Layered affine scenes with analytically exact ground-truth flow. Frame 2
//! is the same continuous scene re-rendered under each layer's affine motion,
//! so labels are exact by construction rather than by resampling.

use crate::data::{FlowField, NoiseTexture, RgbImage};
use crate::error::{Error, Result};

/// 2-D affine map p -> M p + t with M = [[a,b],[c,d]], t = (tx,ty).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine {
    pub fn identity() -> Self {
        Affine {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine {
            tx,
            ty,
            ..Affine::identity()
        }
    }

    /// Rotation+scale about a fixed point, then an extra translation.
    pub fn similarity_about(cx: f64, cy: f64, angle: f64, scale: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let (a, b, c2, d) = (scale * c, -scale * s, scale * s, scale * c);
        // fixed point: A(cx,cy) = (cx,cy) before the extra translation
        Affine {
            a,
            b,
            c: c2,
            d,
            tx: cx - a * cx - b * cy + tx,
            ty: cy - c2 * cx - d * cy + ty,
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.tx,
            self.c * x + self.d * y + self.ty,
        )
    }

    pub fn displacement(&self, x: f64, y: f64) -> (f64, f64) {
        let (px, py) = self.apply(x, y);
        (px - x, py - y)
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn inverse(&self) -> Result<Affine> {
        let det = self.det();
        if det.abs() < 1e-12 {
            return Err(Error::InvalidArgument(
                "affine motion is singular; cannot invert".into(),
            ));
        }
        let (ia, ib, ic, id) = (self.d / det, -self.b / det, -self.c / det, self.a / det);
        Ok(Affine {
            a: ia,
            b: ib,
            c: ic,
            d: id,
            tx: -(ia * self.tx + ib * self.ty),
            ty: -(ic * self.tx + id * self.ty),
        })
    }
}

/// Region owned by a layer, tested in continuous frame-1 coordinates.
#[derive(Debug, Clone)]
pub enum ShapeMask {
    Ellipse {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        /// rotation of the axes, radians
        rot: f64,
    },
    /// Convex polygon, vertices in counter-clockwise order.
    Polygon { points: Vec<[f64; 2]> },
}

impl ShapeMask {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            ShapeMask::Ellipse { cx, cy, rx, ry, rot } => {
                let (s, c) = rot.sin_cos();
                let dx = x - cx;
                let dy = y - cy;
                let lx = (c * dx + s * dy) / rx;
                let ly = (-s * dx + c * dy) / ry;
                lx * lx + ly * ly <= 1.0
            }
            ShapeMask::Polygon { points } => {
                if points.len() < 3 {
                    return false;
                }
                for i in 0..points.len() {
                    let p = points[i];
                    let q = points[(i + 1) % points.len()];
                    let cross = (q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0]);
                    if cross < 0.0 {
                        return false;
                    }
                }
                true
            }
        }
    }

    /// Axis-aligned bounding box (conservative for rotated ellipses).
    pub fn bbox(&self) -> [f64; 4] {
        match self {
            ShapeMask::Ellipse { cx, cy, rx, ry, .. } => {
                let r = rx.max(*ry);
                [cx - r, cy - r, cx + r, cy + r]
            }
            ShapeMask::Polygon { points } => {
                let mut bb = [f64::MAX, f64::MAX, f64::MIN, f64::MIN];
                for p in points {
                    bb[0] = bb[0].min(p[0]);
                    bb[1] = bb[1].min(p[1]);
                    bb[2] = bb[2].max(p[0]);
                    bb[3] = bb[3].max(p[1]);
                }
                bb
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub mask: ShapeMask,
    pub texture: NoiseTexture,
    pub motion: Affine,
}

/// One synthetic sample: a layered scene with per-layer affine motion.
/// `layers` are ordered bottom to top; the last layer wins overlaps.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub seed: u64,
    /// (height, width)
    pub canvas: (usize, usize),
    pub background_texture: NoiseTexture,
    pub background_motion: Affine,
    pub layers: Vec<LayerSpec>,
    pub max_displacement: f64,
}

pub const DEFAULT_MAX_DISPLACEMENT: f64 = 16.0;
pub const MAX_LAYERS: usize = 8;

#[derive(Debug, Clone)]
pub struct SamplePair {
    pub image1: RgbImage,
    pub image2: RgbImage,
    pub gt: FlowField,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.canvas;
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument("empty canvas".into()));
        }
        if self.layers.len() > MAX_LAYERS {
            return Err(Error::InvalidArgument(format!(
                "at most {MAX_LAYERS} layers, got {}",
                self.layers.len()
            )));
        }
        let canvas_bbox = [0.0, 0.0, (w - 1) as f64, (h - 1) as f64];
        self.check_motion(&self.background_motion, canvas_bbox, "background")?;
        for (i, layer) in self.layers.iter().enumerate() {
            self.check_motion(&layer.motion, layer.mask.bbox(), &format!("layer {i}"))?;
        }
        Ok(())
    }

    fn check_motion(&self, motion: &Affine, bbox: [f64; 4], what: &str) -> Result<()> {
        let det = motion.det().abs();
        if !(0.5..=2.0).contains(&det) {
            return Err(Error::InvalidArgument(format!(
                "{what}: |det| = {det:.3} outside [0.5, 2]"
            )));
        }
        // displacement is affine in p, so its max over a box is at a corner
        let corners = [
            (bbox[0], bbox[1]),
            (bbox[2], bbox[1]),
            (bbox[0], bbox[3]),
            (bbox[2], bbox[3]),
        ];
        for (x, y) in corners {
            let (du, dv) = motion.displacement(x, y);
            let mag = (du * du + dv * dv).sqrt();
            if mag > self.max_displacement {
                return Err(Error::InvalidArgument(format!(
                    "{what}: displacement {mag:.2} px at ({x:.0},{y:.0}) exceeds cap {}",
                    self.max_displacement
                )));
            }
        }
        Ok(())
    }

    /// Index of the topmost layer covering (x,y) in frame-1 coordinates;
    /// None means background.
    fn owner_frame1(&self, x: f64, y: f64) -> Option<usize> {
        (0..self.layers.len())
            .rev()
            .find(|&i| self.layers[i].mask.contains(x, y))
    }

    /// As `owner_frame1` but in frame-2 coordinates: a moved layer covers q
    /// iff its inverse motion lands inside its frame-1 mask.
    fn owner_frame2(&self, inverses: &[Affine], x: f64, y: f64) -> Option<usize> {
        (0..self.layers.len()).rev().find(|&i| {
            let (px, py) = inverses[i].apply(x, y);
            self.layers[i].mask.contains(px, py)
        })
    }

    /// Renders both frames and the exact flow. Deterministic in the spec.
    pub fn generate(&self) -> Result<SamplePair> {
        self.validate()?;
        let (h, w) = self.canvas;
        let inverses: Vec<Affine> = self
            .layers
            .iter()
            .map(|l| l.motion.inverse())
            .collect::<Result<_>>()?;
        let bg_inverse = self.background_motion.inverse()?;

        let mut image1 = RgbImage::filled(w, h, [0, 0, 0]);
        let mut image2 = RgbImage::filled(w, h, [0, 0, 0]);
        let mut gt = FlowField::zeros(w, h);

        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64, y as f64);
                // frame 1 + ground truth from the frame-1 owner
                let (rgb1, motion) = match self.owner_frame1(fx, fy) {
                    Some(i) => (
                        self.layers[i].texture.sample(fx, fy),
                        &self.layers[i].motion,
                    ),
                    None => (
                        self.background_texture.sample(fx, fy),
                        &self.background_motion,
                    ),
                };
                image1.set(x, y, quantize(rgb1));
                let (du, dv) = motion.displacement(fx, fy);
                gt.set(x, y, du as f32, dv as f32);

                // frame 2 re-rendered from the continuous scene
                let rgb2 = match self.owner_frame2(&inverses, fx, fy) {
                    Some(i) => {
                        let (px, py) = inverses[i].apply(fx, fy);
                        self.layers[i].texture.sample(px, py)
                    }
                    None => {
                        let (px, py) = bg_inverse.apply(fx, fy);
                        self.background_texture.sample(px, py)
                    }
                };
                image2.set(x, y, quantize(rgb2));
            }
        }
        Ok(SamplePair {
            image1,
            image2,
            gt,
        })
    }

    /// Pixels of frame 1 that stay visible in frame 2 under their own motion
    /// (same owner at the displaced position, inside the canvas).
    pub fn visibility_mask(&self) -> Result<Vec<bool>> {
        let (h, w) = self.canvas;
        let inverses: Vec<Affine> = self
            .layers
            .iter()
            .map(|l| l.motion.inverse())
            .collect::<Result<_>>()?;
        let mut mask = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64, y as f64);
                let owner = self.owner_frame1(fx, fy);
                let motion = match owner {
                    Some(i) => &self.layers[i].motion,
                    None => &self.background_motion,
                };
                let (qx, qy) = motion.apply(fx, fy);
                let inside =
                    qx >= 0.0 && qy >= 0.0 && qx <= (w - 1) as f64 && qy <= (h - 1) as f64;
                mask[y * w + x] = inside && self.owner_frame2(&inverses, qx, qy) == owner;
            }
        }
        Ok(mask)
    }
}

fn quantize(rgb: [f64; 3]) -> [u8; 3] {
    rgb.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bg_scene(motion: Affine) -> SceneSpec {
        SceneSpec {
            seed: 1,
            canvas: (32, 32),
            background_texture: NoiseTexture::new(5, [0.5, 0.4, 0.6]),
            background_motion: motion,
            layers: vec![],
            max_displacement: DEFAULT_MAX_DISPLACEMENT,
        }
    }

    #[test]
    fn pure_translation_gives_constant_gt() {
        let scene = bg_scene(Affine::translation(5.0, -2.0));
        let pair = scene.generate().unwrap();
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(pair.gt.get(x, y), (5.0, -2.0));
            }
        }
    }

    #[test]
    fn rotation_about_origin_maps_unit_x_to_unit_y() {
        // 90° CCW in (x, y): (1,0) -> (0,1); displacement at (1,0) is (-1,1)
        let rot = Affine {
            a: 0.0,
            b: -1.0,
            c: 1.0,
            d: 0.0,
            tx: 0.0,
            ty: 0.0,
        };
        let (du, dv) = rot.displacement(1.0, 0.0);
        assert_eq!((du, dv), (-1.0, 1.0));
    }

    #[test]
    fn displacement_cap_is_enforced() {
        let scene = bg_scene(Affine::translation(20.0, 0.0));
        assert!(scene.generate().is_err());
    }

    #[test]
    fn determinism_identical_bytes() {
        let mut scene = bg_scene(Affine::translation(2.0, 1.0));
        scene.layers.push(LayerSpec {
            mask: ShapeMask::Ellipse {
                cx: 16.0,
                cy: 16.0,
                rx: 7.0,
                ry: 5.0,
                rot: 0.4,
            },
            texture: NoiseTexture::new(9, [0.7, 0.3, 0.2]),
            motion: Affine::translation(-3.0, 2.0),
        });
        let a = scene.generate().unwrap();
        let b = scene.generate().unwrap();
        assert_eq!(a.image1.data(), b.image1.data());
        assert_eq!(a.image2.data(), b.image2.data());
        assert_eq!(a.gt, b.gt);
    }

    #[test]
    fn gt_matches_owner_affine_exactly() {
        let mut scene = bg_scene(Affine::translation(1.0, 0.0));
        let motion = Affine::similarity_about(16.0, 16.0, 0.1, 1.05, 2.0, -1.0);
        scene.layers.push(LayerSpec {
            mask: ShapeMask::Polygon {
                points: vec![[8.0, 8.0], [24.0, 9.0], [22.0, 24.0], [9.0, 22.0]],
            },
            texture: NoiseTexture::new(13, [0.3, 0.6, 0.4]),
            motion,
        });
        let pair = scene.generate().unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let expected = if scene.layers[0].mask.contains(x as f64, y as f64) {
                    motion.displacement(x as f64, y as f64)
                } else {
                    (1.0, 0.0)
                };
                let (u, v) = pair.gt.get(x, y);
                assert!((u as f64 - expected.0).abs() < 1e-6);
                assert!((v as f64 - expected.1).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn warping_frame1_by_gt_reproduces_frame2() {
        let mut scene = bg_scene(Affine::translation(2.0, 1.0));
        scene.layers.push(LayerSpec {
            mask: ShapeMask::Ellipse {
                cx: 14.0,
                cy: 18.0,
                rx: 8.0,
                ry: 6.0,
                rot: 0.7,
            },
            texture: NoiseTexture::new(21, [0.6, 0.5, 0.3]),
            motion: Affine::similarity_about(14.0, 18.0, -0.12, 0.95, -3.0, 2.0),
        });
        let pair = scene.generate().unwrap();
        let visible = scene.visibility_mask().unwrap();
        // forward-warp check: image2 sampled at p + gt(p) should match image1(p)
        let mut total = 0.0;
        let mut count = 0usize;
        for y in 0..32 {
            for x in 0..32 {
                if !visible[y * 32 + x] {
                    continue;
                }
                let (u, v) = pair.gt.get(x, y);
                let warped = pair
                    .image2
                    .sample_bilinear(x as f64 + u as f64, y as f64 + v as f64);
                let orig = pair.image1.get(x, y).map(|b| b as f64 / 255.0);
                for c in 0..3 {
                    total += (warped[c] - orig[c]).abs();
                    count += 1;
                }
            }
        }
        let mean = total / count as f64;
        assert!(mean < 2.0 / 255.0, "mean abs warp error {mean}");
    }
}
