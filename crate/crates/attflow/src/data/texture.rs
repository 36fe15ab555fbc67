//! Procedural value-noise textures, evaluable at any real coordinate.
//! Frames of a moving layer are rendered by sampling the same continuous
//! texture at transformed positions, so labels carry no resampling error.

/// Smooth band-limited RGB texture: three octaves of hashed lattice noise
/// with smoothstep interpolation around a per-layer base color.
#[derive(Debug, Clone)]
pub struct NoiseTexture {
    seed: u64,
    base: [f64; 3],
    /// (cell size in px, amplitude) per octave. The finest octave drives
    /// subpixel matching; cells stay coarse enough that bilinear resampling
    /// of a rendered frame tracks the continuous texture closely.
    octaves: [(f64, f64); 3],
}

impl NoiseTexture {
    pub fn new(seed: u64, base: [f64; 3]) -> Self {
        NoiseTexture {
            seed,
            base,
            octaves: [(11.0, 0.26), (5.0, 0.15), (2.6, 0.09)],
        }
    }

    /// Flat color (still "textured" API-wise, amplitude zero).
    pub fn flat(base: [f64; 3]) -> Self {
        NoiseTexture {
            seed: 0,
            base,
            octaves: [(1.0, 0.0), (1.0, 0.0), (1.0, 0.0)],
        }
    }

    /// RGB in [0,1] at a continuous position.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let mut rgb = self.base;
        for (oi, &(cell, amp)) in self.octaves.iter().enumerate() {
            if amp == 0.0 {
                continue;
            }
            for (ci, slot) in rgb.iter_mut().enumerate() {
                let n = self.value_noise(x / cell, y / cell, (oi * 3 + ci) as u64);
                *slot += amp * (n - 0.5) * 2.0;
            }
        }
        rgb.map(|v| v.clamp(0.0, 1.0))
    }

    fn value_noise(&self, x: f64, y: f64, channel: u64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = smoothstep(x - x0);
        let fy = smoothstep(y - y0);
        let (ix, iy) = (x0 as i64, y0 as i64);
        let v00 = self.lattice(ix, iy, channel);
        let v01 = self.lattice(ix + 1, iy, channel);
        let v10 = self.lattice(ix, iy + 1, channel);
        let v11 = self.lattice(ix + 1, iy + 1, channel);
        let top = v00 * (1.0 - fx) + v01 * fx;
        let bot = v10 * (1.0 - fx) + v11 * fx;
        top * (1.0 - fy) + bot * fy
    }

    fn lattice(&self, ix: i64, iy: i64, channel: u64) -> f64 {
        let h = splitmix64(
            self.seed
                ^ (ix as u64).wrapping_mul(0x8DA6_B343)
                ^ (iy as u64).wrapping_mul(0xD816_3841)
                ^ channel.wrapping_mul(0xCB1A_B31F_6935_2C51),
        );
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

pub fn splitmix64(v: u64) -> u64 {
    let mut z = v.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let a = NoiseTexture::new(42, [0.5, 0.5, 0.5]);
        let b = NoiseTexture::new(42, [0.5, 0.5, 0.5]);
        for i in 0..50 {
            let p = (i as f64 * 1.7, i as f64 * 0.3);
            assert_eq!(a.sample(p.0, p.1), b.sample(p.0, p.1));
        }
    }

    #[test]
    fn continuous_no_lattice_jumps() {
        let t = NoiseTexture::new(7, [0.5, 0.5, 0.5]);
        let mut prev = t.sample(0.0, 3.0)[0];
        for i in 1..400 {
            let cur = t.sample(i as f64 * 0.05, 3.0)[0];
            assert!((cur - prev).abs() < 0.05, "jump at {i}");
            prev = cur;
        }
    }
}
