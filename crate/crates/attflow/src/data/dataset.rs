//! Seeded sample streams: randomized layered-affine scenes, optional
//! augmentation, and on-disk datasets (PPM pairs + `.flo` + manifest).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    flo, ppm, Affine, LayerSpec, NoiseTexture, RgbImage, SamplePair, SceneSpec,
    ShapeMask,
};
use crate::error::{Error, Result};

/// How layer and background motions are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionPreset {
    /// Rotation/scale/translation per layer.
    Affine,
    /// Pure translations everywhere (each sample one rigid shift per region).
    Translation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub count: usize,
    /// (height, width), both divisible by 64 for the flow networks.
    pub canvas: (usize, usize),
    pub preset: MotionPreset,
    pub min_layers: usize,
    pub max_layers: usize,
    pub max_displacement: f64,
}

impl DatasetConfig {
    pub fn new(seed: u64, count: usize, canvas: (usize, usize)) -> Self {
        DatasetConfig {
            seed,
            count,
            canvas,
            preset: MotionPreset::Affine,
            min_layers: 1,
            max_layers: 3,
            max_displacement: 8.0,
        }
    }

    pub fn preset(mut self, preset: MotionPreset) -> Self {
        self.preset = preset;
        self
    }

    pub fn layers(mut self, min: usize, max: usize) -> Self {
        self.min_layers = min;
        self.max_layers = max;
        self
    }

    pub fn max_displacement(mut self, cap: f64) -> Self {
        self.max_displacement = cap;
        self
    }
}

/// Anything that can hand out (image1, image2, gt) samples by index.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn get(&self, index: usize) -> Result<SamplePair>;
}

/// Procedural dataset; every sample is a pure function of (seed, index).
#[derive(Debug, Clone)]
pub struct FlowDataset {
    cfg: DatasetConfig,
}

impl FlowDataset {
    pub fn new(cfg: DatasetConfig) -> Self {
        FlowDataset { cfg }
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.cfg
    }

    /// Scene for one index; independent ChaCha streams keep samples
    /// pairwise independent.
    pub fn scene(&self, index: usize) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index as u64 + 1);
        sample_scene(&self.cfg, index as u64, &mut rng)
    }
}

impl SampleSource for FlowDataset {
    fn len(&self) -> usize {
        self.cfg.count
    }

    fn get(&self, index: usize) -> Result<SamplePair> {
        if index >= self.cfg.count {
            return Err(Error::InvalidArgument(format!(
                "sample index {index} out of range ({} samples)",
                self.cfg.count
            )));
        }
        self.scene(index).generate()
    }
}

fn sample_scene(cfg: &DatasetConfig, index: u64, rng: &mut ChaCha8Rng) -> SceneSpec {
    let (h, w) = cfg.canvas;
    let cap = cfg.max_displacement;
    let t_bound = cap / std::f64::consts::SQRT_2 * 0.9;

    let layer_count = rng.gen_range(cfg.min_layers..=cfg.max_layers);
    let mut layers = Vec::with_capacity(layer_count);
    for li in 0..layer_count {
        let cx = rng.gen_range(0.15 * w as f64..0.85 * w as f64);
        let cy = rng.gen_range(0.15 * h as f64..0.85 * h as f64);
        let r_lo = 0.08 * w.min(h) as f64;
        let r_hi = 0.28 * w.min(h) as f64;
        let mask = if rng.gen_bool(0.5) {
            ShapeMask::Ellipse {
                cx,
                cy,
                rx: rng.gen_range(r_lo..r_hi),
                ry: rng.gen_range(r_lo..r_hi),
                rot: rng.gen_range(0.0..std::f64::consts::PI),
            }
        } else {
            let radius = rng.gen_range(r_lo..r_hi);
            random_convex_polygon(rng, cx, cy, radius)
        };
        let bbox = mask.bbox();
        let radius = 0.5 * ((bbox[2] - bbox[0]).hypot(bbox[3] - bbox[1])).max(1.0);
        let motion = sample_motion(cfg.preset, rng, cx, cy, radius, t_bound, cap);
        let texture = NoiseTexture::new(
            crate::data::splitmix64(cfg.seed ^ index.wrapping_mul(0x51D_F00D) ^ (li as u64 + 1)),
            [
                rng.gen_range(0.25..0.75),
                rng.gen_range(0.25..0.75),
                rng.gen_range(0.25..0.75),
            ],
        );
        layers.push(LayerSpec {
            mask,
            texture,
            motion,
        });
    }

    // translation scenes shift the whole frame at full range; affine scenes
    // keep the background gentle and let the layers dominate
    let bg_bound = match cfg.preset {
        MotionPreset::Translation => t_bound,
        MotionPreset::Affine => (t_bound * 0.4).max(0.5).min(t_bound),
    };
    let background_motion = Affine::translation(
        rng.gen_range(-bg_bound..bg_bound),
        rng.gen_range(-bg_bound..bg_bound),
    );
    SceneSpec {
        seed: cfg.seed ^ index,
        canvas: cfg.canvas,
        background_texture: NoiseTexture::new(
            crate::data::splitmix64(cfg.seed ^ index.wrapping_mul(0xB67F)),
            [
                rng.gen_range(0.3..0.7),
                rng.gen_range(0.3..0.7),
                rng.gen_range(0.3..0.7),
            ],
        ),
        background_motion,
        layers,
        max_displacement: cap,
    }
}

fn sample_motion(
    preset: MotionPreset,
    rng: &mut ChaCha8Rng,
    cx: f64,
    cy: f64,
    radius: f64,
    t_bound: f64,
    cap: f64,
) -> Affine {
    match preset {
        MotionPreset::Translation => {
            Affine::translation(rng.gen_range(-t_bound..t_bound), rng.gen_range(-t_bound..t_bound))
        }
        MotionPreset::Affine => {
            // keep rotation/scale small enough that edge displacement fits the cap
            let dev_budget = (0.35 * cap / radius).min(0.22);
            let angle = rng.gen_range(-dev_budget..dev_budget);
            let scale = 1.0 + rng.gen_range(-dev_budget..dev_budget);
            let t = t_bound * 0.6;
            Affine::similarity_about(
                cx,
                cy,
                angle,
                scale,
                rng.gen_range(-t..t),
                rng.gen_range(-t..t),
            )
        }
    }
}

fn random_convex_polygon(rng: &mut ChaCha8Rng, cx: f64, cy: f64, radius: f64) -> ShapeMask {
    let sides = rng.gen_range(3..=6);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    // counter-clockwise in (x, y-down) coordinates means decreasing angle
    let points = (0..sides)
        .map(|i| {
            let ang = phase - i as f64 * std::f64::consts::TAU / sides as f64;
            let r = radius * rng.gen_range(0.75..1.0);
            [cx + r * ang.cos(), cy + r * ang.sin()]
        })
        .collect();
    ShapeMask::Polygon { points }
}

// ---- augmentation ---------------------------------------------------------

/// Horizontal mirror of images and ground truth; u flips sign.
pub fn hflip(sample: &SamplePair) -> SamplePair {
    let w = sample.image1.width();
    let h = sample.image1.height();
    let mut image1 = sample.image1.clone();
    let mut image2 = sample.image2.clone();
    let mut gt = sample.gt.clone();
    for y in 0..h {
        for x in 0..w {
            let sx = w - 1 - x;
            image1.set(x, y, sample.image1.get(sx, y));
            image2.set(x, y, sample.image2.get(sx, y));
            let (u, v) = sample.gt.get(sx, y);
            gt.set(x, y, -u, v);
        }
    }
    SamplePair {
        image1,
        image2,
        gt,
    }
}

/// Identical brightness/contrast shift on both frames (ground truth is
/// unaffected). `contrast` scales around mid-gray, `brightness` adds.
pub fn photometric_jitter(sample: &SamplePair, brightness: f64, contrast: f64) -> SamplePair {
    let adjust = |img: &RgbImage| {
        let data: Vec<u8> = img
            .data()
            .iter()
            .map(|&b| {
                let v = b as f64 / 255.0;
                let v = (v - 0.5) * contrast + 0.5 + brightness;
                (v * 255.0).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        RgbImage::new(img.width(), img.height(), data).expect("same size")
    };
    SamplePair {
        image1: adjust(&sample.image1),
        image2: adjust(&sample.image2),
        gt: sample.gt.clone(),
    }
}

// ---- on-disk datasets -----------------------------------------------------

/// Writes samples as `NNNNN_img1.ppm`, `NNNNN_img2.ppm`, `NNNNN_flow.flo`
/// plus a `manifest.txt` of tab-separated relative paths, one line each.
pub fn write_dataset_dir(dir: impl AsRef<Path>, source: &dyn SampleSource) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join("manifest.txt");
    let file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut manifest = std::io::BufWriter::new(file);
    for i in 0..source.len() {
        let pair = source.get(i)?;
        let names = (
            format!("{i:05}_img1.ppm"),
            format!("{i:05}_img2.ppm"),
            format!("{i:05}_flow.flo"),
        );
        ppm::write_ppm(dir.join(&names.0), &pair.image1)?;
        ppm::write_ppm(dir.join(&names.1), &pair.image2)?;
        flo::write_flo(dir.join(&names.2), &pair.gt)?;
        writeln!(manifest, "{}\t{}\t{}", names.0, names.1, names.2)
            .map_err(|e| Error::io(&manifest_path, e))?;
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Dataset backed by a manifest of (image1, image2, flo) paths.
#[derive(Debug, Clone)]
pub struct ManifestDataset {
    root: PathBuf,
    entries: Vec<(String, String, String)>,
}

impl ManifestDataset {
    pub fn open(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let root = manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::Format {
                    path: manifest.to_path_buf(),
                    message: format!("line {}: expected 3 tab-separated paths", ln + 1),
                    offset: 0,
                });
            }
            entries.push((
                parts[0].to_string(),
                parts[1].to_string(),
                parts[2].to_string(),
            ));
        }
        Ok(ManifestDataset { root, entries })
    }
}

impl SampleSource for ManifestDataset {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn get(&self, index: usize) -> Result<SamplePair> {
        let (i1, i2, fl) = self.entries.get(index).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "sample index {index} out of range ({} entries)",
                self.entries.len()
            ))
        })?;
        Ok(SamplePair {
            image1: ppm::read_ppm(self.root.join(i1))?,
            image2: ppm::read_ppm(self.root.join(i2))?,
            gt: flo::read_flo(self.root.join(fl))?,
        })
    }
}

/// In-memory materialized dataset (pre-generates everything once).
pub struct CachedDataset {
    samples: Vec<SamplePair>,
}

impl CachedDataset {
    pub fn from_source(source: &dyn SampleSource) -> Result<Self> {
        let samples = (0..source.len())
            .map(|i| source.get(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(CachedDataset { samples })
    }
}

impl SampleSource for CachedDataset {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn get(&self, index: usize) -> Result<SamplePair> {
        self.samples
            .get(index)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("sample index {index} out of range")))
    }
}
