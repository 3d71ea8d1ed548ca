//! Seedable phantom generators and dataset persistence.
//!
//! Two families: the ellipse training family and a geometrically disjoint
//! out-of-distribution family (axis-aligned rectangles plus a ring). Both are
//! pure functions of (spec, index): every shape draws from its own
//! counter-based RNG stream, so generation order and parallelism cannot
//! change the output.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{pt1, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub image_size: usize,
    pub n_ellipses: usize,
    /// Semi-axis interval as a fraction of image width.
    pub axis_range: (f32, f32),
    /// Per-shape grayscale interval.
    pub value_range: (f32, f32),
    pub channels: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            image_size: 64,
            n_ellipses: 20,
            axis_range: (0.02, 0.20),
            value_range: (0.1, 0.5),
            channels: 1,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::config("image_size must be >= 16"));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return Err(Error::config("channels must be 1 or 3"));
        }
        let (a0, a1) = self.axis_range;
        if !(a0 > 0.0 && a1 < 1.0 && a0 <= a1) {
            return Err(Error::config("axis_range must lie inside (0,1) and be ordered"));
        }
        let (v0, v1) = self.value_range;
        if !(v0 >= 0.0 && v1 <= 1.0 && v0 <= v1) {
            return Err(Error::config("value_range must lie inside [0,1] and be ordered"));
        }
        Ok(())
    }
}

/// Counter-based stream: one independent RNG per (seed, image index, shape).
fn shape_rng(seed: u64, index: u64, shape: u64) -> ChaCha8Rng {
    // splitmix64 over the three counters to decorrelate nearby keys
    let mut z = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [index, shape] {
        z = z.wrapping_add(v).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    ChaCha8Rng::seed_from_u64(z)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> f32 {
    lo + (hi - lo) * rng.random::<f32>()
}

/// Adds `value` to every pixel whose center lies inside the region, per
/// channel, into `img` laid out as (C, N, N).
fn splat(img: &mut [f32], n: usize, channels: usize, values: &[f32], inside: impl Fn(f32, f32) -> bool) {
    for row in 0..n {
        let py = row as f32 + 0.5;
        for col in 0..n {
            let px = col as f32 + 0.5;
            if inside(px, py) {
                for (c, &v) in values.iter().enumerate().take(channels) {
                    img[(c * n + row) * n + col] += v;
                }
            }
        }
    }
}

fn clamp_at_one(img: &mut [f32]) {
    for v in img.iter_mut() {
        if *v > 1.0 {
            *v = 1.0;
        }
    }
}

/// Random-ellipse phantom: overlaps are summed, then clamped at 1.
pub fn generate_ellipse_phantom(spec: &PhantomSpec, index: u64) -> Result<Tensor> {
    spec.validate()?;
    let n = spec.image_size;
    let nf = n as f32;
    let mut img = vec![0.0f32; spec.channels * n * n];
    for e in 0..spec.n_ellipses {
        let mut rng = shape_rng(spec.seed, index, e as u64);
        let cx = uniform(&mut rng, 0.0, nf);
        let cy = uniform(&mut rng, 0.0, nf);
        let a = uniform(&mut rng, spec.axis_range.0, spec.axis_range.1) * nf;
        let b = uniform(&mut rng, spec.axis_range.0, spec.axis_range.1) * nf;
        // rotation distribution not further constrained; uniform on [0, pi)
        let phi = uniform(&mut rng, 0.0, std::f32::consts::PI);
        let mut values = [0.0f32; 3];
        for v in values.iter_mut().take(spec.channels) {
            *v = uniform(&mut rng, spec.value_range.0, spec.value_range.1);
        }
        let (sin_p, cos_p) = phi.sin_cos();
        splat(&mut img, n, spec.channels, &values, |px, py| {
            let dx = px - cx;
            let dy = py - cy;
            let u = (dx * cos_p + dy * sin_p) / a;
            let v = (-dx * sin_p + dy * cos_p) / b;
            u * u + v * v <= 1.0
        });
    }
    clamp_at_one(&mut img);
    Ok(Tensor::from_vec(vec![spec.channels, n, n], img))
}

/// Out-of-distribution phantom: axis-aligned rectangles plus one large ring.
/// Same intensity and clamping rules as the ellipse family, but the shapes
/// are geometrically disjoint from it.
pub fn generate_ood_phantom(spec: &PhantomSpec, index: u64) -> Result<Tensor> {
    spec.validate()?;
    let n = spec.image_size;
    let nf = n as f32;
    let mut img = vec![0.0f32; spec.channels * n * n];
    if spec.n_ellipses == 0 {
        return Ok(Tensor::from_vec(vec![spec.channels, n, n], img));
    }
    // shape counters offset so the OOD stream never aliases the ellipse one
    const OOD_BASE: u64 = 1 << 32;
    for e in 0..spec.n_ellipses.saturating_sub(1) {
        let mut rng = shape_rng(spec.seed, index, OOD_BASE + e as u64);
        let cx = uniform(&mut rng, 0.0, nf);
        let cy = uniform(&mut rng, 0.0, nf);
        let hw = uniform(&mut rng, spec.axis_range.0, spec.axis_range.1) * nf;
        let hh = uniform(&mut rng, spec.axis_range.0, spec.axis_range.1) * nf;
        let mut values = [0.0f32; 3];
        for v in values.iter_mut().take(spec.channels) {
            *v = uniform(&mut rng, spec.value_range.0, spec.value_range.1);
        }
        splat(&mut img, n, spec.channels, &values, |px, py| {
            (px - cx).abs() <= hw && (py - cy).abs() <= hh
        });
    }
    // one large ring
    {
        let mut rng = shape_rng(spec.seed, index, OOD_BASE + spec.n_ellipses as u64);
        let cx = uniform(&mut rng, 0.4 * nf, 0.6 * nf);
        let cy = uniform(&mut rng, 0.4 * nf, 0.6 * nf);
        let radius = uniform(&mut rng, 0.25 * nf, 0.4 * nf);
        let thickness = uniform(&mut rng, 1.5, 3.5);
        let mut values = [0.0f32; 3];
        for v in values.iter_mut().take(spec.channels) {
            *v = uniform(&mut rng, spec.value_range.0, spec.value_range.1);
        }
        splat(&mut img, n, spec.channels, &values, |px, py| {
            let r = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
            (r - radius).abs() <= thickness * 0.5
        });
    }
    clamp_at_one(&mut img);
    Ok(Tensor::from_vec(vec![spec.channels, n, n], img))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct DatasetMeta {
    pub family: String,
    pub image_size: usize,
    pub channels: usize,
    pub n_images: usize,
    pub seed: u64,
}

/// An ordered collection of same-shape images with provenance.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(images: Vec<Tensor>, meta: DatasetMeta) -> Result<Self> {
        if images.len() != meta.n_images {
            return Err(Error::config("dataset meta n_images disagrees with contents"));
        }
        for img in &images {
            if img.shape() != [meta.channels, meta.image_size, meta.image_size] {
                return Err(Error::shape("dataset images must share the declared shape"));
            }
            if img.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::config("dataset pixel values must lie in [0,1]"));
            }
        }
        Ok(Dataset { images, meta })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Ellipse,
    Ood,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Ellipse => "ellipse",
            Family::Ood => "ood",
        }
    }

    pub fn generate(self, spec: &PhantomSpec, index: u64) -> Result<Tensor> {
        match self {
            Family::Ellipse => generate_ellipse_phantom(spec, index),
            Family::Ood => generate_ood_phantom(spec, index),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipse" => Ok(Family::Ellipse),
            "ood" => Ok(Family::Ood),
            other => Err(Error::config(format!("unknown phantom family '{other}'"))),
        }
    }
}

/// Generates `count` phantoms with indices `first..first+count`.
pub fn generate_dataset(
    family: Family,
    spec: &PhantomSpec,
    first: u64,
    count: usize,
) -> Result<Dataset> {
    let images = (0..count)
        .map(|i| family.generate(spec, first + i as u64))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        images,
        DatasetMeta {
            family: family.name().to_string(),
            image_size: spec.image_size,
            channels: spec.channels,
            n_images: count,
            seed: spec.seed,
        },
    )
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// Concatenated PT1 records plus a JSON sidecar; round-trips bit-exactly.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for img in &ds.images {
        pt1::write_tensor(&mut f, img)?;
    }
    f.flush()?;
    let json = serde_json::to_string_pretty(&ds.meta)?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let bytes = std::fs::read(path)?;
    let mut cursor = std::io::Cursor::new(bytes);
    let mut images = Vec::with_capacity(meta.n_images);
    for _ in 0..meta.n_images {
        images.push(pt1::read_tensor(&mut cursor)?);
    }
    if cursor.position() as usize != cursor.get_ref().len() {
        return Err(Error::format("trailing bytes after dataset records"));
    }
    for img in &images {
        if img.shape() != [meta.channels, meta.image_size, meta.image_size] {
            return Err(Error::shape("dataset record shape disagrees with sidecar"));
        }
    }
    Dataset::new(images, meta)
}
