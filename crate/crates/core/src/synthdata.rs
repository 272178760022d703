//! Synthetic panoramic segmentation scenes.
//!
//! Objects live on the sphere: each has a center, an angular size, an
//! orientation and a class-specific texture, all expressed in the object's own
//! tangent plane. Rendering evaluates every ERP pixel direction against these
//! definitions, so the stretching seen in ERP images comes from the geometry
//! and not from anything painted in.
//!
//! Class identity is carried by texture (stripe wavelength, dots, checkers),
//! while colors are random per object. Stretching near the poles widens
//! east-west wavelengths, which makes the fine-stripe disk look like the
//! coarse-stripe ring in ERP space.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::resample::erp_to_sphere;
use crate::sphere::SphericalPoint;
use crate::tensor::{Labels, Tensor};

pub const BACKGROUND: u16 = 0;
pub const DISK: u16 = 1;
pub const STRIPE: u16 = 2;
pub const POLYGON: u16 = 3;
pub const RING: u16 = 4;
pub const CLASS_NAMES: [&str; 5] = ["background", "disk", "stripe", "polygon", "ring"];

const FINE_WAVELENGTH_DEG: f64 = 6.0;
const COARSE_WAVELENGTH_DEG: f64 = 12.0;
const DOT_SPACING_DEG: f64 = 9.0;
const CHECKER_DEG: f64 = 10.0;
const MIN_RADIUS_DEG: f64 = 14.0;
const MAX_RADIUS_DEG: f64 = 24.0;
const TARGET_MAX_LAT_DEG: f64 = 75.0;

/// Photometric shift applied on top of the rendered scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Style {
    pub brightness: f64,
    pub contrast: f64,
    /// Rotation of the RGB cube about its gray axis.
    pub hue_deg: f64,
    pub noise_sigma: f64,
}

impl Style {
    pub fn identity() -> Self {
        Self {
            brightness: 0.0,
            contrast: 1.0,
            hue_deg: 0.0,
            noise_sigma: 0.0,
        }
    }

    pub fn source_default() -> Self {
        Self {
            brightness: 0.08,
            contrast: 0.75,
            hue_deg: 90.0,
            noise_sigma: 0.04,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn apply(&self, rgb: [f64; 3]) -> [f64; 3] {
        let rotated = rotate_hue(rgb, self.hue_deg.to_radians());
        rotated.map(|x| (x - 0.5) * self.contrast + 0.5 + self.brightness)
    }
}

fn rotate_hue(rgb: [f64; 3], angle: f64) -> [f64; 3] {
    if angle == 0.0 {
        return rgb;
    }
    // Rodrigues rotation about (1,1,1)/√3
    let k = 1.0 / 3f64.sqrt();
    let (s, c) = angle.sin_cos();
    let dot = k * (rgb[0] + rgb[1] + rgb[2]);
    let cross = [
        k * (rgb[2] - rgb[1]),
        k * (rgb[0] - rgb[2]),
        k * (rgb[1] - rgb[0]),
    ];
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = rgb[i] * c + cross[i] * s + k * dot * (1.0 - c);
    }
    out
}

/// Where object centers are drawn on the sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    /// Uniform over solid angle.
    Uniform,
    /// Density growing with |sin lat|³ up to a latitude cap, favouring the
    /// strongly stretched polar bands.
    Polar,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub num_objects: usize,
    pub num_classes: usize,
    pub style: Style,
    pub placement: Placement,
}

impl SceneSpec {
    pub fn source(seed: u64) -> Self {
        Self {
            seed,
            num_objects: 6,
            num_classes: 5,
            style: Style::source_default(),
            placement: Placement::Uniform,
        }
    }

    pub fn target(seed: u64) -> Self {
        Self {
            style: Style::identity(),
            placement: Placement::Polar,
            ..Self::source(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=CLASS_NAMES.len()).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "synthetic scenes support 2 to {} classes, got {}",
                CLASS_NAMES.len(),
                self.num_classes
            )));
        }
        if self.style.contrast <= 0.0 || self.style.noise_sigma < 0.0 {
            return Err(Error::Config("style contrast must be positive and noise non-negative".into()));
        }
        Ok(())
    }
}

/// One object in its local tangent frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub class: u16,
    pub center: SphericalPoint,
    /// Angular radius in radians.
    pub radius: f64,
    /// In-plane rotation of shape and texture, radians.
    pub orientation: f64,
    pub phase: f64,
    /// Vertex count for polygons.
    pub sides: usize,
    pub colors: [[f64; 3]; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// Axis and phase of the slow background gradient.
    pub background_axis: [f64; 3],
    pub background_phase: f64,
    pub background_colors: [[f64; 3]; 2],
    /// Painted in order; later objects cover earlier ones.
    pub objects: Vec<SceneObject>,
}

/// A rendered image and its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub labels: Labels,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Per-image seed; independent of placement and style so that source and
/// target scenes with the same seed share every non-geometric draw.
pub fn image_seed(seed: u64, index: usize) -> u64 {
    splitmix(splitmix(seed) ^ index as u64)
}

fn random_color(rng: &mut ChaCha8Rng) -> [[f64; 3]; 2] {
    let a: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    // every channel half a cycle away keeps texture contrast high
    [a, a.map(|x| (x + 0.5) % 1.0)]
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..1.0);
    let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    [r * t.cos(), r * t.sin(), z]
}

/// Draws the scene for image `index`.
pub fn sample_scene(spec: &SceneSpec, index: usize) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(spec.seed, index));
    let background_axis = unit_vector(&mut rng);
    let background_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let bg: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let background_colors = [bg, bg.map(|x| x * 0.6 + 0.2)];

    let shapes = spec.num_classes - 1;
    let offset = rng.random_range(0..shapes);
    let mut objects = Vec::with_capacity(spec.num_objects);
    for i in 0..spec.num_objects {
        let class = 1 + ((i + offset) % shapes) as u16;
        let u: f64 = rng.random();
        let north = rng.random_bool(0.5);
        let lon = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let s = match spec.placement {
            Placement::Uniform => u,
            Placement::Polar => TARGET_MAX_LAT_DEG.to_radians().sin() * u.cbrt(),
        };
        let lat = if north { s.asin() } else { -s.asin() };
        let radius = rng.random_range(MIN_RADIUS_DEG..MAX_RADIUS_DEG).to_radians();
        let orientation = rng.random_range(0.0..std::f64::consts::PI);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let sides = rng.random_range(3..7);
        let colors = random_color(&mut rng);
        objects.push(SceneObject {
            class,
            center: SphericalPoint::new(lat, lon)?,
            radius,
            orientation,
            phase,
            sides,
            colors,
        });
    }
    Ok(Scene {
        background_axis,
        background_phase,
        background_colors,
        objects,
    })
}

impl SceneObject {
    /// Rotated tangent-plane coordinates of `dir`, or `None` on the far hemisphere.
    fn local(&self, dir: [f64; 3]) -> Option<(f64, f64)> {
        let (sl, cl) = self.center.lat().sin_cos();
        let (so, co) = self.center.lon().sin_cos();
        let c = [cl * co, cl * so, sl];
        let east = [-so, co, 0.0];
        let north = [-sl * co, -sl * so, cl];
        let dot = |a: [f64; 3]| a[0] * dir[0] + a[1] * dir[1] + a[2] * dir[2];
        let depth = dot(c);
        if depth <= 1e-6 {
            return None;
        }
        let (x, y) = (dot(east) / depth, dot(north) / depth);
        let (s, co) = self.orientation.sin_cos();
        Some((co * x + s * y, -s * x + co * y))
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        let r = self.radius.tan();
        let rho = u.hypot(v);
        match self.class {
            DISK => rho < r,
            STRIPE => u.abs() < r && v.abs() < 0.4 * r,
            POLYGON => {
                let n = self.sides as f64;
                let apothem = r * (std::f64::consts::PI / n).cos();
                (0..self.sides).all(|k| {
                    let a = std::f64::consts::TAU * k as f64 / n;
                    u * a.cos() + v * a.sin() <= apothem
                })
            }
            RING => rho < r && rho > 0.5 * r,
            _ => false,
        }
    }

    fn texture(&self, u: f64, v: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        match self.class {
            DISK => 0.5 + 0.5 * (tau * u / FINE_WAVELENGTH_DEG.to_radians() + self.phase).cos(),
            RING => 0.5 + 0.5 * (tau * u / COARSE_WAVELENGTH_DEG.to_radians() + self.phase).cos(),
            STRIPE => {
                let p = DOT_SPACING_DEG.to_radians();
                let fu = (u / p + self.phase / tau).rem_euclid(1.0) - 0.5;
                let fv = (v / p).rem_euclid(1.0) - 0.5;
                if fu * fu + fv * fv < 0.09 {
                    1.0
                } else {
                    0.0
                }
            }
            POLYGON => {
                let p = CHECKER_DEG.to_radians();
                let s = (tau * u / p + self.phase).sin() * (tau * v / p).sin();
                if s >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => 0.0,
        }
    }
}

fn mix(colors: &[[f64; 3]; 2], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| colors[0][i] * (1.0 - t) + colors[1][i] * t)
}

impl Scene {
    /// Class and clean color seen along `dir`.
    pub fn shade(&self, dir: [f64; 3]) -> (u16, [f64; 3]) {
        for obj in self.objects.iter().rev() {
            if let Some((u, v)) = obj.local(dir) {
                if obj.contains(u, v) {
                    return (obj.class, mix(&obj.colors, obj.texture(u, v)));
                }
            }
        }
        let a = self.background_axis;
        let proj = a[0] * dir[0] + a[1] * dir[1] + a[2] * dir[2];
        let t = 0.5 + 0.5 * (1.5 * proj + self.background_phase).sin();
        (BACKGROUND, mix(&self.background_colors, t))
    }

    /// Renders to an `H×W×3` ERP image with values in `[0,1]`.
    pub fn render(&self, style: &Style, height: usize, width: usize, noise_seed: u64) -> Result<Sample> {
        if height < 2 || width < 2 {
            return Err(Error::dim(format!("cannot render a {height}×{width} panorama")));
        }
        let mut image = Vec::with_capacity(height * width * 3);
        let mut labels = Vec::with_capacity(height * width);
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let noise = Normal::new(0.0, style.noise_sigma.max(0.0)).expect("finite sigma");
        for row in 0..height {
            for col in 0..width {
                let dir = erp_to_sphere(row as f64, col as f64, height, width).direction();
                let (class, rgb) = self.shade(dir);
                let rgb = style.apply(rgb);
                for x in rgb {
                    let n = if style.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    image.push((x + n).clamp(0.0, 1.0));
                }
                labels.push(class);
            }
        }
        Ok(Sample {
            image: Tensor::new(vec![height, width, 3], image)?,
            labels: Labels::new(height, width, labels)?,
        })
    }
}

/// Renders `count` images for `spec` in parallel; image `i` depends only on
/// `(spec, i)`.
pub fn generate(spec: &SceneSpec, erp_size: (usize, usize), count: usize) -> Result<Vec<Sample>> {
    spec.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let scene = sample_scene(spec, i)?;
            scene.render(&spec.style, erp_size.0, erp_size.1, splitmix(image_seed(spec.seed, i)))
        })
        .collect()
}

/// Training data: labelled source panoramas, unlabelled target panoramas and
/// a labelled target evaluation split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub source: Vec<Sample>,
    pub target: Vec<Sample>,
    pub eval: Vec<Sample>,
}

/// Sizes and seeds of a full benchmark dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub erp_size: (usize, usize),
    pub num_objects: usize,
    pub num_classes: usize,
    pub source_style: Style,
    pub source_count: usize,
    pub target_count: usize,
    pub eval_count: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            seed: 2024,
            erp_size: (128, 256),
            num_objects: 6,
            num_classes: 5,
            source_style: Style::source_default(),
            source_count: 200,
            target_count: 200,
            eval_count: 50,
        }
    }
}

impl DatasetSpec {
    pub fn source_spec(&self) -> SceneSpec {
        SceneSpec {
            num_objects: self.num_objects,
            num_classes: self.num_classes,
            style: self.source_style,
            ..SceneSpec::source(splitmix(self.seed))
        }
    }

    pub fn target_spec(&self) -> SceneSpec {
        SceneSpec {
            num_objects: self.num_objects,
            num_classes: self.num_classes,
            ..SceneSpec::target(splitmix(self.seed ^ 1))
        }
    }

    pub fn eval_spec(&self) -> SceneSpec {
        SceneSpec {
            seed: splitmix(self.seed ^ 2),
            ..self.target_spec()
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        Ok(Dataset {
            source: generate(&self.source_spec(), self.erp_size, self.source_count)?,
            target: generate(&self.target_spec(), self.erp_size, self.target_count)?,
            eval: generate(&self.eval_spec(), self.erp_size, self.eval_count)?,
        })
    }
}

/// Bilinear resize of an `h×w×C` image to an ERP canvas, for pinhole inputs
/// that have no native spherical geometry.
pub fn resize_to_erp(image: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (_, h, w, c) = image.batch_dims()?;
    if image.rank() != 3 || height == 0 || width == 0 {
        return Err(Error::dim("resize_to_erp takes one H×W×C image and a non-empty size"));
    }
    let scale = |o: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        if dst == 1 || src == 1 {
            return (0, 0, 0.0);
        }
        let x = o as f64 * (src - 1) as f64 / (dst - 1) as f64;
        let i = (x.floor() as usize).min(src - 2);
        (i, i + 1, x - i as f64)
    };
    let data = image.data();
    let mut out = Vec::with_capacity(height * width * c);
    for r in 0..height {
        let (r0, r1, fy) = scale(r, h, height);
        for col in 0..width {
            let (c0, c1, fx) = scale(col, w, width);
            for ch in 0..c {
                let at = |y: usize, x: usize| data[(y * w + x) * c + ch];
                let top = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
                let bottom = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![height, width, c], out)
}
