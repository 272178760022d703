//! ERP ↔ tangent resampling through precomputed sampling grids.
//!
//! ERP pixel `(row, col)` of an `H×W` image sits at longitude
//! `col / W · 2π − π` and latitude `π/2 − row / (H − 1) · π`; the first and
//! last rows lie on the poles. Interpolation is bilinear, wraps around in
//! longitude and clamps in latitude.

use std::cell::Cell;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};
use crate::sphere::{gnomonic_inverse, SphericalPoint, TangentLayout, TangentPlane};
use crate::tensor::{Labels, Tensor};

thread_local! {
    static CALLS: Cell<u64> = const { Cell::new(0) };
}

fn count_call() {
    CALLS.with(|c| c.set(c.get() + 1));
}

/// Number of sampling or assembly calls made on the current thread.
pub fn calls_on_this_thread() -> u64 {
    CALLS.with(|c| c.get())
}

/// Continuous ERP coordinates `(u, v)` of a point; `u ∈ [0, W)`.
pub fn sphere_to_erp(p: SphericalPoint, height: usize, width: usize) -> (f64, f64) {
    let w = width as f64;
    let u = ((p.lon() + PI) / TAU * w).rem_euclid(w);
    // rem_euclid may round up to exactly w
    let u = if u >= w { 0.0 } else { u };
    let v = (FRAC_PI_2 - p.lat()) / PI * (height - 1) as f64;
    (u, v)
}

/// Sphere point at the centre of ERP pixel `(row, col)` (fractional allowed).
pub fn erp_to_sphere(row: f64, col: f64, height: usize, width: usize) -> SphericalPoint {
    let lat = FRAC_PI_2 - row / (height - 1) as f64 * PI;
    let lon = col / width as f64 * TAU - PI;
    SphericalPoint::new(lat.clamp(-FRAC_PI_2, FRAC_PI_2), lon).expect("finite ERP coordinates")
}

/// Four bilinear neighbours of a sampling position.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Taps {
    index: [usize; 4],
    weight: [f64; 4],
}

impl Taps {
    fn new(u: f64, v: f64, height: usize, width: usize) -> Self {
        let u0 = u.floor();
        let fu = u - u0;
        let c0 = (u0 as i64).rem_euclid(width as i64) as usize;
        let c1 = (c0 + 1) % width;
        let v = v.clamp(0.0, (height - 1) as f64);
        let r0 = (v.floor() as usize).min(height - 1);
        let fv = v - r0 as f64;
        let r1 = (r0 + 1).min(height - 1);
        Taps {
            index: [r0 * width + c0, r0 * width + c1, r1 * width + c0, r1 * width + c1],
            weight: [
                (1.0 - fu) * (1.0 - fv),
                fu * (1.0 - fv),
                (1.0 - fu) * fv,
                fu * fv,
            ],
        }
    }
}

/// Per-pixel ERP sampling positions for every plane of a layout.
#[derive(Clone, Debug)]
pub struct ProjectionGrid {
    layout: TangentLayout,
    erp_height: usize,
    erp_width: usize,
    stride: usize,
    coords: Vec<(f64, f64)>,
    valid: Vec<bool>,
    taps: Vec<Taps>,
}

impl ProjectionGrid {
    pub fn layout(&self) -> &TangentLayout {
        &self.layout
    }

    pub fn erp_height(&self) -> usize {
        self.erp_height
    }

    pub fn erp_width(&self) -> usize {
        self.erp_width
    }

    /// Downsampling factor relative to the image-resolution grid.
    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn planes(&self) -> usize {
        self.layout.len()
    }

    /// Side length of each tangent patch in pixels.
    pub fn patch_resolution(&self) -> usize {
        self.layout.resolution()
    }

    pub fn pixels_per_patch(&self) -> usize {
        let n = self.patch_resolution();
        n * n
    }

    /// `(u, v)` pairs, plane-major then row-major.
    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn coord(&self, plane: usize, row: usize, col: usize) -> (f64, f64) {
        let n = self.patch_resolution();
        self.coords[(plane * n + row) * n + col]
    }

    /// Grid for feature maps downsampled by `stride`.
    ///
    /// Feature pixel `j` of a stride-`s` map is centred on image pixel `s·j`,
    /// so coarse tangent pixel `(i, j)` samples the ERP feature map at the
    /// fine tangent position `(s·i, s·j)` divided by `s`.
    pub fn with_stride(&self, stride: usize) -> Result<ProjectionGrid> {
        if stride == 0 || self.stride != 1 {
            return Err(Error::dim("strided grids are derived from stride-1 grids only"));
        }
        if stride == 1 {
            return Ok(self.clone());
        }
        let n = self.patch_resolution();
        let coarse = ((n as f64 / stride as f64).round() as usize).max(1);
        let h = self.erp_height.div_ceil(stride);
        let w = self.erp_width.div_ceil(stride);
        let planes = self
            .layout
            .planes()
            .iter()
            .map(|p| TangentPlane::new(p.center(), p.fov(), coarse))
            .collect::<Result<Vec<_>>>()?;
        let layout = TangentLayout::new(planes)?;
        let s = stride as f64;
        let mut coords = Vec::with_capacity(layout.len() * coarse * coarse);
        for plane in self.layout.planes() {
            for i in 0..coarse {
                for j in 0..coarse {
                    let (x, y) = plane.pixel_to_plane(s * i as f64, s * j as f64);
                    let p = gnomonic_inverse(x, y, plane);
                    let (u, v) = sphere_to_erp(p, self.erp_height, self.erp_width);
                    coords.push(((u / s).rem_euclid(w as f64), v / s));
                }
            }
        }
        Ok(Self::from_coords(layout, h, w, stride, coords))
    }

    fn from_coords(
        layout: TangentLayout,
        erp_height: usize,
        erp_width: usize,
        stride: usize,
        coords: Vec<(f64, f64)>,
    ) -> Self {
        let valid = coords
            .iter()
            .map(|&(u, v)| u.is_finite() && v.is_finite())
            .collect();
        let taps = coords
            .iter()
            .map(|&(u, v)| Taps::new(u, v, erp_height, erp_width))
            .collect();
        Self {
            layout,
            erp_height,
            erp_width,
            stride,
            coords,
            valid,
            taps,
        }
    }

    fn check_map(&self, shape: &[usize]) -> Result<usize> {
        match *shape {
            [h, w, c] if h == self.erp_height && w == self.erp_width => Ok(c),
            _ => Err(Error::dim(format!(
                "map {shape:?} does not match the {}×{} grid",
                self.erp_height, self.erp_width
            ))),
        }
    }

    fn check_patches(&self, shape: &[usize]) -> Result<usize> {
        let n = self.patch_resolution();
        match *shape {
            [p, h, w, c] if p == self.planes() && h == n && w == n => Ok(c),
            _ => Err(Error::dim(format!(
                "patches {shape:?} do not match {}×{n}×{n}×C",
                self.planes()
            ))),
        }
    }
}

/// Precomputes the ERP sampling positions of every tangent pixel.
pub fn build_grid(layout: &TangentLayout, erp_height: usize, erp_width: usize) -> Result<ProjectionGrid> {
    if erp_height < 4 || erp_width < 4 {
        return Err(Error::dim(format!(
            "ERP size {erp_height}×{erp_width} is below the 4×4 minimum"
        )));
    }
    if erp_width != 2 * erp_height {
        log::warn!("ERP size {erp_height}×{erp_width} is not 1:2; pixels will not be square");
    }
    let n = layout.resolution();
    let mut coords = Vec::with_capacity(layout.len() * n * n);
    for plane in layout.planes() {
        for row in 0..n {
            for col in 0..n {
                let (x, y) = plane.pixel_to_plane(row as f64, col as f64);
                let p = gnomonic_inverse(x, y, plane);
                coords.push(sphere_to_erp(p, erp_height, erp_width));
            }
        }
    }
    Ok(ProjectionGrid::from_coords(
        layout.clone(),
        erp_height,
        erp_width,
        1,
        coords,
    ))
}

fn gather(map: &[f64], channels: usize, grid: &ProjectionGrid) -> Vec<f64> {
    let mut out = vec![0.0; grid.taps.len() * channels];
    for (dst, (taps, &valid)) in out
        .chunks_exact_mut(channels)
        .zip(grid.taps.iter().zip(&grid.valid))
    {
        if !valid {
            continue;
        }
        for (&idx, &w) in taps.index.iter().zip(&taps.weight) {
            let src = &map[idx * channels..(idx + 1) * channels];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    out
}

/// Splats patch values onto the ERP raster; returns (Σ w·x, Σ w).
fn splat(patches: &[f64], channels: usize, grid: &ProjectionGrid) -> (Vec<f64>, Vec<f64>) {
    let pixels = grid.erp_height * grid.erp_width;
    let mut acc = vec![0.0; pixels * channels];
    let mut weight = vec![0.0; pixels];
    for (src, (taps, &valid)) in patches
        .chunks_exact(channels)
        .zip(grid.taps.iter().zip(&grid.valid))
    {
        if !valid {
            continue;
        }
        for (&idx, &w) in taps.index.iter().zip(&taps.weight) {
            weight[idx] += w;
            let dst = &mut acc[idx * channels..(idx + 1) * channels];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    (acc, weight)
}

/// Resamples an `H×W×C` ERP map into `P×n×n×C` tangent patches.
pub fn sample_erp(erp: &Tensor, grid: &ProjectionGrid) -> Result<Tensor> {
    count_call();
    let c = grid.check_map(erp.shape())?;
    let n = grid.patch_resolution();
    Tensor::new(vec![grid.planes(), n, n, c], gather(erp.data(), c, grid))
}

/// Resamples a stride-`stride` feature map of the grid's ERP image.
///
/// Expects `features` of size `ceil(H/stride)×ceil(W/stride)×C` where `H×W`
/// are the dims of `grid`, which must be a stride-1 grid. For repeated use,
/// derive the strided grid once with [`ProjectionGrid::with_stride`] and
/// call [`sample_erp`] on it.
pub fn sample_features(features: &Tensor, grid: &ProjectionGrid, stride: usize) -> Result<Tensor> {
    let expected = (
        grid.erp_height.div_ceil(stride.max(1)),
        grid.erp_width.div_ceil(stride.max(1)),
    );
    let got = match *features.shape() {
        [h, w, _] => (h, w),
        _ => return Err(Error::dim(format!("features {:?} are not H×W×C", features.shape()))),
    };
    if stride == 0 || got != expected || grid.stride != 1 {
        return Err(Error::StrideMismatch {
            stride,
            erp: (grid.erp_height, grid.erp_width),
            expected,
            got,
        });
    }
    sample_erp(features, &grid.with_stride(stride)?)
}

/// Adjoint of [`sample_erp`]: scatters patch gradients back onto the ERP map.
pub fn sample_erp_adjoint(patch_grad: &Tensor, grid: &ProjectionGrid) -> Result<Tensor> {
    count_call();
    let c = grid.check_patches(patch_grad.shape())?;
    let (acc, _) = splat(patch_grad.data(), c, grid);
    Tensor::new(vec![grid.erp_height, grid.erp_width, c], acc)
}

/// Merges tangent patches back into an ERP map by normalized bilinear splatting.
///
/// Returns the merged map and the accumulated splat weight per ERP pixel;
/// pixels with zero weight are set to 0.
pub fn assemble_t2e(patches: &Tensor, grid: &ProjectionGrid) -> Result<(Tensor, Tensor)> {
    count_call();
    let c = grid.check_patches(patches.shape())?;
    let (mut acc, weight) = splat(patches.data(), c, grid);
    for (px, &w) in acc.chunks_exact_mut(c).zip(&weight) {
        if w > 0.0 {
            px.iter_mut().for_each(|x| *x /= w);
        }
    }
    let (h, w) = (grid.erp_height, grid.erp_width);
    Ok((Tensor::new(vec![h, w, c], acc)?, Tensor::new(vec![h, w], weight)?))
}

/// Nearest-neighbour resampling of a label map into one map per plane.
pub fn sample_labels_nearest(labels: &Labels, grid: &ProjectionGrid) -> Result<Vec<Labels>> {
    count_call();
    if labels.height() != grid.erp_height || labels.width() != grid.erp_width {
        return Err(Error::dim("label map does not match the grid"));
    }
    let n = grid.patch_resolution();
    let (h, w) = (grid.erp_height as i64, grid.erp_width as i64);
    grid.coords
        .chunks_exact(n * n)
        .map(|plane| {
            let data = plane
                .iter()
                .map(|&(u, v)| {
                    let col = (u.round() as i64).rem_euclid(w) as usize;
                    let row = (v.round() as i64).clamp(0, h - 1) as usize;
                    labels.get(row, col)
                })
                .collect();
            Labels::new(n, n, data)
        })
        .collect()
}
