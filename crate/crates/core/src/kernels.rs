//! Convolution and resampling kernels shared by the networks.
//!
//! Convolutions are 3×3 with padding 1, lowered to matrix products through
//! `im2col`: the patch matrix has one row per output pixel and columns
//! ordered `(ky, kx, c_in)`, matching `[3, 3, c_in, c_out]` weights.

/// How a convolution treats pixels beyond the image border.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding on all sides (tangent patches, crops).
    Zero,
    /// Zero padding in height, periodic in width (ERP images).
    WrapWidth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_ch: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height - 1) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - 1) / self.stride + 1
    }

    pub fn out_pixels(&self) -> usize {
        self.batch * self.out_height() * self.out_width()
    }

    pub fn patch_len(&self) -> usize {
        9 * self.in_ch
    }

    #[inline]
    fn source_col(&self, ix: isize) -> Option<usize> {
        let w = self.width as isize;
        if (0..w).contains(&ix) {
            Some(ix as usize)
        } else if self.padding == Padding::WrapWidth {
            Some(ix.rem_euclid(w) as usize)
        } else {
            None
        }
    }
}

pub(crate) fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (oh, ow, c) = (g.out_height(), g.out_width(), g.in_ch);
    let k = g.patch_len();
    let mut cols = vec![0.0; g.out_pixels() * k];
    let mut row = 0;
    for n in 0..g.batch {
        let image = &input[n * g.height * g.width * c..(n + 1) * g.height * g.width * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = &mut cols[row * k..(row + 1) * k];
                for ky in 0..3 {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let Some(ix) = g.source_col((ox * g.stride + kx) as isize - 1) else {
                            continue;
                        };
                        let src = (iy as usize * g.width + ix) * c;
                        let off = (ky * 3 + kx) * c;
                        dst[off..off + c].copy_from_slice(&image[src..src + c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates patch-matrix gradients into the input.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (oh, ow, c) = (g.out_height(), g.out_width(), g.in_ch);
    let k = g.patch_len();
    let mut out = vec![0.0; g.batch * g.height * g.width * c];
    let mut row = 0;
    for n in 0..g.batch {
        let image = &mut out[n * g.height * g.width * c..(n + 1) * g.height * g.width * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let src = &cols[row * k..(row + 1) * k];
                for ky in 0..3 {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let Some(ix) = g.source_col((ox * g.stride + kx) as isize - 1) else {
                            continue;
                        };
                        let dst = (iy as usize * g.width + ix) * c;
                        let off = (ky * 3 + kx) * c;
                        for (d, s) in image[dst..dst + c].iter_mut().zip(&src[off..off + c]) {
                            *d += s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// Row-major matrix view description for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) enum Op {
    N,
    T,
}

/// `c = a·b + beta·c` with `a` (m×k) and `b` (k×n) optionally transposed.
///
/// `a` and `b` are stored row-major in their *untransposed* shapes.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    op_a: Op,
    b: &[f64],
    op_b: Op,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = match op_a {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    // SAFETY: the slices hold exactly the m×k, k×n and m×n elements addressed
    // by these strides (checked above in debug builds and by construction).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Bilinear interpolation taps along one axis for ×`factor` upsampling where
/// source sample `j` sits at output position `factor·j`.
pub(crate) fn upsample_taps(src: usize, factor: usize, wrap: bool) -> Vec<(usize, usize, f64)> {
    let out = src * factor;
    (0..out)
        .map(|o| {
            let j = o / factor;
            let t = (o % factor) as f64 / factor as f64;
            if j + 1 < src {
                (j, j + 1, t)
            } else if wrap {
                (j, 0, t)
            } else {
                (j, j, 0.0)
            }
        })
        .collect()
}

/// Upsamples `N×h×w×C` to `N×(h·f)×(w·f)×C`.
pub(crate) fn upsample(
    input: &[f64],
    dims: (usize, usize, usize, usize),
    factor: usize,
    wrap: bool,
) -> Vec<f64> {
    let (n, h, w, c) = dims;
    let rows = upsample_taps(h, factor, false);
    let cols = upsample_taps(w, factor, wrap);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0.0; n * oh * ow * c];
    for b in 0..n {
        let src = &input[b * h * w * c..(b + 1) * h * w * c];
        let dst = &mut out[b * oh * ow * c..(b + 1) * oh * ow * c];
        for (oy, &(r0, r1, fy)) in rows.iter().enumerate() {
            for (ox, &(c0, c1, fx)) in cols.iter().enumerate() {
                let w00 = (1.0 - fy) * (1.0 - fx);
                let w01 = (1.0 - fy) * fx;
                let w10 = fy * (1.0 - fx);
                let w11 = fy * fx;
                let (a, bb, cc, d) = (
                    (r0 * w + c0) * c,
                    (r0 * w + c1) * c,
                    (r1 * w + c0) * c,
                    (r1 * w + c1) * c,
                );
                let o = (oy * ow + ox) * c;
                for ch in 0..c {
                    dst[o + ch] = w00 * src[a + ch] + w01 * src[bb + ch] + w10 * src[cc + ch] + w11 * src[d + ch];
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample`].
pub(crate) fn upsample_adjoint(
    grad: &[f64],
    dims: (usize, usize, usize, usize),
    factor: usize,
    wrap: bool,
) -> Vec<f64> {
    let (n, h, w, c) = dims;
    let rows = upsample_taps(h, factor, false);
    let cols = upsample_taps(w, factor, wrap);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0.0; n * h * w * c];
    for b in 0..n {
        let src = &grad[b * oh * ow * c..(b + 1) * oh * ow * c];
        let dst = &mut out[b * h * w * c..(b + 1) * h * w * c];
        for (oy, &(r0, r1, fy)) in rows.iter().enumerate() {
            for (ox, &(c0, c1, fx)) in cols.iter().enumerate() {
                let weights = [
                    ((r0 * w + c0) * c, (1.0 - fy) * (1.0 - fx)),
                    ((r0 * w + c1) * c, (1.0 - fy) * fx),
                    ((r1 * w + c0) * c, fy * (1.0 - fx)),
                    ((r1 * w + c1) * c, fy * fx),
                ];
                let o = (oy * ow + ox) * c;
                for (base, wt) in weights {
                    if wt == 0.0 {
                        continue;
                    }
                    for ch in 0..c {
                        dst[base + ch] += wt * src[o + ch];
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn im2col_adjoint() {
        for padding in [Padding::Zero, Padding::WrapWidth] {
            for stride in [1, 2] {
                let g = ConvGeometry {
                    batch: 2,
                    height: 5,
                    width: 6,
                    in_ch: 2,
                    stride,
                    padding,
                };
                let x: Vec<f64> = (0..2 * 5 * 6 * 2).map(|i| ((i * 7) % 11) as f64).collect();
                let y: Vec<f64> = (0..g.out_pixels() * g.patch_len())
                    .map(|i| ((i * 5) % 13) as f64 - 6.0)
                    .collect();
                let lhs = dot(&im2col(&x, &g), &y);
                let rhs = dot(&x, &col2im(&y, &g));
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn upsample_adjoint_identity() {
        for wrap in [false, true] {
            let dims = (2, 3, 4, 2);
            let x: Vec<f64> = (0..48).map(|i| ((i * 3) % 7) as f64).collect();
            let y: Vec<f64> = (0..2 * 12 * 16 * 2).map(|i| ((i * 11) % 5) as f64 - 2.0).collect();
            let lhs = dot(&upsample(&x, dims, 4, wrap), &y);
            let rhs = dot(&x, &upsample_adjoint(&y, dims, 4, wrap));
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn upsample_aligns_samples() {
        let x = vec![1.0, 3.0];
        let up = upsample(&x, (1, 1, 2, 1), 2, false);
        assert_eq!(up, [1.0, 2.0, 3.0, 3.0].repeat(2));
        let up = upsample(&x, (1, 1, 2, 1), 2, true);
        assert_eq!(up, [1.0, 2.0, 3.0, 2.0].repeat(2));
    }

    #[test]
    fn gemm_transposes() {
        // a: 2×3, b: 3×2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, Op::N, &b, Op::N, 0.0, &mut c);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // aᵀ·a: a stored as 2×3, used as 3×2 transposed → 3×3
        let mut c = [0.0; 9];
        gemm(3, 2, 3, &a, Op::T, &a, Op::N, 0.0, &mut c);
        assert_eq!(c, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }
}
