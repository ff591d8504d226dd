//! Spatial filters shared by enhancement and guidewire segmentation:
//! Gaussian smoothing, convolution, Hessian vesselness and Otsu thresholding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image2D;

/// Normalized 1D Gaussian taps, radius `ceil(3 sigma)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &Image2D, sigma: f64) -> Image2D {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_taps(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let mut tmp = vec![0.0f32; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * img.get_clamped(x as isize + t as isize - r, y as isize) as f64;
            }
            *out = acc as f32;
        }
    });
    let tmp = Image2D::new(w, h, tmp).expect("finite");
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * tmp.get_clamped(x as isize, y as isize + t as isize - r) as f64;
            }
            *o = acc as f32;
        }
    });
    Image2D::new(w, h, out).expect("finite")
}

/// Square kernel with odd side, row-major, centered.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub radius: usize,
    pub taps: Vec<f64>,
}

impl Kernel {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        self.taps[((dy + r) * (2 * r + 1) + dx + r) as usize]
    }
}

/// Correlation with clamp-to-edge borders (equals convolution for the
/// symmetric kernels used here).
pub fn convolve(img: &Image2D, k: &Kernel) -> Image2D {
    let (w, h) = (img.width(), img.height());
    let r = k.radius as isize;
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    acc += k.at(dx, dy) * img.get_clamped(x as isize + dx, y as isize + dy) as f64;
                }
            }
            *o = acc as f32;
        }
    });
    Image2D::new(w, h, out).expect("finite")
}

/// Per-pixel Hessian `(ixx, ixy, iyy)` of the Gaussian-smoothed image,
/// scale-normalized by `sigma^2`.
pub fn hessian(img: &Image2D, sigma: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = gaussian_blur(img, sigma);
    let (w, h) = (img.width(), img.height());
    let n2 = sigma * sigma;
    let mut ixx = vec![0.0; w * h];
    let mut ixy = vec![0.0; w * h];
    let mut iyy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let g = |dx: isize, dy: isize| s.get_clamped(xi + dx, yi + dy) as f64;
            let c = g(0, 0);
            let i = y * w + x;
            ixx[i] = (g(1, 0) - 2.0 * c + g(-1, 0)) * n2;
            iyy[i] = (g(0, 1) - 2.0 * c + g(0, -1)) * n2;
            ixy[i] = 0.25 * (g(1, 1) - g(1, -1) - g(-1, 1) + g(-1, -1)) * n2;
        }
    }
    (ixx, ixy, iyy)
}

/// Eigenvalues of a symmetric 2x2 matrix ordered by magnitude, `|l1| <= |l2|`.
pub fn eigen_sym2(a: f64, b: f64, d: f64) -> (f64, f64) {
    let m = 0.5 * (a + d);
    let q = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (e1, e2) = (m - q, m + q);
    if e1.abs() <= e2.abs() {
        (e1, e2)
    } else {
        (e2, e1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VesselnessParams {
    pub sigma: f64,
    pub beta: f64,
    /// Structure-strength scale; `None` uses half the maximum Hessian norm.
    pub c: Option<f64>,
}

impl Default for VesselnessParams {
    fn default() -> Self {
        VesselnessParams {
            sigma: 1.5,
            beta: 0.5,
            c: None,
        }
    }
}

/// Frangi vesselness for bright tubular structures on a dark background.
///
/// Eigenvalues are ordered by magnitude (`|l1| <= |l2|`), so `l2` is the
/// across-vessel curvature; pixels with `l2 > 0` get 0.
pub fn vesselness(img: &Image2D, p: &VesselnessParams) -> Result<Image2D> {
    if !(p.sigma > 0.0 && p.beta > 0.0) || p.c.is_some_and(|c| c <= 0.0) {
        return Err(Error::InvalidParameter("vesselness needs sigma, beta, c > 0".into()));
    }
    let (ixx, ixy, iyy) = hessian(img, p.sigma);
    let eig: Vec<(f64, f64)> = (0..ixx.len()).map(|i| eigen_sym2(ixx[i], ixy[i], iyy[i])).collect();
    let c = p.c.unwrap_or_else(|| {
        0.5 * eig
            .iter()
            .map(|&(l1, l2)| (l1 * l1 + l2 * l2).sqrt())
            .fold(0.0, f64::max)
    });
    let pixels = eig
        .iter()
        .map(|&(l1, l2)| {
            if l2 >= 0.0 || c == 0.0 {
                return 0.0;
            }
            let rb = l1 / l2;
            let s2 = l1 * l1 + l2 * l2;
            ((-rb * rb / (2.0 * p.beta * p.beta)).exp() * (1.0 - (-s2 / (2.0 * c * c)).exp())) as f32
        })
        .collect();
    Image2D::new(img.width(), img.height(), pixels)
}

/// Pixel-wise maximum of vesselness over several scales.
pub fn vesselness_multiscale(img: &Image2D, sigmas: &[f64], beta: f64) -> Result<Image2D> {
    let mut best: Option<Image2D> = None;
    for &sigma in sigmas {
        let v = vesselness(img, &VesselnessParams { sigma, beta, c: None })?;
        best = Some(match best {
            None => v,
            Some(mut b) => {
                for (o, n) in b.pixels_mut().iter_mut().zip(v.pixels()) {
                    *o = o.max(*n);
                }
                b
            }
        });
    }
    best.ok_or_else(|| Error::InvalidParameter("no vesselness scales given".into()))
}

/// Otsu threshold over a 256-bin histogram of the image range.
pub fn otsu_threshold(img: &Image2D) -> f32 {
    let (lo, hi) = img.min_max();
    if hi <= lo {
        return hi;
    }
    const BINS: usize = 256;
    let scale = (BINS - 1) as f32 / (hi - lo);
    let mut hist = [0usize; BINS];
    for &v in img.pixels() {
        hist[((v - lo) * scale) as usize] += 1;
    }
    let total = img.pixels().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0usize);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    lo + (best_t as f32 + 0.5) / scale
}

/// Binary mask (1.0 / 0.0) of pixels strictly above `t`.
pub fn threshold(img: &Image2D, t: f32) -> Image2D {
    img.map(|v| if v > t { 1.0 } else { 0.0 })
}
