//! DRR enhancement: CLAHE, multi-scale LoG edge sharpening and
//! vessel-selective piecewise-linear contrast, plus CNR / FWHM evaluation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{convolve, otsu_threshold, threshold, vesselness_multiscale, Kernel};
use crate::image::Image2D;

const HIST_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhanceParams {
    /// Per-bin clip limit as a fraction of the tile pixel count.
    pub clahe_clip: f64,
    /// CLAHE tile grid (columns, rows).
    pub clahe_tiles: [usize; 2],
    pub log_sigmas: Vec<f64>,
    /// Weight of the fused LoG response subtracted from the CLAHE output.
    pub log_weight: f64,
    pub vessel_gain: f64,
    pub background_gain: f64,
    /// Additive offset; `None` keeps the global mean unchanged.
    pub vessel_offset: Option<f64>,
    /// Probability at or above which a pixel counts as vessel.
    pub vessel_threshold: f64,
    /// Scales for the vesselness-based probability map.
    pub frangi_sigmas: Vec<f64>,
    pub frangi_beta: f64,
}

impl Default for EnhanceParams {
    fn default() -> Self {
        EnhanceParams {
            clahe_clip: 0.03,
            clahe_tiles: [8, 8],
            log_sigmas: vec![0.8, 1.2, 1.6],
            log_weight: 0.5,
            vessel_gain: 1.4,
            background_gain: 0.9,
            vessel_offset: None,
            vessel_threshold: 0.5,
            frangi_sigmas: vec![1.0, 2.0, 3.0],
            frangi_beta: 0.5,
        }
    }
}

impl EnhanceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clahe_clip > 0.0 && self.clahe_clip <= 1.0) {
            return Err(Error::InvalidParameter("clahe_clip must be in (0, 1]".into()));
        }
        if self.clahe_tiles.contains(&0) {
            return Err(Error::InvalidParameter("clahe_tiles must be >= 1".into()));
        }
        if self.log_sigmas.iter().chain(&self.frangi_sigmas).any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParameter("filter scales must be > 0".into()));
        }
        if !(self.vessel_gain > 0.0 && self.background_gain > 0.0) {
            return Err(Error::InvalidParameter("contrast gains must be > 0".into()));
        }
        Ok(())
    }
}

/// Contrast-limited adaptive histogram equalization. `tile` is the tile size
/// in pixels; the input is min-max normalized first and the output lies in
/// [0, 1].
pub fn clahe(img: &Image2D, clip: f64, tile: (usize, usize)) -> Result<Image2D> {
    let (w, h) = (img.width(), img.height());
    let (tw, th) = tile;
    if tw == 0 || th == 0 || tw > w || th > h {
        return Err(Error::InvalidParameter(format!(
            "CLAHE tile {tw}x{th} does not fit a {w}x{h} image"
        )));
    }
    if !(clip > 0.0 && clip <= 1.0) {
        return Err(Error::InvalidParameter("CLAHE clip must be in (0, 1]".into()));
    }
    let norm = img.normalized();
    let bin = |v: f32| ((v as f64 * (HIST_BINS - 1) as f64).round() as usize).min(HIST_BINS - 1);
    let nx = w.div_ceil(tw);
    let ny = h.div_ceil(th);
    let mut luts = vec![[0.0f64; HIST_BINS]; nx * ny];
    for ty in 0..ny {
        for tx in 0..nx {
            let mut hist = [0.0f64; HIST_BINS];
            let mut count = 0.0;
            for y in ty * th..((ty + 1) * th).min(h) {
                for x in tx * tw..((tx + 1) * tw).min(w) {
                    hist[bin(norm.get(x, y))] += 1.0;
                    count += 1.0;
                }
            }
            let limit = (clip * count).max(1.0);
            let mut excess = 0.0;
            for c in hist.iter_mut() {
                if *c > limit {
                    excess += *c - limit;
                    *c = limit;
                }
            }
            let share = excess / HIST_BINS as f64;
            let lut = &mut luts[ty * nx + tx];
            let mut acc = 0.0;
            for (b, c) in hist.iter().enumerate() {
                acc += c + share;
                lut[b] = acc / count;
            }
        }
    }
    // Bilinear blending between the mappings of the four nearest tile centers.
    let axis = |p: usize, size: usize, n: usize| -> (usize, usize, f64) {
        let g = ((p as f64 + 0.5) / size as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = g.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, g - i0 as f64)
    };
    let out = Image2D::from_fn(w, h, |x, y| {
        let b = bin(norm.get(x, y));
        let (x0, x1, fx) = axis(x, tw, nx);
        let (y0, y1, fy) = axis(y, th, ny);
        let m = |tx: usize, ty: usize| luts[ty * nx + tx][b];
        let top = m(x0, y0) * (1.0 - fx) + m(x1, y0) * fx;
        let bot = m(x0, y1) * (1.0 - fx) + m(x1, y1) * fx;
        (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0) as f32
    });
    Ok(out)
}

/// `-1/(pi s^4) * (1 - r^2/(2 s^2)) * exp(-r^2/(2 s^2))`.
pub fn log_value(x: f64, y: f64, sigma: f64) -> f64 {
    let q = (x * x + y * y) / (2.0 * sigma * sigma);
    -1.0 / (PI * sigma.powi(4)) * (1.0 - q) * (-q).exp()
}

/// Sampled LoG kernel, radius `ceil(4 sigma)`, with its mean removed so that
/// constant images give a zero response.
pub fn log_kernel(sigma: f64) -> Kernel {
    let r = (4.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .flat_map(|y| (-r..=r).map(move |x| log_value(x as f64, y as f64, sigma)))
        .collect();
    let mean = taps.iter().sum::<f64>() / taps.len() as f64;
    taps.iter_mut().for_each(|v| *v -= mean);
    Kernel {
        radius: r as usize,
        taps,
    }
}

/// LoG response. `negate` flips the sign (positive center lobe).
pub fn log_filter(img: &Image2D, sigma: f64, negate: bool) -> Image2D {
    let r = convolve(img, &log_kernel(sigma));
    if negate {
        r.map(|v| -v)
    } else {
        r
    }
}

/// Per pixel, the LoG response with the largest magnitude across scales.
pub fn fused_log_response(img: &Image2D, sigmas: &[f64]) -> Image2D {
    let mut fused = Image2D::zeros(img.width(), img.height());
    for &s in sigmas {
        let r = log_filter(img, s, false);
        for (f, &v) in fused.pixels_mut().iter_mut().zip(r.pixels()) {
            if v.abs() > f.abs() {
                *f = v;
            }
        }
    }
    fused
}

/// `I - weight * fused LoG`: steepens intensity transitions at every scale.
pub fn log_sharpen(img: &Image2D, sigmas: &[f64], weight: f64) -> Image2D {
    let fused = fused_log_response(img, sigmas);
    let mut out = img.clone();
    for (o, &r) in out.pixels_mut().iter_mut().zip(fused.pixels()) {
        *o -= (weight * r as f64) as f32;
    }
    out
}

/// Piecewise-linear contrast: `gain * I + beta`, with the vessel gain where
/// `vessel_prob >= threshold` and the background gain elsewhere.
pub fn vessel_contrast(img: &Image2D, vessel_prob: &Image2D, params: &EnhanceParams) -> Result<Image2D> {
    img.same_size(vessel_prob)?;
    if vessel_prob.pixels().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidParameter("vessel probabilities must lie in [0, 1]".into()));
    }
    let gains: Vec<f64> = vessel_prob
        .pixels()
        .iter()
        .map(|&p| {
            if p as f64 >= params.vessel_threshold {
                params.vessel_gain
            } else {
                params.background_gain
            }
        })
        .collect();
    let beta = match params.vessel_offset {
        Some(b) => b,
        None => {
            let n = img.pixels().len() as f64;
            let before: f64 = img.pixels().iter().map(|&v| v as f64).sum::<f64>() / n;
            let after: f64 = img.pixels().iter().zip(&gains).map(|(&v, g)| g * v as f64).sum::<f64>() / n;
            before - after
        }
    };
    let pixels = img
        .pixels()
        .iter()
        .zip(&gains)
        .map(|(&v, g)| (g * v as f64 + beta) as f32)
        .collect();
    Image2D::new(img.width(), img.height(), pixels)
}

/// Binary vessel map from multi-scale vesselness thresholded at Otsu's level.
pub fn vessel_probability(img: &Image2D, params: &EnhanceParams) -> Result<Image2D> {
    let v = vesselness_multiscale(&img.normalized(), &params.frangi_sigmas, params.frangi_beta)?;
    let (_, hi) = v.min_max();
    if hi <= 0.0 {
        return Ok(Image2D::zeros(img.width(), img.height()));
    }
    Ok(threshold(&v, otsu_threshold(&v)))
}

/// CLAHE -> multi-scale LoG sharpening -> vessel contrast -> [0, 1].
/// Without `vessel_prob` a vesselness-based map is derived from `img`.
pub fn enhance_pipeline(img: &Image2D, vessel_prob: Option<&Image2D>, params: &EnhanceParams) -> Result<Image2D> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    let tile = (w.div_ceil(params.clahe_tiles[0]), h.div_ceil(params.clahe_tiles[1]));
    let equalized = clahe(img, params.clahe_clip, tile)?;
    let sharpened = log_sharpen(&equalized, &params.log_sigmas, params.log_weight);
    let derived;
    let prob = match vessel_prob {
        Some(p) => p,
        None => {
            derived = vessel_probability(img, params)?;
            &derived
        }
    };
    let contrasted = vessel_contrast(&sharpened, prob, params)?;
    Ok(contrasted.normalized())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhanceReport {
    pub cnr_before: f64,
    pub cnr_after: f64,
}

/// Run the pipeline and measure CNR on the given foreground/background masks.
pub fn enhance_with_report(
    img: &Image2D,
    vessel_prob: Option<&Image2D>,
    params: &EnhanceParams,
    fg_mask: &Image2D,
    bg_mask: &Image2D,
) -> Result<(Image2D, EnhanceReport)> {
    let out = enhance_pipeline(img, vessel_prob, params)?;
    let report = EnhanceReport {
        cnr_before: cnr(img, fg_mask, bg_mask)?,
        cnr_after: cnr(&out, fg_mask, bg_mask)?,
    };
    Ok((out, report))
}

fn masked_stats(img: &Image2D, mask: &Image2D) -> Result<(f64, f64, usize)> {
    img.same_size(mask)?;
    let vals: Vec<f64> = img
        .pixels()
        .iter()
        .zip(mask.pixels())
        .filter(|(_, &m)| m > 0.0)
        .map(|(&v, _)| v as f64)
        .collect();
    if vals.is_empty() {
        return Err(Error::InvalidParameter("mask selects no pixels".into()));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt(), vals.len()))
}

/// `|mean_fg - mean_bg| / std_bg` (population std); masks select pixels > 0.
pub fn cnr(img: &Image2D, fg_mask: &Image2D, bg_mask: &Image2D) -> Result<f64> {
    let (mf, _, _) = masked_stats(img, fg_mask)?;
    let (mb, sb, _) = masked_stats(img, bg_mask)?;
    if sb == 0.0 {
        return Err(Error::Undefined("background standard deviation is zero".into()));
    }
    Ok((mf - mb).abs() / sb)
}

/// Full width at half maximum of a unimodal profile (half level measured
/// from the profile minimum), with linear interpolation at the crossings.
pub fn fwhm(profile: &[f64]) -> Result<f64> {
    if profile.len() < 3 {
        return Err(Error::InsufficientData("FWHM needs at least 3 samples".into()));
    }
    let (peak, &max) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let min = profile.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= min {
        return Err(Error::Undefined("flat profile has no half maximum".into()));
    }
    let half = min + 0.5 * (max - min);
    let left = (0..peak).rev().find(|&i| profile[i] < half).map(|i| {
        let (a, b) = (profile[i], profile[i + 1]);
        i as f64 + (half - a) / (b - a)
    });
    let right = (peak + 1..profile.len()).find(|&i| profile[i] < half).map(|i| {
        let (a, b) = (profile[i - 1], profile[i]);
        (i - 1) as f64 + (a - half) / (a - b)
    });
    match (left, right) {
        (Some(l), Some(r)) => Ok(r - l),
        _ => Err(Error::Undefined("profile does not cross half maximum on both sides".into())),
    }
}

/// FWHM of the absolute derivative of an edge profile.
pub fn edge_fwhm(profile: &[f64]) -> Result<f64> {
    let d: Vec<f64> = profile.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    fwhm(&d)
}
