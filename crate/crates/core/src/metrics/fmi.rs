//! Feature mutual information: normalized MI between local windows of
//! source and fused feature maps, averaged over windows and sources.

use crate::error::{FuseError, Result};
use crate::image::Image;

use super::check_triple;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FmiFeature {
    /// Raw intensities.
    Pixel,
    /// Mean magnitude of the three single-level Haar detail subbands
    /// (half resolution).
    Wavelet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FmiOptions {
    pub window: usize,
    /// Quantization levels per feature map, spread over its own range.
    pub bins: usize,
}

impl Default for FmiOptions {
    fn default() -> Self {
        FmiOptions { window: 8, bins: 4 }
    }
}

/// Feature map as `(width, height, values)`.
type Map = (usize, usize, Vec<f64>);

fn features(img: &Image, kind: FmiFeature) -> Map {
    let (w, h) = (img.width(), img.height());
    match kind {
        FmiFeature::Pixel => (w, h, img.pixels().to_vec()),
        FmiFeature::Wavelet => {
            let (hw, hh) = (w / 2, h / 2);
            let mut v = Vec::with_capacity(hw * hh);
            for y in 0..hh {
                for x in 0..hw {
                    let (a, b) = (img.at(2 * x, 2 * y), img.at(2 * x + 1, 2 * y));
                    let (c, d) = (img.at(2 * x, 2 * y + 1), img.at(2 * x + 1, 2 * y + 1));
                    let lh = (a + b - c - d) / 2.0;
                    let hl = (a - b + c - d) / 2.0;
                    let hh_ = (a - b - c + d) / 2.0;
                    v.push((lh.abs() + hl.abs() + hh_.abs()) / 3.0);
                }
            }
            (hw, hh, v)
        }
    }
}

fn quantize(v: &[f64], bins: usize) -> Vec<usize> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![0; v.len()];
    }
    v.iter()
        .map(|&x| (((x - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1))
        .collect()
}

fn entropy_of(counts: &[u32], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Mean over all stride-1 windows of `2·MI / (H_x + H_y)`. Windows where
/// both maps are constant count as 1.
fn regional_nmi(x: &[usize], y: &[usize], w: usize, h: usize, opts: FmiOptions) -> f64 {
    let (k, b) = (opts.window, opts.bins);
    let n = (k * k) as f64;
    let mut joint = vec![0u32; b * b];
    let mut cx = vec![0u32; b];
    let mut cy = vec![0u32; b];
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=h - k {
        for c0 in 0..=w - k {
            joint.fill(0);
            cx.fill(0);
            cy.fill(0);
            for r in r0..r0 + k {
                for c in c0..c0 + k {
                    let (qx, qy) = (x[r * w + c], y[r * w + c]);
                    joint[qx * b + qy] += 1;
                    cx[qx] += 1;
                    cy[qy] += 1;
                }
            }
            let (hx, hy) = (entropy_of(&cx, n), entropy_of(&cy, n));
            let hxy = entropy_of(&joint, n);
            total += if hx + hy == 0.0 {
                1.0
            } else {
                (2.0 * (hx + hy - hxy) / (hx + hy)).clamp(0.0, 1.0)
            };
            count += 1;
        }
    }
    total / count as f64
}

/// Feature mutual information of `f` against both sources, in [0, 1].
pub fn fmi_with(a: &Image, b: &Image, f: &Image, kind: FmiFeature, opts: FmiOptions) -> Result<f64> {
    check_triple(a, b, f)?;
    if opts.bins < 2 || opts.window == 0 {
        return Err(FuseError::input(format!("invalid FMI options {opts:?}")));
    }
    let (w, h, vf) = features(f, kind);
    if w < opts.window || h < opts.window {
        return Err(FuseError::input(format!(
            "{kind:?} feature map {w}x{h} smaller than the {0}x{0} window",
            opts.window
        )));
    }
    let qf = quantize(&vf, opts.bins);
    let mut sum = 0.0;
    for src in [a, b] {
        let (_, _, vs) = features(src, kind);
        sum += regional_nmi(&quantize(&vs, opts.bins), &qf, w, h, opts);
    }
    Ok(sum / 2.0)
}

pub fn fmi(a: &Image, b: &Image, f: &Image, kind: FmiFeature) -> Result<f64> {
    fmi_with(a, b, f, kind, FmiOptions::default())
}
