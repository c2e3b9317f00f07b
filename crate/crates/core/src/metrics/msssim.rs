//! Multi-scale SSIM on a dyadic 2×2-average pyramid.

use crate::error::{FuseError, Result};
use crate::image::Image;
use crate::loss::SsimConstants;

use super::{check_triple, gaussian, Plane};

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MsWindow {
    Gaussian { size: usize, sigma: f64 },
    Uniform { size: usize },
}

impl MsWindow {
    fn size(self) -> usize {
        match self {
            MsWindow::Gaussian { size, .. } | MsWindow::Uniform { size } => size,
        }
    }

    fn taps(self) -> Vec<f64> {
        match self {
            MsWindow::Gaussian { size, sigma } => gaussian(size, sigma),
            MsWindow::Uniform { size } => vec![1.0 / size as f64; size],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsSsimOptions {
    pub max_scales: usize,
    pub window: MsWindow,
}

impl Default for MsSsimOptions {
    fn default() -> Self {
        MsSsimOptions {
            max_scales: 5,
            window: MsWindow::Gaussian {
                size: 11,
                sigma: 1.5,
            },
        }
    }
}

pub const MIN_SIDE: usize = 16;

/// Scales for which the window still fits after `s − 1` halvings.
fn scale_count(short: usize, window: usize, max: usize) -> usize {
    (1..=max.min(MS_SSIM_WEIGHTS.len()))
        .take_while(|&s| short >= window << (s - 1))
        .count()
}

/// Mean luminance·contrast·structure and contrast·structure terms.
fn ssim_terms(x: &Plane, y: &Plane, taps: &[f64], k: SsimConstants) -> (f64, f64) {
    let mx = x.filter_valid(taps);
    let my = y.filter_valid(taps);
    let exx = x.zip(x, |a, b| a * b).filter_valid(taps);
    let eyy = y.zip(y, |a, b| a * b).filter_valid(taps);
    let exy = x.zip(y, |a, b| a * b).filter_valid(taps);
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.v.len() {
        let (ux, uy) = (mx.v[i], my.v[i]);
        let vx = exx.v[i] - ux * ux;
        let vy = eyy.v[i] - uy * uy;
        let cov = exy.v[i] - ux * uy;
        let c = (2.0 * cov + k.c2) / (vx + vy + k.c2);
        let l = (2.0 * ux * uy + k.c1) / (ux * ux + uy * uy + k.c1);
        ssim += l * c;
        cs += c;
    }
    let n = mx.v.len() as f64;
    (ssim / n, cs / n)
}

/// MS-SSIM between two images. Scales whose window would not fit are
/// dropped and the remaining weights renormalized; negative per-scale
/// terms are clamped to 0.
pub fn ms_ssim_pair(x: &Image, y: &Image, opts: MsSsimOptions) -> Result<f64> {
    let short = x.width().min(x.height());
    let size = opts.window.size();
    if short < MIN_SIDE.max(size) {
        return Err(FuseError::input(format!(
            "MS-SSIM needs at least {} px on the short side, got {short}",
            MIN_SIDE.max(size)
        )));
    }
    let scales = scale_count(short, size, opts.max_scales).max(1);
    let total: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let taps = opts.window.taps();
    let k = SsimConstants::default();
    let (mut px, mut py) = (Plane::of(x, 1.0), Plane::of(y, 1.0));
    let mut value = 1.0;
    for s in 0..scales {
        let (ssim, cs) = ssim_terms(&px, &py, &taps, k);
        let term = if s + 1 == scales { ssim } else { cs };
        value *= term.max(0.0).powf(MS_SSIM_WEIGHTS[s] / total);
        px = px.halve();
        py = py.halve();
    }
    Ok(value)
}

/// `(MS-SSIM(F, A) + MS-SSIM(F, B)) / 2`.
pub fn ms_ssim(a: &Image, b: &Image, f: &Image) -> Result<f64> {
    check_triple(a, b, f)?;
    let opts = MsSsimOptions::default();
    Ok((ms_ssim_pair(f, a, opts)? + ms_ssim_pair(f, b, opts)?) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_counts() {
        assert_eq!(scale_count(176, 11, 5), 5);
        assert_eq!(scale_count(175, 11, 5), 4);
        assert_eq!(scale_count(32, 11, 5), 2);
        assert_eq!(scale_count(16, 11, 5), 1);
        assert_eq!(scale_count(256, 11, 3), 3);
    }

    #[test]
    fn small_images_rejected() {
        let img = Image::filled(15, 40, 0.5);
        assert!(ms_ssim_pair(&img, &img, MsSsimOptions::default()).is_err());
    }
}
