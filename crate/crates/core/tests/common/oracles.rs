//! Direct re-derivations of the loss and metric definitions.

use std::collections::HashMap;

use tgfuse::autodiff::Tensor;
use tgfuse::loss::SsimConstants;
use tgfuse::Image;

pub fn level(v: f64) -> u8 {
    (v * 255.0).round() as u8
}

pub fn shannon<K>(counts: &HashMap<K, usize>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

pub fn oracle_entropy(f: &Image) -> f64 {
    let mut counts = HashMap::new();
    for &v in f.pixels() {
        *counts.entry(level(v)).or_insert(0) += 1;
    }
    shannon(&counts, f.pixels().len() as f64)
}

pub fn oracle_sd(f: &Image) -> f64 {
    let n = f.pixels().len() as f64;
    let mean_sq = f.pixels().iter().map(|v| (255.0 * v).powi(2)).sum::<f64>() / n;
    let mean = f.pixels().iter().map(|v| 255.0 * v).sum::<f64>() / n;
    let mut acc = 0.0;
    for y in 0..f.height() {
        for x in 0..f.width() {
            acc += (255.0 * f.at(x, y) - mean).powi(2);
        }
    }
    let direct = (acc / n).sqrt();
    assert!((direct * direct - (mean_sq - mean * mean)).abs() < 1e-6);
    direct
}

pub fn oracle_sf(f: &Image) -> f64 {
    let (w, h) = (f.width(), f.height());
    let mut rf = 0.0;
    for y in 0..h {
        for x in 1..w {
            rf += (255.0 * f.at(x, y) - 255.0 * f.at(x - 1, y)).powi(2);
        }
    }
    let mut cf = 0.0;
    for y in 1..h {
        for x in 0..w {
            cf += (255.0 * f.at(x, y) - 255.0 * f.at(x, y - 1)).powi(2);
        }
    }
    (rf / (h * (w - 1)) as f64 + cf / ((h - 1) * w) as f64).sqrt()
}

/// H(X) + H(Y) − H(X, Y) from explicit histograms.
pub fn oracle_pair_mi(x: &Image, y: &Image) -> f64 {
    let n = x.pixels().len() as f64;
    let (mut hx, mut hy, mut hxy) = (HashMap::new(), HashMap::new(), HashMap::new());
    for (&a, &b) in x.pixels().iter().zip(y.pixels()) {
        *hx.entry(level(a)).or_insert(0) += 1;
        *hy.entry(level(b)).or_insert(0) += 1;
        *hxy.entry((level(a), level(b))).or_insert(0) += 1;
    }
    shannon(&hx, n) + shannon(&hy, n) - shannon(&hxy, n)
}

/// Window-by-window evaluation with centered sums, independent of the
/// moment-based implementation.
pub fn brute_force_loss(
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    f: &Tensor<f64>,
    k: SsimConstants,
    n: usize,
    stride: usize,
) -> f64 {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = x.numel() / (h * w);
    let at = |t: &Tensor<f64>, p: usize, r: usize, c: usize| t.data()[p * h * w + r * w + c];
    let mut total = 0.0;
    let mut count = 0;
    for p in 0..planes {
        for r0 in (0..=h - n).step_by(stride) {
            for c0 in (0..=w - n).step_by(stride) {
                let cells: Vec<(f64, f64, f64)> = (r0..r0 + n)
                    .flat_map(|r| (c0..c0 + n).map(move |c| (r, c)))
                    .map(|(r, c)| (at(x, p, r, c), at(y, p, r, c), at(f, p, r, c)))
                    .collect();
                let m = cells.len() as f64;
                let mean = |k: usize| cells.iter().map(|c| [c.0, c.1, c.2][k]).sum::<f64>() / m;
                let (mx, my, mf) = (mean(0), mean(1), mean(2));
                let var = |k: usize, mu: f64| {
                    cells.iter().map(|c| ([c.0, c.1, c.2][k] - mu).powi(2)).sum::<f64>() / m
                };
                let (vx, vy, vf) = (var(0, mx), var(1, my), var(2, mf));
                let (r, mr, vr) = if vx > vy { (0, mx, vx) } else { (1, my, vy) };
                let cov = cells
                    .iter()
                    .map(|c| ([c.0, c.1, c.2][r] - mr) * (c.2 - mf))
                    .sum::<f64>()
                    / m;
                let ssim = ((2.0 * mr * mf + k.c1) * (2.0 * cov + k.c2))
                    / ((mr * mr + mf * mf + k.c1) * (vr + vf + k.c2));
                total += ssim;
                count += 1;
            }
        }
    }
    1.0 - total / count as f64
}

