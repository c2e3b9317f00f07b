//! Fusion-quality metrics for an (infrared, visible, fused) triple.
//!
//! All metrics are evaluated in 64-bit on [0, 1] images. Metrics with a
//! conventional 8-bit scale (SF, SD, VIF) rescale to [0, 255] internally;
//! histogram-based ones quantize to 256 levels.

mod basic;
mod fmi;
mod msssim;
mod qabf;
mod report;
mod vif;

pub use basic::{entropy, mutual_information, pair_mutual_information, spatial_frequency, standard_deviation};
pub use fmi::{fmi, fmi_with, FmiFeature, FmiOptions};
pub use msssim::{ms_ssim, ms_ssim_pair, MsSsimOptions, MsWindow, MS_SSIM_WEIGHTS};
pub use qabf::{q_abf, QabfConstants};
pub use report::{evaluate_all, write_csv, MetricReport, CSV_HEADER};
pub use vif::{vif_fusion, vifp};

use crate::error::{FuseError, Result};
use crate::image::Image;

fn check_triple(a: &Image, b: &Image, f: &Image) -> Result<()> {
    if !(a.same_size(f) && b.same_size(f)) {
        return Err(FuseError::input(format!(
            "metric inputs differ in size: {}x{}, {}x{}, {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height(),
            f.width(),
            f.height()
        )));
    }
    Ok(())
}

/// Normalized 1-D Gaussian taps.
fn gaussian(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Row-major plane of `w × h` samples.
#[derive(Clone, Debug)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn of(img: &Image, scale: f64) -> Plane {
        Plane {
            w: img.width(),
            h: img.height(),
            v: img.pixels().iter().map(|p| p * scale).collect(),
        }
    }

    fn zip(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Separable correlation keeping only fully covered positions.
    fn filter_valid(&self, taps: &[f64]) -> Plane {
        let k = taps.len();
        let (ow, oh) = (self.w + 1 - k, self.h + 1 - k);
        let mut tmp = vec![0.0; self.h * ow];
        for y in 0..self.h {
            let row = &self.v[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                tmp[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t * tmp[(y + i) * ow + x])
                    .sum();
            }
        }
        Plane { w: ow, h: oh, v: out }
    }

    /// Halves both extents with a rule that commutes with flips: even
    /// lengths average adjacent pairs, odd lengths keep the even-index
    /// samples of a [¼, ½, ¼]-smoothed line with reflected ends.
    fn halve(&self) -> Plane {
        let rows: Vec<Vec<f64>> = self.v.chunks(self.w).map(halve_line).collect();
        let w = rows[0].len();
        let mut cols = vec![Vec::with_capacity(self.h); w];
        for row in &rows {
            for (c, &v) in cols.iter_mut().zip(row) {
                c.push(v);
            }
        }
        let cols: Vec<Vec<f64>> = cols.iter().map(|c| halve_line(c)).collect();
        let h = cols[0].len();
        let v = (0..h).flat_map(|y| cols.iter().map(move |c| c[y])).collect();
        Plane { w, h, v }
    }
}

fn halve_line(line: &[f64]) -> Vec<f64> {
    let m = line.len();
    if m % 2 == 0 {
        return line.chunks(2).map(|p| (p[0] + p[1]) / 2.0).collect();
    }
    if m == 1 {
        return line.to_vec();
    }
    let at = |i: isize| -> f64 {
        let j = if i < 0 { -i } else if i >= m as isize { 2 * (m as isize - 1) - i } else { i };
        line[j as usize]
    };
    (0..m as isize)
        .step_by(2)
        .map(|i| 0.25 * at(i - 1) + 0.5 * at(i) + 0.25 * at(i + 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_taps_normalized_and_symmetric() {
        let g = gaussian(11, 1.5);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(g[i], g[10 - i]);
        }
    }

    #[test]
    fn valid_filter_matches_direct_sum() {
        let img = Image::from_fn(7, 6, |x, y| ((x * 5 + y * 3) % 7) as f64);
        let p = Plane::of(&img, 1.0);
        let taps = [0.25, 0.5, 0.25];
        let out = p.filter_valid(&taps);
        assert_eq!((out.w, out.h), (5, 4));
        for y in 0..4 {
            for x in 0..5 {
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += taps[i] * taps[j] * img.at(x + j, y + i);
                    }
                }
                assert!((out.v[y * 5 + x] - s).abs() < 1e-12);
            }
        }
    }
}
