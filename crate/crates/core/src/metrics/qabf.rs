//! Gradient-based edge preservation (Xydeas–Petrović).

use std::f64::consts::FRAC_PI_2;

use crate::error::Result;
use crate::image::Image;

use super::check_triple;

/// Sigmoid parameters of the strength (`g`) and orientation (`a`)
/// preservation factors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QabfConstants {
    pub gamma_g: f64,
    pub kappa_g: f64,
    pub sigma_g: f64,
    pub gamma_a: f64,
    pub kappa_a: f64,
    pub sigma_a: f64,
}

impl Default for QabfConstants {
    fn default() -> Self {
        QabfConstants {
            gamma_g: 0.9994,
            kappa_g: -15.0,
            sigma_g: 0.5,
            gamma_a: 0.9879,
            kappa_a: -22.0,
            sigma_a: 0.8,
        }
    }
}

impl QabfConstants {
    fn q_g(&self, g: f64) -> f64 {
        self.gamma_g / (1.0 + (self.kappa_g * (g - self.sigma_g)).exp())
    }

    fn q_a(&self, a: f64) -> f64 {
        self.gamma_a / (1.0 + (self.kappa_a * (a - self.sigma_a)).exp())
    }
}

/// Sobel magnitude and orientation in `(-π/2, π/2]`, replicate border.
fn sobel(img: &Image) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let px = |x: isize, y: isize| {
        img.at(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize)
    };
    let mut mag = Vec::with_capacity(w * h);
    let mut ang = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            // outer taps are summed first so a mirrored image yields exactly
            // the negated horizontal response
            let dx = |yy| px(x + 1, yy) - px(x - 1, yy);
            let gx = (dx(y - 1) + dx(y + 1)) + 2.0 * dx(y);
            let dy = |xx| px(xx, y + 1) - px(xx, y - 1);
            let gy = (dy(x - 1) + dy(x + 1)) + 2.0 * dy(x);
            mag.push((gx * gx + gy * gy).sqrt());
            ang.push(if gx == 0.0 { FRAC_PI_2 } else { (gy / gx).atan() });
        }
    }
    (mag, ang)
}

/// Per-pixel preservation of source edges in the fused image, scaled so
/// perfect preservation scores 1.
fn preservation(
    k: &QabfConstants,
    (gs, as_): (&[f64], &[f64]),
    (gf, af): (&[f64], &[f64]),
) -> Vec<f64> {
    let top = k.q_g(1.0) * k.q_a(1.0);
    gs.iter()
        .zip(as_)
        .zip(gf.iter().zip(af))
        .map(|((&g_s, &a_s), (&g_f, &a_f))| {
            let g = if g_s == g_f {
                1.0
            } else if g_s > g_f {
                g_f / g_s
            } else {
                g_s / g_f
            };
            // orientations are lines: distance is taken modulo π
            let d = (a_s - a_f).abs();
            let d = d.min(std::f64::consts::PI - d);
            let a = 1.0 - d / FRAC_PI_2;
            k.q_g(g) * k.q_a(a) / top
        })
        .collect()
}

/// Edge-strength-weighted mean preservation of both sources' edges in `f`.
/// Returns 0 when no source has any edge.
pub fn q_abf(a: &Image, b: &Image, f: &Image) -> Result<f64> {
    check_triple(a, b, f)?;
    let k = QabfConstants::default();
    let (ga, aa) = sobel(a);
    let (gb, ab) = sobel(b);
    let (gf, af) = sobel(f);
    let qa = preservation(&k, (&ga, &aa), (&gf, &af));
    let qb = preservation(&k, (&gb, &ab), (&gf, &af));
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..ga.len() {
        num += qa[i] * ga[i] + qb[i] * gb[i];
        den += ga[i] + gb[i];
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}
