//! Pixel-domain visual information fidelity.

use crate::error::{FuseError, Result};
use crate::image::Image;

use super::{check_triple, gaussian, Plane};

/// Variance of the additive neuron noise, in 8-bit units squared.
const SIGMA_NSQ: f64 = 2.0;
const TINY: f64 = 1e-10;
pub const MIN_SIDE: usize = 32;

/// Information `dist` preserves about `reference` over a four-scale
/// pyramid. Scales at which the filter no longer fits are skipped. A flat
/// reference carries no information; its score is defined as 1.
pub fn vifp(reference: &Image, dist: &Image) -> Result<f64> {
    let short = reference.width().min(reference.height());
    if short < MIN_SIDE || !reference.same_size(dist) {
        return Err(FuseError::input(format!(
            "VIF needs equally sized images of at least {MIN_SIDE} px"
        )));
    }
    let mut r = Plane::of(reference, 255.0);
    let mut d = Plane::of(dist, 255.0);
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 1..=4 {
        let n = (1 << (5 - scale)) + 1;
        let taps = gaussian(n, n as f64 / 5.0);
        if scale > 1 {
            if r.w < n || r.h < n {
                break;
            }
            r = r.filter_valid(&taps).halve();
            d = d.filter_valid(&taps).halve();
        }
        if r.w < n || r.h < n {
            break;
        }
        let mu1 = r.filter_valid(&taps);
        let mu2 = d.filter_valid(&taps);
        let e11 = r.zip(&r, |a, b| a * b).filter_valid(&taps);
        let e22 = d.zip(&d, |a, b| a * b).filter_valid(&taps);
        let e12 = r.zip(&d, |a, b| a * b).filter_valid(&taps);
        for i in 0..mu1.v.len() {
            let (m1, m2) = (mu1.v[i], mu2.v[i]);
            let mut s1 = (e11.v[i] - m1 * m1).max(0.0);
            let s2 = (e22.v[i] - m2 * m2).max(0.0);
            let s12 = e12.v[i] - m1 * m2;
            let mut g = s12 / (s1 + TINY);
            let mut sv = s2 - g * s12;
            if s1 < TINY {
                g = 0.0;
                sv = s2;
                s1 = 0.0;
            }
            if s2 < TINY {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = s2;
                g = 0.0;
            }
            let sv = sv.max(TINY);
            num += (1.0 + g * g * s1 / (sv + SIGMA_NSQ)).log10();
            den += (1.0 + s1 / SIGMA_NSQ).log10();
        }
    }
    Ok(if den > 0.0 { num / den } else { 1.0 })
}

/// Mean of `VIF(A → F)` and `VIF(B → F)`.
pub fn vif_fusion(a: &Image, b: &Image, f: &Image) -> Result<f64> {
    check_triple(a, b, f)?;
    Ok((vifp(a, f)? + vifp(b, f)?) / 2.0)
}
