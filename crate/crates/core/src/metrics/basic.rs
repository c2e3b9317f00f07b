//! SF, EN, SD and MI.

use crate::error::{FuseError, Result};
use crate::image::Image;

use super::check_triple;

/// `sqrt(RF² + CF²)` on the [0, 255] scale, with RF and CF the RMS of the
/// horizontal and vertical first differences.
pub fn spatial_frequency(f: &Image) -> Result<f64> {
    let (w, h) = (f.width(), f.height());
    if w < 2 && h < 2 {
        return Err(FuseError::input("spatial frequency needs more than one pixel"));
    }
    let rms = |diffs: &mut dyn Iterator<Item = f64>| {
        let (mut s, mut n) = (0.0, 0usize);
        for d in diffs {
            s += d * d;
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            (s / n as f64).sqrt()
        }
    };
    let rf = rms(&mut (0..h).flat_map(|y| (1..w).map(move |x| (x, y))).map(|(x, y)| 255.0 * (f.at(x, y) - f.at(x - 1, y))));
    let cf = rms(&mut (1..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| 255.0 * (f.at(x, y) - f.at(x, y - 1))));
    Ok((rf * rf + cf * cf).sqrt())
}

fn histogram(levels: &[u8]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &l in levels {
        h[l as usize] += 1;
    }
    h
}

fn shannon(counts: impl Iterator<Item = u64>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// Shannon entropy in bits of the 256-level histogram.
pub fn entropy(f: &Image) -> f64 {
    let levels = f.levels();
    shannon(histogram(&levels).into_iter(), levels.len() as f64)
}

/// Population standard deviation on the [0, 255] scale.
pub fn standard_deviation(f: &Image) -> f64 {
    let n = f.pixels().len() as f64;
    let mean = f.pixels().iter().map(|v| v * 255.0).sum::<f64>() / n;
    let var = f
        .pixels()
        .iter()
        .map(|v| (v * 255.0 - mean).powi(2))
        .sum::<f64>()
        / n;
    var.sqrt()
}

/// Mutual information in bits between two equally sized images, from
/// their 256×256 joint level histogram.
pub fn pair_mutual_information(x: &Image, y: &Image) -> f64 {
    let (lx, ly) = (x.levels(), y.levels());
    let n = lx.len() as f64;
    let mut joint = vec![0u64; 256 * 256];
    for (&a, &b) in lx.iter().zip(&ly) {
        joint[a as usize * 256 + b as usize] += 1;
    }
    let (hx, hy) = (histogram(&lx), histogram(&ly));
    let mut mi = 0.0;
    for a in 0..256 {
        if hx[a] == 0 {
            continue;
        }
        for b in 0..256 {
            let c = joint[a * 256 + b];
            if c > 0 {
                let pab = c as f64 / n;
                mi += pab * (pab * n * n / (hx[a] as f64 * hy[b] as f64)).log2();
            }
        }
    }
    mi.max(0.0)
}

/// `MI(F, A) + MI(F, B)`.
pub fn mutual_information(a: &Image, b: &Image, f: &Image) -> Result<f64> {
    check_triple(a, b, f)?;
    Ok(pair_mutual_information(f, a) + pair_mutual_information(f, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_images_have_no_information() {
        let c = Image::filled(8, 8, 0.4);
        assert_eq!(spatial_frequency(&c).unwrap(), 0.0);
        assert_eq!(entropy(&c), 0.0);
        assert_eq!(standard_deviation(&c), 0.0);
    }

    #[test]
    fn stripes_and_checkerboards() {
        let stripes = Image::from_fn(8, 8, |x, _| (x % 2) as f64);
        let sf = spatial_frequency(&stripes).unwrap();
        assert!((sf - 255.0).abs() < 1e-12);
        let checker = Image::from_fn(8, 8, |x, y| ((x + y) % 2) as f64);
        assert!((standard_deviation(&checker) - 127.5).abs() < 1e-12);
        assert!((entropy(&checker) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_pixel_sf_rejected() {
        assert!(spatial_frequency(&Image::filled(1, 1, 0.0)).is_err());
        assert!(spatial_frequency(&Image::filled(1, 3, 0.0)).is_ok());
    }

    #[test]
    fn self_information_is_entropy() {
        let f = Image::from_fn(16, 16, |x, y| ((x * 7 + y * 13) % 23) as f64 / 22.0);
        let mi = mutual_information(&f, &f, &f).unwrap();
        assert!((mi - 2.0 * entropy(&f)).abs() < 1e-10);
    }
}
