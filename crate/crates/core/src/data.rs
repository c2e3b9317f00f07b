//! Aligned image pairs and seeded synthetic stand-ins for them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub name: String,
    pub ir: Image,
    pub vis: Image,
}

/// Visible: smooth illumination ramp with oriented texture and pixel noise.
/// Infrared: a few blurred hot blobs on a flat, lightly noisy background.
pub fn synthetic_pair(width: usize, height: usize, seed: u64) -> (Image, Image) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);

    let (gx, gy): (f64, f64) = (rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
    let (fx, fy): (f64, f64) = (rng.random_range(0.3..1.2), rng.random_range(0.3..1.2));
    let phase: f64 = rng.random_range(0.0..6.28);
    let vis = Image::from_fn(width, height, |x, y| {
        let (u, v) = (x as f64 / w, y as f64 / h);
        0.45 + gx * (u - 0.5) + gy * (v - 0.5) + 0.12 * (fx * x as f64 + fy * y as f64 + phase).sin()
    });
    let vis = vis.map(|p| (p + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));

    let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(1..=3))
        .map(|_| {
            (
                rng.random_range(0.2..0.8) * w,
                rng.random_range(0.2..0.8) * h,
                rng.random_range(0.08..0.18) * w.min(h),
                rng.random_range(0.5..0.8),
            )
        })
        .collect();
    let ir = Image::from_fn(width, height, |x, y| {
        let heat: f64 = blobs
            .iter()
            .map(|&(cx, cy, r, a)| {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                a * (-d2 / (2.0 * r * r)).exp()
            })
            .sum();
        0.15 + heat
    });
    let ir = ir.map(|p| (p + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0));
    (ir, vis)
}

pub fn synthetic_dataset(count: usize, width: usize, height: usize, seed: u64) -> Vec<Pair> {
    (0..count)
        .map(|i| {
            let (ir, vis) = synthetic_pair(width, height, seed.wrapping_mul(1000).wrapping_add(i as u64));
            Pair {
                name: format!("synthetic{i:03}"),
                ir,
                vis,
            }
        })
        .collect()
}

/// Deterministic structured image: ramps, a ring pattern, bars and a
/// bright square, for metric checks.
pub fn test_card(width: usize, height: usize) -> Image {
    let (w, h) = (width as f64, height as f64);
    Image::from_fn(width, height, |x, y| {
        let (u, v) = (x as f64 / w, y as f64 / h);
        let r = ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
        let mut p = 0.3 + 0.3 * u + 0.15 * (r * 40.0).cos();
        if (x / 4) % 2 == 0 && v > 0.75 {
            p += 0.2;
        }
        if (0.15..0.35).contains(&u) && (0.15..0.35).contains(&v) {
            p = 0.95;
        }
        p.clamp(0.0, 1.0)
    })
}

/// Independent uniform noise in [0, 1].
pub fn noise_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(width, height, |_, _| rng.random_range(0.0..1.0))
}
