#![allow(dead_code)]

pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgfuse::autodiff::Tensor;
use tgfuse::{FusionConfig, Image};

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

pub fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, |_, _| rng.random_range(0.0..1.0))
}

/// Random 8-bit levels mapped to [0, 1].
pub fn random_level_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, |_, _| rng.random_range(0..=255u8) as f64 / 255.0)
}

/// Smallest configuration that still exercises every component.
pub fn tiny_config() -> FusionConfig {
    FusionConfig {
        cnn_layers: 2,
        channels: 8,
        spatial_embed: 16,
        channel_embed: 16,
        encoder_layers: 1,
        heads: 2,
        ..FusionConfig::default()
    }
}

pub fn rel_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.max_abs_diff(b) / a.max_abs().max(b.max_abs()).max(1e-300)
}

/// Rearranges `[b, c, h, w]` in `tile`×`tile` blocks: output tile `i`
/// is input tile `perm[i]`, tiles counted row-major.
pub fn permute_tiles(t: &Tensor<f64>, tile: usize, perm: &[usize]) -> Tensor<f64> {
    let s = t.shape().to_vec();
    let (h, w) = (s[2], s[3]);
    let tw = w / tile;
    Tensor::from_fn(&s, |i| {
        let x = i % w;
        let y = (i / w) % h;
        let plane = i / (w * h);
        let src = perm[(y / tile) * tw + x / tile];
        let (sy, sx) = ((src / tw) * tile + y % tile, (src % tw) * tile + x % tile);
        t.data()[plane * h * w + sy * w + sx]
    })
}
