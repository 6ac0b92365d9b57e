#![allow(dead_code)]

use std::path::Path;

use noise_transfer::config::{Pairing, TrainConfig};
use noise_transfer::image::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(c, h, w, (0..c * h * w).map(|_| rng.gen()).collect()).unwrap()
}

/// Piecewise-smooth test picture: a linear ramp plus a few flat rectangles
/// and discs.
pub fn shapes_image(c: usize, h: usize, w: usize, seed: u64) -> Image<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0f32; c * h * w];
    for ch in 0..c {
        let base: f32 = rng.gen_range(0.2..0.8);
        let (gy, gx): (f32, f32) = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
        for y in 0..h {
            for x in 0..w {
                data[(ch * h + y) * w + x] =
                    base + gy * (y as f32 / h as f32 - 0.5) + gx * (x as f32 / w as f32 - 0.5);
            }
        }
    }
    for _ in 0..rng.gen_range(2..6) {
        let v: Vec<f32> = (0..c).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (cy, cx) = (rng.gen_range(0..h) as f32, rng.gen_range(0..w) as f32);
        let r = rng.gen_range(2.0..(h.min(w) as f32 / 2.0));
        let disc = rng.gen_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f32 - cy, x as f32 - cx);
                let inside = if disc {
                    dy * dy + dx * dx <= r * r
                } else {
                    dy.abs() <= r && dx.abs() <= r * 0.7
                };
                if inside {
                    for ch in 0..c {
                        data[(ch * h + y) * w + x] = v[ch];
                    }
                }
            }
        }
    }
    let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Image::new(c, h, w, data).unwrap()
}

pub fn write_images(dir: &Path, count: usize, c: usize, h: usize, w: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        shapes_image(c, h, w, seed + i as u64)
            .save_png(&dir.join(format!("img{i:03}.png")))
            .unwrap();
    }
}

/// Smallest configuration that exercises every component.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        image_channels: 3,
        patch_size: 16,
        patches_per_image: 2,
        pairing: Pairing::None,
        num_ntb: 1,
        rb_per_ntb: 1,
        channels: 8,
        ca_bottleneck: 2,
        noise_branch_pools: 2,
        disc_layers: 3,
        disc_base_channels: 8,
        lr: 1e-3,
        total_iters: 20,
        lr_halve_at: 10,
        long_skip_last_iters: 5,
        batch_size: 2,
        checkpoint_every: 10,
        seed: 11,
        ..TrainConfig::default()
    }
}
