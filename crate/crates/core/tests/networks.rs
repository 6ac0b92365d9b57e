mod common;

use common::random_image;
use noise_transfer::discriminator::{Discriminator, DiscriminatorConfig};
use noise_transfer::evaluation::denoise;
use noise_transfer::generator::{Generator, GeneratorConfig, Mode};
use noise_transfer::image::NoiseLevelMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Input rows (or columns) that can influence output index `o`, walking the
/// layer stack backwards.
fn receptive_range(disc: &Discriminator, o: usize) -> (i64, i64) {
    let k = disc.config().kernel as i64;
    let (mut lo, mut hi) = (o as i64, o as i64);
    for l in disc.layer_specs().iter().rev() {
        lo = lo * l.stride as i64 - l.pad as i64;
        hi = hi * l.stride as i64 - l.pad as i64 + k - 1;
    }
    (lo, hi)
}

#[test]
fn discriminator_logits_are_local() {
    let disc = Discriminator::new(DiscriminatorConfig {
        image_channels: 3,
        layers: 4,
        base_channels: 8,
        kernel: 4,
    })
    .unwrap();
    let params = disc
        .init_params::<f64, _>(&mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    let img = random_image(3, 40, 40, 2);
    let m = NoiseLevelMap::constant(40, 40, 0.1);
    let base = disc.forward(&params, &m, &img).unwrap();
    let (_, oh, ow) = base.chw();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let (py, px) = (rng.gen_range(0..40), rng.gen_range(0..40));
        let mut moved = img.clone();
        moved.data_mut()[(40 + py) * 40 + px] += 0.5;
        let out = disc.forward(&params, &m, &moved).unwrap();
        let mut changed = 0;
        for y in 0..oh {
            for x in 0..ow {
                let (ylo, yhi) = receptive_range(&disc, y);
                let (xlo, xhi) = receptive_range(&disc, x);
                let inside =
                    (ylo..=yhi).contains(&(py as i64)) && (xlo..=xhi).contains(&(px as i64));
                let same = out.data()[y * ow + x] == base.data()[y * ow + x];
                if !inside {
                    assert!(same, "logit ({y},{x}) moved by pixel ({py},{px})");
                }
                changed += usize::from(!same);
            }
        }
        assert!(changed > 0);
    }
}

#[test]
fn discriminator_is_conditioned_on_the_map() {
    let disc = Discriminator::new(DiscriminatorConfig {
        image_channels: 1,
        layers: 3,
        base_channels: 8,
        kernel: 4,
    })
    .unwrap();
    let img = random_image(1, 16, 16, 4);
    for draw in 0..10 {
        let params = disc
            .init_params::<f64, _>(&mut ChaCha8Rng::seed_from_u64(draw))
            .unwrap();
        let a = disc
            .forward(&params, &NoiseLevelMap::constant(16, 16, 0.02), &img)
            .unwrap();
        let b = disc
            .forward(&params, &NoiseLevelMap::constant(16, 16, 0.2), &img)
            .unwrap();
        assert_ne!(a, b);
    }
}

fn small_generator() -> Generator {
    Generator::new(GeneratorConfig {
        image_channels: 3,
        num_ntb: 1,
        rb_per_ntb: 2,
        channels: 8,
        ca_bottleneck: 2,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

#[test]
fn generator_keeps_shape_for_awkward_sizes() {
    let gen = small_generator();
    let mut params = gen
        .init_params::<f64, _>(&mut ChaCha8Rng::seed_from_u64(5))
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (_, t) in params.iter_mut() {
        if t.data().iter().all(|v| *v == 0.0) {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
    for (h, w) in [(1, 1), (3, 5), (7, 2), (13, 9), (16, 16)] {
        let y = random_image(3, h, w, (h * w) as u64);
        let m = NoiseLevelMap::constant(h, w, 0.05);
        let out = gen
            .forward(&params, &y, &m, Mode::Train { seed: 1 })
            .unwrap();
        assert!(out.same_shape(&y));
        assert!(out.data().iter().all(|v| v.is_finite()));
        let again = gen
            .forward(&params, &y, &m, Mode::Train { seed: 1 })
            .unwrap();
        assert_eq!(out, again);
        let other = gen
            .forward(&params, &y, &m, Mode::Train { seed: 2 })
            .unwrap();
        assert_ne!(out, other, "randomization ignored at {h}x{w}");
    }
}

#[test]
fn denoise_is_pure() {
    let gen = small_generator();
    let mut params = gen
        .init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(7))
        .unwrap();
    params.get_mut("fuse.conv1.weight").unwrap().data_mut()[0] = 0.3;
    let y = random_image(3, 12, 12, 8).cast::<f32>();
    let snapshot = params.clone();
    let a = denoise(&gen, &params, &y).unwrap();
    let b = denoise(&gen, &params, &y).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, y);
    assert_eq!(params, snapshot);
}
