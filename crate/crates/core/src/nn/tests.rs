use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::Tensor;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

type Build = dyn Fn(&mut Graph<'_, f64>, Var) -> Var;

/// Loss `Σ out ⊙ probe`; returns value, input gradient and parameter gradients.
fn eval(
    params: &ParameterSet<f64>,
    x: &Tensor<f64>,
    probe_seed: u64,
    build: &Build,
) -> (f64, Tensor<f64>, ParameterSet<f64>) {
    let mut g = Graph::new(params);
    let xv = g.input(x.clone());
    let out = build(&mut g, xv);
    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let probe = rand_tensor(g.value(out).shape(), &mut rng);
    let loss = g
        .value(out)
        .data()
        .iter()
        .zip(probe.data())
        .map(|(a, b)| a * b)
        .sum();
    let grads = g.backward(&[(out, &probe)]);
    let gx = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));
    (loss, gx, g.param_grads(&grads))
}

fn check(params: ParameterSet<f64>, x: Tensor<f64>, build: &Build) {
    let eps = 1e-6;
    let (_, gx, gp) = eval(&params, &x, 99, build);
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += eps;
        let mut xm = x.clone();
        xm.data_mut()[i] -= eps;
        let num = (eval(&params, &xp, 99, build).0 - eval(&params, &xm, 99, build).0) / (2.0 * eps);
        let ana = gx.data()[i];
        assert!(
            rel(ana, num) < 1e-5,
            "input[{i}]: analytic {ana} numeric {num}"
        );
    }
    for (pi, (path, t)) in params.iter().enumerate() {
        for j in 0..t.len() {
            let mut pp = params.clone();
            pp.by_index_mut(pi).data_mut()[j] += eps;
            let mut pm = params.clone();
            pm.by_index_mut(pi).data_mut()[j] -= eps;
            let num = (eval(&pp, &x, 99, build).0 - eval(&pm, &x, 99, build).0) / (2.0 * eps);
            let ana = gp.by_index(pi).data()[j];
            assert!(
                rel(ana, num) < 1e-5,
                "{path}[{j}]: analytic {ana} numeric {num}"
            );
        }
    }
}

fn conv_set(cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> ParameterSet<f64> {
    let mut p = ParameterSet::new();
    p.insert("c.weight", rand_tensor(&[cout, cin, k, k], rng))
        .unwrap();
    p.insert("c.bias", rand_tensor(&[cout], rng)).unwrap();
    p
}

#[test]
fn conv3x3_stride1_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = conv_set(2, 3, 3, &mut rng);
    let x = rand_tensor(&[2, 5, 4], &mut rng);
    check(p, x, &|g, x| conv(g, "c", x, 1, 1).unwrap());
}

#[test]
fn conv4x4_stride2_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = conv_set(2, 2, 4, &mut rng);
    let x = rand_tensor(&[2, 7, 6], &mut rng);
    check(p, x, &|g, x| conv(g, "c", x, 2, 1).unwrap());
}

#[test]
fn pointwise_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = conv_set(3, 2, 1, &mut rng);
    let x = rand_tensor(&[3, 3, 3], &mut rng);
    check(p, x, &|g, x| conv(g, "c", x, 1, 0).unwrap());
}

#[test]
fn conv_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = conv_set(2, 2, 3, &mut rng);
    let x = rand_tensor(&[2, 4, 5], &mut rng);
    let mut g = Graph::new(&p);
    let xv = g.constant(x.clone());
    let y = conv(&mut g, "c", xv, 1, 1).unwrap();
    let (w, b) = (
        p.get("c.weight").unwrap().data(),
        p.get("c.bias").unwrap().data(),
    );
    let out = g.value(y);
    for o in 0..2 {
        for i in 0..4isize {
            for j in 0..5isize {
                let mut acc = b[o];
                for c in 0..2 {
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let (yy, xx) = (i + ky - 1, j + kx - 1);
                            if (0..4).contains(&yy) && (0..5).contains(&xx) {
                                acc += w[((o * 2 + c) * 3 + ky as usize) * 3 + kx as usize]
                                    * x.data()[(c * 4 + yy as usize) * 5 + xx as usize];
                            }
                        }
                    }
                }
                let got = out.data()[(o * 4 + i as usize) * 5 + j as usize];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn elementwise_and_pooling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = ParameterSet::new();
    p.insert("a.slope", rand_tensor(&[3], &mut rng)).unwrap();
    let x = rand_tensor(&[3, 5, 5], &mut rng);
    check(p, x, &|g, x| {
        let a = prelu(g, "a", x).unwrap();
        let s = g.sigmoid(a);
        let l = g.leaky_relu(x, 0.2);
        let m = g.mul(s, l);
        let mean = g.channel_mean(m);
        let max = g.channel_max(x);
        let both = g.concat(mean, max);
        let heat = g.channel_mean(both);
        let sp = g.scale_spatial(m, heat);
        let gap = g.global_avg_pool(sp);
        let ch = g.scale_channels(sp, gap);
        let pooled = g.avg_pool2(ch);
        let up = g.upsample(pooled, 2, 5, 5);
        let plus = g.add_plane(up, heat);
        g.add(plus, x)
    });
}

#[test]
fn frozen_graph_has_no_param_grads_but_input_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = conv_set(1, 1, 3, &mut rng);
    let mut g = Graph::frozen(&p);
    let x = g.input(rand_tensor(&[1, 4, 4], &mut rng));
    let y = conv(&mut g, "c", x, 1, 1).unwrap();
    let seed = Tensor::full(&[1, 4, 4], 1.0);
    let grads = g.backward(&[(y, &seed)]);
    assert!(grads.get(x).is_some());
    assert_eq!(g.param_grads(&grads).sq_norm(), 0.0);
}

#[test]
fn odd_sized_pool_then_upsample_restores_size() {
    let p = ParameterSet::<f32>::new();
    let mut g = Graph::new(&p);
    let x = g.constant(Tensor::full(&[2, 17, 9], 1.0));
    let a = g.avg_pool2(x);
    let b = g.avg_pool2(a);
    assert_eq!(g.value(b).shape(), &[2, 5, 3]);
    let u = g.upsample(b, 4, 17, 9);
    assert_eq!(g.value(u).shape(), &[2, 17, 9]);
    assert!(g.value(u).data().iter().all(|&v| v == 1.0));
}
