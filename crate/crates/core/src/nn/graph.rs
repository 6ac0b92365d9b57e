//! Reverse-mode differentiation over single-sample `[c, h, w]` feature maps.
//!
//! A [`Graph`] records each operation together with its output value while
//! the network is evaluated; [`Graph::backward`] then walks the record in
//! reverse and accumulates gradients. Parameters are borrowed from a
//! [`ParameterSet`] and never copied into the graph.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::params::ParameterSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(usize),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        kernel: usize,
        stride: usize,
        pad: usize,
        // im2col buffer; empty for pointwise convolutions
        cols: Vec<T>,
    },
    PRelu {
        x: Var,
        slope: Var,
    },
    LeakyRelu {
        x: Var,
        alpha: T,
    },
    Sigmoid {
        x: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    ScaleSpatial {
        x: Var,
        heat: Var,
    },
    ScaleChannels {
        x: Var,
        heat: Var,
    },
    ChannelMean {
        x: Var,
    },
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat(Var, Var),
    GlobalAvgPool {
        x: Var,
    },
    AvgPool2 {
        x: Var,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    AddPlane {
        x: Var,
        plane: Var,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Option<Tensor<T>>,
    needs_grad: bool,
}

pub struct Graph<'p, T> {
    params: &'p ParameterSet<T>,
    train_params: bool,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<usize, Var>,
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParameterSet<T>) -> Self {
        Self {
            params,
            train_params: true,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    /// Graph whose parameters are treated as constants (no parameter
    /// gradients are produced).
    pub fn frozen(params: &'p ParameterSet<T>) -> Self {
        Self {
            train_params: false,
            ..Self::new(params)
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].op {
            Op::Param(i) => self.params.by_index(*i),
            _ => self.nodes[v.0].value.as_ref().expect("node value"),
        }
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Input, t, false)
    }

    /// Input whose gradient is wanted after `backward`.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Input, t, true)
    }

    pub fn param(&mut self, path: &str) -> Result<Var> {
        let idx = self
            .params
            .index_of(path)
            .ok_or_else(|| Error::MissingParameter(path.to_string()))?;
        if let Some(v) = self.param_vars.get(&idx) {
            return Ok(*v);
        }
        self.nodes.push(Node {
            op: Op::Param(idx),
            value: None,
            needs_grad: self.train_params,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(idx, v);
        Ok(v)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (c, h, wd) = self.value(x).chw();
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 4, "conv weight must be [out, in, k, k]");
        assert_eq!(ws[1], c, "conv input channels mismatch");
        let (co, k) = (ws[0], ws[2]);
        assert!(
            h + 2 * pad >= k && wd + 2 * pad >= k,
            "input smaller than kernel"
        );
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let pointwise = k == 1 && stride == 1 && pad == 0;
        let cols = if pointwise {
            Vec::new()
        } else {
            im2col(self.value(x).data(), c, h, wd, k, stride, pad, oh, ow)
        };
        let rows = c * k * k;
        let npix = oh * ow;
        let mut out = vec![T::zero(); co * npix];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for (o, chunk) in out.chunks_mut(npix).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bias[o]);
            }
        }
        {
            let src = if pointwise {
                self.value(x).data()
            } else {
                &cols
            };
            T::gemm(
                co,
                rows,
                npix,
                T::one(),
                self.value(w).data(),
                (rows as isize, 1),
                src,
                (npix as isize, 1),
                T::one(),
                &mut out,
                (npix as isize, 1),
            );
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(
            Op::Conv2d {
                x,
                w,
                b,
                kernel: k,
                stride,
                pad,
                cols,
            },
            Tensor::from_vec(&[co, oh, ow], out),
            ng,
        )
    }

    pub fn prelu(&mut self, x: Var, slope: Var) -> Var {
        let xv = self.value(x);
        let (c, h, w) = xv.chw();
        let a = self.value(slope).data();
        assert_eq!(a.len(), c, "one PReLU slope per channel");
        let mut out = xv.data().to_vec();
        for (ch, plane) in out.chunks_mut(h * w).enumerate() {
            for v in plane {
                if *v <= T::zero() {
                    *v = a[ch] * *v;
                }
            }
        }
        let ng = self.ng(x) || self.ng(slope);
        self.push(
            Op::PRelu { x, slope },
            Tensor::from_vec(&[c, h, w], out),
            ng,
        )
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: T) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { alpha * v });
        let ng = self.ng(x);
        self.push(Op::LeakyRelu { x, alpha }, out, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(Op::Sigmoid { x }, out, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Add(a, b), out, ng)
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape());
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&p, &q)| p * q)
            .collect();
        let out = Tensor::from_vec(av.shape(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Mul(a, b), out, ng)
    }

    /// `x[c, i, j] * heat[0, i, j]`
    pub fn scale_spatial(&mut self, x: Var, heat: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert_eq!(self.value(heat).shape(), &[1, h, w]);
        let hv = self.value(heat).data();
        let mut out = self.value(x).data().to_vec();
        for plane in out.chunks_mut(h * w) {
            for (v, &s) in plane.iter_mut().zip(hv) {
                *v = *v * s;
            }
        }
        let ng = self.ng(x) || self.ng(heat);
        self.push(
            Op::ScaleSpatial { x, heat },
            Tensor::from_vec(&[c, h, w], out),
            ng,
        )
    }

    /// `x[c, i, j] * heat[c, 0, 0]`
    pub fn scale_channels(&mut self, x: Var, heat: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert_eq!(self.value(heat).shape(), &[c, 1, 1]);
        let hv = self.value(heat).data();
        let mut out = self.value(x).data().to_vec();
        for (plane, &s) in out.chunks_mut(h * w).zip(hv) {
            plane.iter_mut().for_each(|v| *v = *v * s);
        }
        let ng = self.ng(x) || self.ng(heat);
        self.push(
            Op::ScaleChannels { x, heat },
            Tensor::from_vec(&[c, h, w], out),
            ng,
        )
    }

    pub fn channel_mean(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let mut out = vec![T::zero(); h * w];
        for plane in self.value(x).data().chunks(h * w) {
            for (o, &v) in out.iter_mut().zip(plane) {
                *o = *o + v;
            }
        }
        let inv = T::one() / T::lit(c as f64);
        out.iter_mut().for_each(|v| *v = *v * inv);
        let ng = self.ng(x);
        self.push(Op::ChannelMean { x }, Tensor::from_vec(&[1, h, w], out), ng)
    }

    pub fn channel_max(&mut self, x: Var) -> Var {
        let (_, h, w) = self.value(x).chw();
        let data = self.value(x).data();
        let mut out = data[..h * w].to_vec();
        let mut argmax = vec![0usize; h * w];
        for (ch, plane) in data.chunks(h * w).enumerate().skip(1) {
            for (p, &v) in plane.iter().enumerate() {
                if v > out[p] {
                    out[p] = v;
                    argmax[p] = ch;
                }
            }
        }
        let ng = self.ng(x);
        self.push(
            Op::ChannelMax { x, argmax },
            Tensor::from_vec(&[1, h, w], out),
            ng,
        )
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (ca, h, w) = self.value(a).chw();
        let (cb, hb, wb) = self.value(b).chw();
        assert_eq!((h, w), (hb, wb), "concat requires equal spatial size");
        let mut out = self.value(a).data().to_vec();
        out.extend_from_slice(self.value(b).data());
        let ng = self.ng(a) || self.ng(b);
        self.push(
            Op::Concat(a, b),
            Tensor::from_vec(&[ca + cb, h, w], out),
            ng,
        )
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let inv = T::one() / T::lit((h * w) as f64);
        let out = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let ng = self.ng(x);
        self.push(
            Op::GlobalAvgPool { x },
            Tensor::from_vec(&[c, 1, 1], out),
            ng,
        )
    }

    /// 2×2 average pooling, stride 2; odd borders average the valid cells.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let src = self.value(x).data();
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    let mut n = 0;
                    for y in 2 * oy..(2 * oy + 2).min(h) {
                        for x in 2 * ox..(2 * ox + 2).min(w) {
                            acc = acc + src[(ch * h + y) * w + x];
                            n += 1;
                        }
                    }
                    out[(ch * oh + oy) * ow + ox] = acc / T::lit(n as f64);
                }
            }
        }
        let ng = self.ng(x);
        self.push(Op::AvgPool2 { x }, Tensor::from_vec(&[c, oh, ow], out), ng)
    }

    /// Nearest-neighbour upsampling by `factor`, cropped to `(out_h, out_w)`.
    pub fn upsample(&mut self, x: Var, factor: usize, out_h: usize, out_w: usize) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert!(
            (out_h - 1) / factor < h && (out_w - 1) / factor < w,
            "upsample target too large"
        );
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            for y in 0..out_h {
                let row = &src[(ch * h + y / factor) * w..];
                out.extend((0..out_w).map(|x| row[x / factor]));
            }
        }
        let ng = self.ng(x);
        self.push(
            Op::Upsample { x, factor },
            Tensor::from_vec(&[c, out_h, out_w], out),
            ng,
        )
    }

    /// `x[c, i, j] + plane[0, i, j]`
    pub fn add_plane(&mut self, x: Var, plane: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert_eq!(self.value(plane).shape(), &[1, h, w]);
        let pv = self.value(plane).data();
        let mut out = self.value(x).data().to_vec();
        for chunk in out.chunks_mut(h * w) {
            for (v, &p) in chunk.iter_mut().zip(pv) {
                *v = *v + p;
            }
        }
        let ng = self.ng(x) || self.ng(plane);
        self.push(
            Op::AddPlane { x, plane },
            Tensor::from_vec(&[c, h, w], out),
            ng,
        )
    }

    /// Backpropagates the given output seeds through the recorded graph.
    pub fn backward(&self, seeds: &[(Var, &Tensor<T>)]) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed shape mismatch");
            accumulate(&mut grads, *v, (*g).clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    /// Collects parameter gradients into a set shaped like the borrowed
    /// parameters. Parameters not reached by the graph get zeros.
    pub fn param_grads(&self, grads: &Gradients<T>) -> ParameterSet<T> {
        let mut out = self.params.zeros_like();
        for (&idx, &v) in &self.param_vars {
            if let Some(g) = grads.get(v) {
                out.by_index_mut(idx).add_assign(g);
            }
        }
        out
    }

    fn backward_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out_value = self.nodes[idx].value.as_ref();
        match &self.nodes[idx].op {
            Op::Input | Op::Param(_) => {}
            Op::Conv2d {
                x,
                w,
                b,
                kernel,
                stride,
                pad,
                cols,
            } => {
                let (c, h, wd) = self.value(*x).chw();
                let (co, oh, ow) = g.chw();
                let npix = oh * ow;
                let k = *kernel;
                let rows = c * k * k;
                let pointwise = cols.is_empty();
                if self.ng(*w) {
                    let src = if pointwise {
                        self.value(*x).data()
                    } else {
                        cols
                    };
                    let mut dw = vec![T::zero(); co * rows];
                    // dW = g · colsᵀ
                    T::gemm(
                        co,
                        npix,
                        rows,
                        T::one(),
                        g.data(),
                        (npix as isize, 1),
                        src,
                        (1, npix as isize),
                        T::zero(),
                        &mut dw,
                        (rows as isize, 1),
                    );
                    accumulate(grads, *w, Tensor::from_vec(&[co, c, k, k], dw));
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        let db = g
                            .data()
                            .chunks(npix)
                            .map(|p| p.iter().copied().sum())
                            .collect();
                        accumulate(grads, *b, Tensor::from_vec(&[co], db));
                    }
                }
                if self.ng(*x) {
                    // dcols = Wᵀ · g
                    let mut dcols = vec![T::zero(); rows * npix];
                    T::gemm(
                        rows,
                        co,
                        npix,
                        T::one(),
                        self.value(*w).data(),
                        (1, rows as isize),
                        g.data(),
                        (npix as isize, 1),
                        T::zero(),
                        &mut dcols,
                        (npix as isize, 1),
                    );
                    let dx = if pointwise {
                        dcols
                    } else {
                        col2im(&dcols, c, h, wd, k, *stride, *pad, oh, ow)
                    };
                    accumulate(grads, *x, Tensor::from_vec(&[c, h, wd], dx));
                }
            }
            Op::PRelu { x, slope } => {
                let xv = self.value(*x);
                let (c, h, w) = xv.chw();
                let a = self.value(*slope).data();
                if self.ng(*x) {
                    let mut dx = g.data().to_vec();
                    for (ch, (dplane, xplane)) in dx
                        .chunks_mut(h * w)
                        .zip(xv.data().chunks(h * w))
                        .enumerate()
                    {
                        for (d, &xi) in dplane.iter_mut().zip(xplane) {
                            if xi <= T::zero() {
                                *d = *d * a[ch];
                            }
                        }
                    }
                    accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
                }
                if self.ng(*slope) {
                    let da = g
                        .data()
                        .chunks(h * w)
                        .zip(xv.data().chunks(h * w))
                        .map(|(gp, xp)| {
                            gp.iter()
                                .zip(xp)
                                .filter(|(_, &xi)| xi <= T::zero())
                                .map(|(&gi, &xi)| gi * xi)
                                .sum()
                        })
                        .collect();
                    accumulate(grads, *slope, Tensor::from_vec(&[c], da));
                }
            }
            Op::LeakyRelu { x, alpha } => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gi, &xi)| if xi > T::zero() { gi } else { gi * *alpha })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(xv.shape(), data));
            }
            Op::Sigmoid { x } => {
                let y = out_value.expect("sigmoid output");
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gi, &yi)| gi * yi * (T::one() - yi))
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(y.shape(), data));
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.ng(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let d = zip_mul(g, self.value(*b));
                    accumulate(grads, *a, d);
                }
                if self.ng(*b) {
                    let d = zip_mul(g, self.value(*a));
                    accumulate(grads, *b, d);
                }
            }
            Op::ScaleSpatial { x, heat } => {
                let (c, h, w) = g.chw();
                let hv = self.value(*heat).data();
                if self.ng(*x) {
                    let mut dx = g.data().to_vec();
                    for plane in dx.chunks_mut(h * w) {
                        for (d, &s) in plane.iter_mut().zip(hv) {
                            *d = *d * s;
                        }
                    }
                    accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
                }
                if self.ng(*heat) {
                    let mut dh = vec![T::zero(); h * w];
                    for (gp, xp) in g
                        .data()
                        .chunks(h * w)
                        .zip(self.value(*x).data().chunks(h * w))
                    {
                        for ((d, &gi), &xi) in dh.iter_mut().zip(gp).zip(xp) {
                            *d = *d + gi * xi;
                        }
                    }
                    accumulate(grads, *heat, Tensor::from_vec(&[1, h, w], dh));
                }
            }
            Op::ScaleChannels { x, heat } => {
                let (c, h, w) = g.chw();
                let hv = self.value(*heat).data();
                if self.ng(*x) {
                    let mut dx = g.data().to_vec();
                    for (plane, &s) in dx.chunks_mut(h * w).zip(hv) {
                        plane.iter_mut().for_each(|d| *d = *d * s);
                    }
                    accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
                }
                if self.ng(*heat) {
                    let dh = g
                        .data()
                        .chunks(h * w)
                        .zip(self.value(*x).data().chunks(h * w))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum())
                        .collect();
                    accumulate(grads, *heat, Tensor::from_vec(&[c, 1, 1], dh));
                }
            }
            Op::ChannelMean { x } => {
                let (c, h, w) = self.value(*x).chw();
                let inv = T::one() / T::lit(c as f64);
                let plane: Vec<T> = g.data().iter().map(|&v| v * inv).collect();
                let dx = (0..c).flat_map(|_| plane.iter().copied()).collect();
                accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
            }
            Op::ChannelMax { x, argmax } => {
                let (c, h, w) = self.value(*x).chw();
                let mut dx = vec![T::zero(); c * h * w];
                for (p, (&ch, &gi)) in argmax.iter().zip(g.data()).enumerate() {
                    dx[ch * h * w + p] = gi;
                }
                accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
            }
            Op::Concat(a, b) => {
                let split = self.value(*a).len();
                if self.ng(*a) {
                    let d = Tensor::from_vec(self.value(*a).shape(), g.data()[..split].to_vec());
                    accumulate(grads, *a, d);
                }
                if self.ng(*b) {
                    let d = Tensor::from_vec(self.value(*b).shape(), g.data()[split..].to_vec());
                    accumulate(grads, *b, d);
                }
            }
            Op::GlobalAvgPool { x } => {
                let (c, h, w) = self.value(*x).chw();
                let inv = T::one() / T::lit((h * w) as f64);
                let dx = g
                    .data()
                    .iter()
                    .flat_map(|&gi| std::iter::repeat_n(gi * inv, h * w))
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
            }
            Op::AvgPool2 { x } => {
                let (c, h, w) = self.value(*x).chw();
                let (_, oh, ow) = g.chw();
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let ys = 2 * oy..(2 * oy + 2).min(h);
                            let xs = 2 * ox..(2 * ox + 2).min(w);
                            let n = T::lit((ys.len() * xs.len()) as f64);
                            let share = g.data()[(ch * oh + oy) * ow + ox] / n;
                            for y in ys {
                                for x in xs.clone() {
                                    dx[(ch * h + y) * w + x] = share;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
            }
            Op::Upsample { x, factor } => {
                let (c, h, w) = self.value(*x).chw();
                let (_, oh, ow) = g.chw();
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..oh {
                        for xo in 0..ow {
                            let d = &mut dx[(ch * h + y / factor) * w + xo / factor];
                            *d = *d + g.data()[(ch * oh + y) * ow + xo];
                        }
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(&[c, h, w], dx));
            }
            Op::AddPlane { x, plane } => {
                if self.ng(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.ng(*plane) {
                    let (_, h, w) = g.chw();
                    let mut dp = vec![T::zero(); h * w];
                    for gp in g.data().chunks(h * w) {
                        for (d, &gi) in dp.iter_mut().zip(gp) {
                            *d = *d + gi;
                        }
                    }
                    accumulate(grads, *plane, Tensor::from_vec(&[1, h, w], dp));
                }
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn zip_mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| p * q)
        .collect();
    Tensor::from_vec(a.shape(), data)
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let npix = oh * ow;
    let mut cols = vec![T::zero(); c * k * k * npix];
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * npix;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[(ch * h + iy as usize) * w..][..w];
                    let dst = &mut cols[row + oy * ow..][..ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let npix = oh * ow;
    let mut x = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * npix;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut x[(ch * h + iy as usize) * w..][..w];
                    let src = &cols[row + oy * ow..][..ow];
                    for (ox, &s) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + s;
                        }
                    }
                }
            }
        }
    }
    x
}
