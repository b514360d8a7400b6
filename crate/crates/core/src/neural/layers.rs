//! Layers with cached forward state and exact backward passes. Every
//! `backward` must follow the `forward` whose activations it differentiates.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::tensor::{matmul, Param, Real, Tensor4};
use crate::error::{Error, Result};

fn he_init<T: Real>(len: usize, fan_in: usize, gain: f64, rng: &mut impl Rng) -> Vec<T> {
    let normal = Normal::new(0.0, gain * (2.0 / fan_in as f64).sqrt()).expect("finite std");
    (0..len).map(|_| T::of(normal.sample(rng))).collect()
}

/// `same`-padded output size and leading pad for one axis.
#[inline]
fn same_pad(input: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(input);
    (out, total / 2)
}

/// 2-D cross-correlation, stride `s`, `same` padding. Weights are laid out
/// `[kh][kw][cin][cout]`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor4<T>>,
}

struct ConvGeom {
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    pt: usize,
    pl: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new(kh: usize, kw: usize, cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let k = kh * kw * cin;
        Self {
            kh,
            kw,
            cin,
            cout,
            stride,
            weight: Param::new(he_init(k * cout, k, 1.0, rng)),
            bias: Param::new(vec![T::zero(); cout]),
            input: None,
        }
    }

    fn k(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn geom(&self, h: usize, w: usize) -> ConvGeom {
        let (ho, pt) = same_pad(h, self.kh, self.stride);
        let (wo, pl) = same_pad(w, self.kw, self.stride);
        ConvGeom { h, w, ho, wo, pt, pl }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let g = self.geom(h, w);
        (g.ho, g.wo)
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    fn im2col(&self, x: &[T], g: &ConvGeom, col: &mut [T]) {
        let (cin, k) = (self.cin, self.k());
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = &mut col[(oy * g.wo + ox) * k..(oy * g.wo + ox + 1) * k];
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - g.pt as isize;
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - g.pl as isize;
                        let dst = &mut row[(ky * self.kw + kx) * cin..(ky * self.kw + kx + 1) * cin];
                        if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                        } else {
                            let src = (iy as usize * g.w + ix as usize) * cin;
                            dst.copy_from_slice(&x[src..src + cin]);
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], g: &ConvGeom, dx: &mut [T]) {
        let (cin, k) = (self.cin, self.k());
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = &col[(oy * g.wo + ox) * k..(oy * g.wo + ox + 1) * k];
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - g.pt as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - g.pl as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = (iy as usize * g.w + ix as usize) * cin;
                        let src = &row[(ky * self.kw + kx) * cin..(ky * self.kw + kx + 1) * cin];
                        for (d, s) in dx[dst..dst + cin].iter_mut().zip(src) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        if x.c != self.cin {
            return Err(Error::ShapeMismatch(format!("conv expects {} input channels, got {}", self.cin, x.c)));
        }
        let g = self.geom(x.h, x.w);
        let (k, m, cout) = (self.k(), g.ho * g.wo, self.cout);
        let mut out = Tensor4::zeros(x.n, g.ho, g.wo, cout);
        let this = &*self;
        out.data.par_chunks_mut(m * cout).enumerate().for_each(|(i, o)| {
            for px in o.chunks_exact_mut(cout) {
                px.copy_from_slice(&this.bias.value);
            }
            if this.is_pointwise() {
                matmul(m, k, cout, x.sample(i), false, &this.weight.value, false, o, true);
            } else {
                let mut col = vec![T::zero(); m * k];
                this.im2col(x.sample(i), &g, &mut col);
                matmul(m, k, cout, &col, false, &this.weight.value, false, o, true);
            }
        });
        self.input = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        self.backward_inner(dy, true).expect("input gradient requested")
    }

    /// Accumulates weight and bias gradients without the input gradient.
    pub fn backward_params(&mut self, dy: &Tensor4<T>) {
        self.backward_inner(dy, false);
    }

    fn backward_inner(&mut self, dy: &Tensor4<T>, want_dx: bool) -> Option<Tensor4<T>> {
        let x = self.input.take().expect("conv backward without forward");
        let g = self.geom(x.h, x.w);
        let (k, m, cout) = (self.k(), g.ho * g.wo, self.cout);
        let this = &*self;
        let parts: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..x.n)
            .into_par_iter()
            .map(|i| {
                let dys = dy.sample(i);
                let mut dw = vec![T::zero(); k * cout];
                let mut db = vec![T::zero(); cout];
                for px in dys.chunks_exact(cout) {
                    for (b, v) in db.iter_mut().zip(px) {
                        *b += *v;
                    }
                }
                let mut dx = Vec::new();
                if this.is_pointwise() {
                    matmul(k, m, cout, x.sample(i), true, dys, false, &mut dw, false);
                    if want_dx {
                        dx = vec![T::zero(); x.sample_len()];
                        matmul(m, cout, k, dys, false, &this.weight.value, true, &mut dx, false);
                    }
                } else {
                    let mut col = vec![T::zero(); m * k];
                    this.im2col(x.sample(i), &g, &mut col);
                    matmul(k, m, cout, &col, true, dys, false, &mut dw, false);
                    if want_dx {
                        dx = vec![T::zero(); x.sample_len()];
                        matmul(m, cout, k, dys, false, &this.weight.value, true, &mut col, false);
                        this.col2im(&col, &g, &mut dx);
                    }
                }
                (dx, dw, db)
            })
            .collect();
        let mut dx = Vec::with_capacity(if want_dx { x.data.len() } else { 0 });
        // fixed sample order keeps the sums reproducible
        for (dxs, dw, db) in parts {
            dx.extend(dxs);
            for (a, b) in self.weight.grad.iter_mut().zip(&dw) {
                *a += *b;
            }
            for (a, b) in self.bias.grad.iter_mut().zip(&db) {
                *a += *b;
            }
        }
        want_dx.then(|| x.with_data(dx))
    }
}

/// Per-channel batch normalization; running statistics follow
/// `r = momentum * r + (1 - momentum) * batch`.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Vec<T>, Vec<T>, (usize, usize, usize, usize))>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Param::new(vec![T::one(); c]),
            beta: Param::new(vec![T::zero(); c]),
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
            momentum: 0.9,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, train: bool) -> Result<Tensor4<T>> {
        let c = self.gamma.value.len();
        if x.c != c {
            return Err(Error::ShapeMismatch(format!("batchnorm over {c} channels got {}", x.c)));
        }
        let count = (x.n * x.h * x.w) as f64;
        let (mean, var): (Vec<f64>, Vec<f64>) = if train {
            let mut s = vec![0f64; c];
            for px in x.data.chunks_exact(c) {
                for (a, v) in s.iter_mut().zip(px) {
                    *a += v.f64();
                }
            }
            let mean: Vec<f64> = s.iter().map(|v| v / count).collect();
            let mut q = vec![0f64; c];
            for px in x.data.chunks_exact(c) {
                for ((a, v), m) in q.iter_mut().zip(px).zip(&mean) {
                    *a += (v.f64() - m).powi(2);
                }
            }
            let var: Vec<f64> = q.iter().map(|v| v / count).collect();
            let mo = self.momentum;
            for j in 0..c {
                self.running_mean[j] = T::of(mo * self.running_mean[j].f64() + (1.0 - mo) * mean[j]);
                self.running_var[j] = T::of(mo * self.running_var[j].f64() + (1.0 - mo) * var[j]);
            }
            (mean, var)
        } else {
            (self.running_mean.iter().map(|v| v.f64()).collect(), self.running_var.iter().map(|v| v.f64()).collect())
        };
        let invstd: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + self.eps).sqrt())).collect();
        let mean: Vec<T> = mean.into_iter().map(T::of).collect();
        let mut xhat = Vec::with_capacity(x.data.len());
        let mut out = Vec::with_capacity(x.data.len());
        for px in x.data.chunks_exact(c) {
            for j in 0..c {
                let h = (px[j] - mean[j]) * invstd[j];
                xhat.push(h);
                out.push(h * self.gamma.value[j] + self.beta.value[j]);
            }
        }
        self.cache = if train { Some((xhat, invstd, x.shape())) } else { None };
        Ok(Tensor4 { n: x.n, h: x.h, w: x.w, c, data: out })
    }

    pub fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let (xhat, invstd, (n, h, w, c)) = self.cache.take().expect("batchnorm backward needs a training forward");
        let count = T::of((n * h * w) as f64);
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for (g, xh) in dy.data.chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for j in 0..c {
                sum_dy[j] += g[j];
                sum_dy_xhat[j] += g[j] * xh[j];
            }
        }
        for j in 0..c {
            self.beta.grad[j] += sum_dy[j];
            self.gamma.grad[j] += sum_dy_xhat[j];
        }
        let mut dx = Vec::with_capacity(dy.data.len());
        for (g, xh) in dy.data.chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for j in 0..c {
                let k = self.gamma.value[j] * invstd[j] / count;
                dx.push(k * (count * g[j] - sum_dy[j] - xh[j] * sum_dy_xhat[j]));
            }
        }
        Tensor4 { n, h, w, c, data: dx }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward<T: Real>(&mut self, x: &Tensor4<T>) -> Tensor4<T> {
        self.mask = x.data.iter().map(|v| *v > T::zero()).collect();
        let data = x.data.iter().map(|v| if *v > T::zero() { *v } else { T::zero() }).collect();
        x.with_data(data)
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let data = dy.data.iter().zip(&self.mask).map(|(g, m)| if *m { *g } else { T::zero() }).collect();
        dy.with_data(data)
    }
}

/// Max pooling with `same` padding; padded cells never win.
#[derive(Debug, Clone)]
pub struct MaxPool {
    pub size: usize,
    pub stride: usize,
    argmax: Vec<usize>,
    in_shape: (usize, usize, usize, usize),
}

impl MaxPool {
    pub fn new(size: usize, stride: usize) -> Self {
        Self { size, stride, argmax: Vec::new(), in_shape: (0, 0, 0, 0) }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (same_pad(h, self.size, self.stride).0, same_pad(w, self.size, self.stride).0)
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor4<T>) -> Tensor4<T> {
        let (ho, pt) = same_pad(x.h, self.size, self.stride);
        let (wo, pl) = same_pad(x.w, self.size, self.stride);
        let mut out = Tensor4::zeros(x.n, ho, wo, x.c);
        self.argmax = vec![0; out.data.len()];
        for i in 0..x.n {
            for oy in 0..ho {
                for ox in 0..wo {
                    for ch in 0..x.c {
                        let mut best = T::neg_infinity();
                        let mut arg = 0;
                        for ky in 0..self.size {
                            let iy = (oy * self.stride + ky) as isize - pt as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            for kx in 0..self.size {
                                let ix = (ox * self.stride + kx) as isize - pl as isize;
                                if ix < 0 || ix >= x.w as isize {
                                    continue;
                                }
                                let idx = ((i * x.h + iy as usize) * x.w + ix as usize) * x.c + ch;
                                if x.data[idx] > best {
                                    best = x.data[idx];
                                    arg = idx;
                                }
                            }
                        }
                        let o = ((i * ho + oy) * wo + ox) * x.c + ch;
                        out.data[o] = best;
                        self.argmax[o] = arg;
                    }
                }
            }
        }
        self.in_shape = x.shape();
        out
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let (n, h, w, c) = self.in_shape;
        let mut dx = Tensor4::zeros(n, h, w, c);
        for (g, &a) in dy.data.iter().zip(&self.argmax) {
            dx.data[a] += *g;
        }
        dx
    }
}

/// Global average pooling, `n x h x w x c` to `n x 1 x 1 x c`.
#[derive(Debug, Clone, Default)]
pub struct Gap {
    in_shape: (usize, usize, usize, usize),
}

impl Gap {
    pub fn forward<T: Real>(&mut self, x: &Tensor4<T>) -> Tensor4<T> {
        self.in_shape = x.shape();
        let inv = T::of(1.0 / (x.h * x.w) as f64);
        let mut out = Tensor4::zeros(x.n, 1, 1, x.c);
        for i in 0..x.n {
            let o = &mut out.data[i * x.c..(i + 1) * x.c];
            for px in x.sample(i).chunks_exact(x.c) {
                for (a, v) in o.iter_mut().zip(px) {
                    *a += *v;
                }
            }
            o.iter_mut().for_each(|v| *v *= inv);
        }
        out
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let (n, h, w, c) = self.in_shape;
        let inv = T::of(1.0 / (h * w) as f64);
        let mut dx = Tensor4::zeros(n, h, w, c);
        for i in 0..n {
            let g = &dy.data[i * c..(i + 1) * c];
            for px in dx.data[i * h * w * c..(i + 1) * h * w * c].chunks_exact_mut(c) {
                for (d, v) in px.iter_mut().zip(g) {
                    *d = *v * inv;
                }
            }
        }
        dx
    }
}

/// Fully connected layer on flattened samples; weights are `[in][out]`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor4<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, gain: f64, rng: &mut impl Rng) -> Self {
        Self {
            inputs,
            outputs,
            weight: Param::new(he_init(inputs * outputs, inputs, gain, rng)),
            bias: Param::new(vec![T::zero(); outputs]),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        if x.sample_len() != self.inputs {
            return Err(Error::ShapeMismatch(format!("dense expects {} inputs, got {}", self.inputs, x.sample_len())));
        }
        let mut out = Tensor4::zeros(x.n, 1, 1, self.outputs);
        for row in out.data.chunks_exact_mut(self.outputs) {
            row.copy_from_slice(&self.bias.value);
        }
        matmul(x.n, self.inputs, self.outputs, &x.data, false, &self.weight.value, false, &mut out.data, true);
        self.input = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let x = self.input.take().expect("dense backward without forward");
        let (n, i, o) = (x.n, self.inputs, self.outputs);
        matmul(i, n, o, &x.data, true, &dy.data, false, &mut self.weight.grad, true);
        for row in dy.data.chunks_exact(o) {
            for (b, g) in self.bias.grad.iter_mut().zip(row) {
                *b += *g;
            }
        }
        let mut dx = Tensor4::zeros(x.n, x.h, x.w, x.c);
        matmul(n, o, i, &dy.data, false, &self.weight.value, true, &mut dx.data, false);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn pointwise_identity_conv() {
        let mut conv = Conv2d::<f64>::new(1, 1, 3, 3, 1, &mut rng(0));
        conv.weight.value = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let x = Tensor4::from_vec(2, 3, 4, 3, (0..72).map(|v| v as f64 * 0.5 - 7.0).collect()).unwrap();
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn ones_kernel_sums_a_neighbourhood() {
        let mut conv = Conv2d::<f64>::new(3, 3, 1, 1, 1, &mut rng(0));
        conv.weight.value = vec![1.0; 9];
        let x = Tensor4::from_vec(1, 5, 5, 1, vec![2.5; 25]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data[2 * 5 + 2], 22.5);
        // corner sees only 4 real pixels
        assert_eq!(y.data[0], 10.0);
    }

    #[test]
    fn strided_same_padding_shape() {
        let conv = Conv2d::<f32>::new(7, 7, 3, 8, 2, &mut rng(0));
        assert_eq!(conv.output_hw(224, 224), (112, 112));
        assert_eq!(MaxPool::new(3, 2).output_hw(112, 112), (56, 56));
        assert_eq!(conv.output_hw(30, 4096), (15, 2048));
    }

    #[test]
    fn gap_of_constant_map() {
        let x = Tensor4::from_vec(1, 3, 3, 2, [4.0, -1.0].repeat(9)).unwrap();
        assert_eq!(Gap::default().forward::<f64>(&x).data, vec![4.0, -1.0]);
    }

    #[test]
    fn relu_backward_masks_negative_inputs() {
        let mut r = Relu::default();
        let x = Tensor4::from_vec(1, 1, 1, 4, vec![-2.0, 3.0, -0.5, 1.0]).unwrap();
        r.forward::<f64>(&x);
        let g = r.backward(&Tensor4::from_vec(1, 1, 1, 4, vec![1.0; 4]).unwrap());
        assert_eq!(g.data, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn batchnorm_training_output_is_standardized() {
        let mut r = rng(3);
        let data: Vec<f64> = (0..4 * 5 * 5 * 3).map(|_| r.random_range(-3.0..7.0)).collect();
        let x = Tensor4::from_vec(4, 5, 5, 3, data).unwrap();
        let mut bn = BatchNorm::<f64>::new(3);
        let y = bn.forward(&x, true).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = y.data.iter().skip(ch).step_by(3).copied().collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }
}
