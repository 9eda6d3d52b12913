//! Dense and convolution layers with hand-written reverse-mode gradients.
//!
//! Every gradient path in the crate (radiance field, volume-rendering loss,
//! SAC actor/critic) routes through these kernels, and the finite-difference
//! suite in `gradcheck` is their single source of truth.

use crate::error::{Error, Result};
use crate::num::{axpy, dot, Real, Tensor};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Softplus,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline(always)]
    pub fn apply<R: Real>(self, x: R) -> R {
        match self {
            Activation::Linear => x,
            Activation::Relu => {
                if x > R::zero() {
                    x
                } else {
                    R::zero()
                }
            }
            Activation::Softplus => {
                // ln(1 + e^x), linearized for large x to avoid overflow.
                if x > R::of(20.0) {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Sigmoid => R::one() / (R::one() + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// d(act)/d(pre) given both the pre-activation and the output.
    #[inline(always)]
    pub fn derivative<R: Real>(self, pre: R, out: R) -> R {
        match self {
            Activation::Linear => R::one(),
            Activation::Relu => {
                if pre > R::zero() {
                    R::one()
                } else {
                    R::zero()
                }
            }
            Activation::Softplus => R::one() / (R::one() + (-pre).exp()),
            Activation::Sigmoid => out * (R::one() - out),
            Activation::Tanh => R::one() - out * out,
        }
    }
}

/// Fully-connected layer `y = act(W x + b)`, weight stored row-major
/// `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<R> {
    pub w: Tensor<R>,
    pub b: Tensor<R>,
    pub act: Activation,
}

impl<R: Real> Dense<R> {
    pub fn zeros(input: usize, output: usize, act: Activation) -> Self {
        Dense {
            w: Tensor::zeros(&[output, input]),
            b: Tensor::zeros(&[output]),
            act,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input: usize, output: usize, act: Activation, rng: &mut RngStream) -> Self {
        let mut layer = Dense::zeros(input, output, act);
        let limit = (6.0 / (input + output) as f64).sqrt();
        for w in layer.w.data_mut() {
            *w = R::of(rng.uniform_in(-limit, limit));
        }
        layer
    }

    pub fn input_size(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.w.shape()[0]
    }

    /// Forward over a batch of `n` rows. `pre` and `out` are resized to
    /// `n * output`.
    pub fn forward(&self, x: &[R], n: usize, pre: &mut Vec<R>, out: &mut Vec<R>) {
        let (i_sz, o_sz) = (self.input_size(), self.output_size());
        debug_assert_eq!(x.len(), n * i_sz);
        pre.clear();
        pre.reserve(n * o_sz);
        let w = self.w.data();
        let b = self.b.data();
        for row in 0..n {
            let xr = &x[row * i_sz..(row + 1) * i_sz];
            for o in 0..o_sz {
                pre.push(dot(&w[o * i_sz..(o + 1) * i_sz], xr) + b[o]);
            }
        }
        out.clear();
        out.extend(pre.iter().map(|&p| self.act.apply(p)));
    }

    /// Accumulates parameter gradients into `gw`/`gb` and writes the input
    /// gradient into `dx` (which must already be zeroed or hold a value to
    /// accumulate onto).
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[R],
        pre: &[R],
        out: &[R],
        dout: &[R],
        n: usize,
        gw: &mut Tensor<R>,
        gb: &mut Tensor<R>,
        dx: &mut [R],
    ) {
        let (i_sz, o_sz) = (self.input_size(), self.output_size());
        debug_assert_eq!(gw.shape(), self.w.shape());
        debug_assert_eq!(gb.shape(), self.b.shape());
        let w = self.w.data();
        let gw = gw.data_mut();
        let gb = gb.data_mut();
        for row in 0..n {
            let xr = &x[row * i_sz..(row + 1) * i_sz];
            let dxr = &mut dx[row * i_sz..(row + 1) * i_sz];
            for o in 0..o_sz {
                let idx = row * o_sz + o;
                let dpre = dout[idx] * self.act.derivative(pre[idx], out[idx]);
                if dpre == R::zero() {
                    continue;
                }
                gb[o] += dpre;
                axpy(dpre, xr, &mut gw[o * i_sz..(o + 1) * i_sz]);
                axpy(dpre, &w[o * i_sz..(o + 1) * i_sz], dxr);
            }
        }
    }
}

impl<R: Real> Dense<R> {
    /// Input gradient only, skipping parameter-gradient accumulation.
    pub fn input_gradient(&self, pre: &[R], out: &[R], dout: &[R], n: usize, dx: &mut [R]) {
        let (i_sz, o_sz) = (self.input_size(), self.output_size());
        let w = self.w.data();
        for row in 0..n {
            let dxr = &mut dx[row * i_sz..(row + 1) * i_sz];
            for o in 0..o_sz {
                let idx = row * o_sz + o;
                let dpre = dout[idx] * self.act.derivative(pre[idx], out[idx]);
                if dpre == R::zero() {
                    continue;
                }
                axpy(dpre, &w[o * i_sz..(o + 1) * i_sz], dxr);
            }
        }
    }
}

/// 2D convolution over CHW feature maps with relu/linear activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<R> {
    /// `[out_c, in_c * kh * kw]` row-major.
    pub w: Tensor<R>,
    pub b: Tensor<R>,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub act: Activation,
}

impl<R: Real> Conv2d<R> {
    pub fn init(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        act: Activation,
        rng: &mut RngStream,
    ) -> Self {
        let k = in_c * kernel * kernel;
        let limit = (6.0 / (k + out_c * kernel * kernel / stride.max(1)) as f64).sqrt();
        let mut w = Tensor::zeros(&[out_c, k]);
        for v in w.data_mut() {
            *v = R::of(rng.uniform_in(-limit, limit));
        }
        Conv2d {
            w,
            b: Tensor::zeros(&[out_c]),
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            act,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    /// Unrolls input patches into rows of `cols`: one row of length
    /// `in_c*k*k` per output pixel.
    fn im2col(&self, x: &[R], h: usize, w: usize, cols: &mut Vec<R>) {
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        cols.clear();
        cols.resize(oh * ow * self.in_c * k * k, R::zero());
        let row_len = self.in_c * k * k;
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (oy * ow + ox) * row_len;
                let iy0 = (oy * self.stride) as isize - self.pad as isize;
                let ix0 = (ox * self.stride) as isize - self.pad as isize;
                for c in 0..self.in_c {
                    for ky in 0..k {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cols[base + (c * k + ky) * k + kx] =
                                x[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
            }
        }
    }

    /// Forward for a single CHW image; returns pre-activations, outputs, and
    /// the im2col buffer needed for backward.
    pub fn forward(
        &self,
        x: &[R],
        h: usize,
        w: usize,
        cols: &mut Vec<R>,
        pre: &mut Vec<R>,
        out: &mut Vec<R>,
    ) {
        debug_assert_eq!(x.len(), self.in_c * h * w);
        let (oh, ow) = self.out_hw(h, w);
        self.im2col(x, h, w, cols);
        let row_len = self.in_c * self.kernel * self.kernel;
        let wd = self.w.data();
        let bd = self.b.data();
        pre.clear();
        pre.resize(self.out_c * oh * ow, R::zero());
        for p in 0..oh * ow {
            let col = &cols[p * row_len..(p + 1) * row_len];
            for o in 0..self.out_c {
                pre[o * oh * ow + p] = dot(&wd[o * row_len..(o + 1) * row_len], col) + bd[o];
            }
        }
        out.clear();
        out.extend(pre.iter().map(|&p| self.act.apply(p)));
    }

    /// Backward pass mirroring `forward`. `dx` accumulates the input
    /// gradient when `Some`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        cols: &[R],
        pre: &[R],
        out: &[R],
        dout: &[R],
        h: usize,
        w: usize,
        gw: &mut Tensor<R>,
        gb: &mut Tensor<R>,
        dx: Option<&mut [R]>,
    ) {
        let (oh, ow) = self.out_hw(h, w);
        let row_len = self.in_c * self.kernel * self.kernel;
        let gw = gw.data_mut();
        let gb = gb.data_mut();
        let wd = self.w.data();
        let mut dcols = vec![R::zero(); if dx.is_some() { cols.len() } else { 0 }];
        for p in 0..oh * ow {
            let col = &cols[p * row_len..(p + 1) * row_len];
            for o in 0..self.out_c {
                let idx = o * oh * ow + p;
                let dpre = dout[idx] * self.act.derivative(pre[idx], out[idx]);
                if dpre == R::zero() {
                    continue;
                }
                gb[o] += dpre;
                axpy(dpre, col, &mut gw[o * row_len..(o + 1) * row_len]);
                if dx.is_some() {
                    axpy(
                        dpre,
                        &wd[o * row_len..(o + 1) * row_len],
                        &mut dcols[p * row_len..(p + 1) * row_len],
                    );
                }
            }
        }
        if let Some(dx) = dx {
            // col2im scatter-add.
            let k = self.kernel;
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = (oy * ow + ox) * row_len;
                    let iy0 = (oy * self.stride) as isize - self.pad as isize;
                    let ix0 = (ox * self.stride) as isize - self.pad as isize;
                    for c in 0..self.in_c {
                        for ky in 0..k {
                            let iy = iy0 + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = ix0 + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                dx[(c * h + iy as usize) * w + ix as usize] +=
                                    dcols[base + (c * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Named-tensor access shared by the optimizer, the checkpoint container,
/// and the finite-difference checker.
pub trait ParamSet<R: Real>: Sized {
    fn named(&self) -> Vec<(String, &Tensor<R>)>;
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor<R>)>;
    fn zeros_like(&self) -> Self;

    fn zero(&mut self) {
        for (_, t) in self.named_mut() {
            t.fill(R::zero());
        }
    }

    fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }

    /// Element-wise accumulate, used when merging per-worker tapes.
    fn accumulate(&mut self, other: &Self) -> Result<()> {
        let mut mine = self.named_mut();
        let theirs = other.named();
        if mine.len() != theirs.len() {
            return Err(Error::ShapeMismatch("tensor count".into()));
        }
        for ((_, a), (_, b)) in mine.iter_mut().zip(theirs.iter()) {
            a.add_assign(b)?;
        }
        Ok(())
    }
}
