//! Channel-major 1D layers with hand-written backward passes.
//!
//! Activations are `[channels x length]` buffers stored row-major.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::{sigmoid, Scalar};

/// Activation buffer `[channels x len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<F> {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Act<F> {
    pub fn zeros(channels: usize, len: usize) -> Self {
        Self {
            channels,
            len,
            data: vec![F::zero(); channels * len],
        }
    }

    #[inline]
    pub fn row(&self, c: usize) -> &[F] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    #[inline]
    pub fn row_mut(&mut self, c: usize) -> &mut [F] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<F> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out][in][k]`
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Conv1d<F> {
    /// He-normal weights, zero bias.
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (in_ch * kernel) as f64).sqrt();
        let weight = (0..out_ch * in_ch * kernel)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                F::lit(z * std)
            })
            .collect();
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            weight,
            bias: vec![F::zero(); out_ch],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: vec![F::zero(); self.weight.len()],
            bias: vec![F::zero(); self.bias.len()],
            ..*self
        }
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad() - self.kernel) / self.stride + 1
    }

    /// Range of output positions `t` for which input index
    /// `t*stride + k - pad` lies inside `[0, len)`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let pad = self.pad();
        let s = self.stride;
        let lo = if k >= pad { 0 } else { (pad - k).div_ceil(s) };
        // t*s + k - pad <= len - 1
        let hi_excl = if len + pad < k + 1 {
            0
        } else {
            ((len + pad - k - 1) / s + 1).min(out_len)
        };
        (lo, hi_excl.max(lo))
    }

    pub fn forward(&self, x: &Act<F>) -> Act<F> {
        assert_eq!(x.channels, self.in_ch, "conv input channels");
        let out_len = self.out_len(x.len);
        let mut y = Act::zeros(self.out_ch, out_len);
        let (pad, s) = (self.pad(), self.stride);
        for o in 0..self.out_ch {
            let yrow = &mut y.data[o * out_len..(o + 1) * out_len];
            yrow.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.in_ch {
                let xrow = x.row(i);
                for k in 0..self.kernel {
                    let w = self.weight[(o * self.in_ch + i) * self.kernel + k];
                    let (lo, hi) = self.valid_range(k, x.len, out_len);
                    if s == 1 {
                        let base = lo + k - pad;
                        for (yv, &xv) in yrow[lo..hi].iter_mut().zip(&xrow[base..base + hi - lo]) {
                            *yv += w * xv;
                        }
                    } else {
                        for t in lo..hi {
                            yrow[t] += w * xrow[t * s + k - pad];
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Act<F>, dy: &Act<F>, grad: &mut Self) -> Act<F> {
        let out_len = dy.len;
        let mut dx = Act::zeros(self.in_ch, x.len);
        let (pad, s) = (self.pad(), self.stride);
        for o in 0..self.out_ch {
            let dyrow = dy.row(o);
            grad.bias[o] += dyrow.iter().copied().sum::<F>();
            for i in 0..self.in_ch {
                let xrow = x.row(i);
                let widx = (o * self.in_ch + i) * self.kernel;
                for k in 0..self.kernel {
                    let w = self.weight[widx + k];
                    let (lo, hi) = self.valid_range(k, x.len, out_len);
                    let mut acc = F::zero();
                    if s == 1 {
                        let base = lo + k - pad;
                        let dxrow = &mut dx.data[i * x.len..(i + 1) * x.len];
                        for ((&g, &xv), dxv) in dyrow[lo..hi]
                            .iter()
                            .zip(&xrow[base..base + hi - lo])
                            .zip(dxrow[base..base + hi - lo].iter_mut())
                        {
                            acc += g * xv;
                            *dxv += w * g;
                        }
                    } else {
                        for t in lo..hi {
                            let j = t * s + k - pad;
                            acc += dyrow[t] * xrow[j];
                            dx.data[i * x.len + j] += w * dyrow[t];
                        }
                    }
                    grad.weight[widx + k] += acc;
                }
            }
        }
        dx
    }
}

/// Normalization over channels at each time step, with per-channel gain
/// and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelNorm<F> {
    pub gain: Vec<F>,
    pub shift: Vec<F>,
}

pub struct NormCache<F> {
    xhat: Act<F>,
    inv_std: Vec<F>,
}

/// Variance floor. Large compared with the usual 1e-5 so that frames whose
/// few channels nearly agree do not produce extreme curvature.
const NORM_EPS: f64 = 1e-1;

impl<F: Scalar> ChannelNorm<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gain: vec![F::one(); channels],
            shift: vec![F::zero(); channels],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gain: vec![F::zero(); self.gain.len()],
            shift: vec![F::zero(); self.shift.len()],
        }
    }

    pub fn forward(&self, x: &Act<F>) -> (Act<F>, NormCache<F>) {
        let (c, len) = (x.channels, x.len);
        let inv_c = F::one() / F::from_usize_lossy(c);
        let mut mean = vec![F::zero(); len];
        for ch in 0..c {
            for (m, &v) in mean.iter_mut().zip(x.row(ch)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_c);
        let mut var = vec![F::zero(); len];
        for ch in 0..c {
            for ((s, &v), &m) in var.iter_mut().zip(x.row(ch)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let eps = F::lit(NORM_EPS);
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v * inv_c + eps).sqrt()).collect();
        let mut xhat = Act::zeros(c, len);
        let mut y = Act::zeros(c, len);
        for ch in 0..c {
            let (g, b) = (self.gain[ch], self.shift[ch]);
            for t in 0..len {
                let h = (x.data[ch * len + t] - mean[t]) * inv_std[t];
                xhat.data[ch * len + t] = h;
                y.data[ch * len + t] = g * h + b;
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &NormCache<F>, dy: &Act<F>, grad: &mut Self) -> Act<F> {
        let (c, len) = (dy.channels, dy.len);
        let inv_c = F::one() / F::from_usize_lossy(c);
        let mut sum_d = vec![F::zero(); len];
        let mut sum_dx = vec![F::zero(); len];
        for ch in 0..c {
            let g = self.gain[ch];
            let (mut dg, mut db) = (F::zero(), F::zero());
            for t in 0..len {
                let d = dy.data[ch * len + t];
                let h = cache.xhat.data[ch * len + t];
                dg += d * h;
                db += d;
                let dh = d * g;
                sum_d[t] += dh;
                sum_dx[t] += dh * h;
            }
            grad.gain[ch] += dg;
            grad.shift[ch] += db;
        }
        let mut dx = Act::zeros(c, len);
        for ch in 0..c {
            let g = self.gain[ch];
            for t in 0..len {
                let dh = dy.data[ch * len + t] * g;
                let h = cache.xhat.data[ch * len + t];
                dx.data[ch * len + t] =
                    cache.inv_std[t] * (dh - sum_d[t] * inv_c - h * sum_dx[t] * inv_c);
            }
        }
        dx
    }
}

/// `x * sigmoid(x)`
pub fn silu<F: Scalar>(x: &Act<F>) -> Act<F> {
    Act {
        channels: x.channels,
        len: x.len,
        data: x.data.iter().map(|&v| v * sigmoid(v)).collect(),
    }
}

pub fn silu_backward<F: Scalar>(pre: &Act<F>, dy: &Act<F>) -> Act<F> {
    Act {
        channels: pre.channels,
        len: pre.len,
        data: pre
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&z, &d)| {
                let s = sigmoid(z);
                d * (s + z * s * (F::one() - s))
            })
            .collect(),
    }
}

/// Average of consecutive pairs; an odd trailing element is passed through.
pub fn avg_pool2<F: Scalar>(x: &Act<F>) -> Act<F> {
    let out_len = x.len.div_ceil(2);
    let half = F::lit(0.5);
    let mut y = Act::zeros(x.channels, out_len);
    for c in 0..x.channels {
        let row = x.row(c);
        for t in 0..out_len {
            y.data[c * out_len + t] = if 2 * t + 1 < x.len {
                (row[2 * t] + row[2 * t + 1]) * half
            } else {
                row[2 * t]
            };
        }
    }
    y
}

pub fn avg_pool2_backward<F: Scalar>(in_len: usize, dy: &Act<F>) -> Act<F> {
    let half = F::lit(0.5);
    let mut dx = Act::zeros(dy.channels, in_len);
    for c in 0..dy.channels {
        for t in 0..dy.len {
            let g = dy.data[c * dy.len + t];
            if 2 * t + 1 < in_len {
                dx.data[c * in_len + 2 * t] = g * half;
                dx.data[c * in_len + 2 * t + 1] = g * half;
            } else {
                dx.data[c * in_len + 2 * t] = g;
            }
        }
    }
    dx
}

/// Nearest-neighbour upsampling by 2.
pub fn upsample2<F: Scalar>(x: &Act<F>) -> Act<F> {
    let mut y = Act::zeros(x.channels, 2 * x.len);
    for c in 0..x.channels {
        for t in 0..x.len {
            let v = x.data[c * x.len + t];
            y.data[c * 2 * x.len + 2 * t] = v;
            y.data[c * 2 * x.len + 2 * t + 1] = v;
        }
    }
    y
}

pub fn upsample2_backward<F: Scalar>(dy: &Act<F>) -> Act<F> {
    let len = dy.len / 2;
    let mut dx = Act::zeros(dy.channels, len);
    for c in 0..dy.channels {
        for t in 0..len {
            dx.data[c * len + t] = dy.data[c * dy.len + 2 * t] + dy.data[c * dy.len + 2 * t + 1];
        }
    }
    dx
}
