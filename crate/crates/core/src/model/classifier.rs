//! Window classifier used by the sliding-window baseline and the
//! classification-head ablation: encoder, global average pool, linear layer,
//! softmax over keywords, unknown and background.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Act, Conv1d};
use super::{Encoder, EncoderCache, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::{Matrix, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub freq_bins: usize,
    pub channels: usize,
    pub depth: usize,
    pub kernel: usize,
    /// Keywords + unknown + background.
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams<F> {
    pub arch: ClassifierArch,
    pub encoder: Encoder<F>,
    pub fc: Conv1d<F>,
}

pub struct ClassifierCache<F> {
    encoder: EncoderCache<F>,
    last_len: usize,
    pooled: Act<F>,
    probs: Vec<F>,
}

/// Numerically stable softmax.
pub fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let m = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: F = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl<F: Scalar> ClassifierParams<F> {
    pub fn init(arch: &ClassifierArch, rng_seed: u64) -> Result<Self> {
        if arch.kernel.is_multiple_of(2) || arch.classes < 2 || arch.channels == 0 || arch.freq_bins == 0 {
            return Err(Error::InvalidInput(format!("invalid classifier shape {arch:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        Ok(Self {
            arch: arch.clone(),
            encoder: Encoder::new(arch.freq_bins, arch.channels, arch.depth, arch.kernel, &mut rng),
            fc: Conv1d::new(arch.channels, arch.classes, 1, 1, &mut rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            encoder: self.encoder.zeros_like(),
            fc: self.fc.zeros_like(),
        }
    }

    /// Class posteriors for a `frames x freq_bins` window.
    pub fn forward(&self, window: &Matrix<F>) -> Result<(Vec<F>, ClassifierCache<F>)> {
        if window.cols() != self.arch.freq_bins || window.rows() == 0 {
            return Err(Error::Shape(format!(
                "classifier input {:?}, expected (_, {})",
                window.shape(),
                self.arch.freq_bins
            )));
        }
        let x = Act {
            channels: window.cols(),
            len: window.rows(),
            data: window.transposed().into_vec(),
        };
        let (feats, encoder) = self.encoder.forward(&x);
        let last = feats.last().expect("encoder output");
        let inv = F::one() / F::from_usize_lossy(last.len);
        let mut pooled = Act::zeros(last.channels, 1);
        for c in 0..last.channels {
            pooled.data[c] = last.row(c).iter().copied().sum::<F>() * inv;
        }
        let logits = self.fc.forward(&pooled);
        let probs = softmax(&logits.data);
        Ok((
            probs.clone(),
            ClassifierCache {
                encoder,
                last_len: last.len,
                pooled,
                probs,
            },
        ))
    }

    pub fn predict(&self, window: &Matrix<F>) -> Result<Vec<F>> {
        self.forward(window).map(|(p, _)| p)
    }

    /// Cross-entropy loss for `label` and the parameter gradients.
    pub fn loss_backward(&self, cache: &ClassifierCache<F>, label: usize) -> Result<(F, Self)> {
        if label >= self.arch.classes {
            return Err(Error::InvalidInput(format!("label {label} out of range")));
        }
        let p = cache.probs[label].max(F::lit(1e-12));
        let loss = -p.ln();
        let mut dlogits = Act::zeros(self.arch.classes, 1);
        for (k, &q) in cache.probs.iter().enumerate() {
            dlogits.data[k] = q - if k == label { F::one() } else { F::zero() };
        }
        let mut g = self.zeros_like();
        let dpooled = self.fc.backward(&cache.pooled, &dlogits, &mut g.fc);
        let ch = self.arch.channels;
        let inv = F::one() / F::from_usize_lossy(cache.last_len);
        let mut dfeats: Vec<Act<F>> = Vec::with_capacity(self.arch.depth + 1);
        let mut len = cache.encoder_input_len();
        for _ in 0..=self.arch.depth {
            dfeats.push(Act::zeros(ch, len));
            len = len.div_ceil(2);
        }
        let dl = dfeats.last_mut().expect("encoder output");
        for c in 0..ch {
            let v = dpooled.data[c] * inv;
            dl.row_mut(c).iter_mut().for_each(|d| *d = v);
        }
        self.encoder.backward(&cache.encoder, dfeats, &mut g.encoder);
        Ok((loss, g))
    }
}

impl<F> ClassifierCache<F> {
    fn encoder_input_len(&self) -> usize {
        self.encoder.input.len
    }
}

impl<F: Scalar> ParamSet<F> for ClassifierParams<F> {
    fn tensors(&self) -> Vec<&[F]> {
        let mut v = Vec::new();
        self.encoder.push_tensors(&mut v);
        v.extend(self.fc.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut v = Vec::new();
        self.encoder.push_tensors_mut(&mut v);
        v.extend(self.fc.tensors_mut());
        v
    }
}
