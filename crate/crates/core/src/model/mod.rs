//! Micro 1D convolutional detector: an encoder of stride-2 residual blocks,
//! a nearest-neighbour upsampling decoder with encoder skips, and three
//! prediction heads (heatmap, length, offset).

pub mod checkpoint;
pub mod classifier;
pub mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::losses::PredictionGrads;
use crate::scalar::{sigmoid, softplus, softplus_inv, Matrix, Scalar};
use layers::{
    avg_pool2, avg_pool2_backward, silu, silu_backward, upsample2, upsample2_backward, Act,
    ChannelNorm, Conv1d, NormCache,
};

/// Flat view over every trainable tensor, in a fixed order.
pub trait ParamSet<F> {
    fn tensors(&self) -> Vec<&[F]>;
    fn tensors_mut(&mut self) -> Vec<&mut [F]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

impl<F> ParamSet<F> for Conv1d<F> {
    fn tensors(&self) -> Vec<&[F]> {
        vec![&self.weight, &self.bias]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl<F> ParamSet<F> for ChannelNorm<F> {
    fn tensors(&self) -> Vec<&[F]> {
        vec![&self.gain, &self.shift]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        vec![&mut self.gain, &mut self.shift]
    }
}

/// Network shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub freq_bins: usize,
    pub channels: usize,
    pub depth: usize,
    pub kernel: usize,
    pub heat_channels: usize,
    pub frames: usize,
}

impl ArchSpec {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            freq_bins: cfg.freq_bins(),
            channels: cfg.n_ch,
            depth: cfg.depth,
            kernel: cfg.kernel_size,
            heat_channels: cfg.heatmap_channels(),
            frames: cfg.temporal_resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.freq_bins == 0 || self.channels == 0 || self.heat_channels == 0 || self.frames == 0 {
            return Err(Error::InvalidInput("architecture dimensions must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidInput("kernel size must be odd".into()));
        }
        if self.depth >= usize::BITS as usize || !self.frames.is_multiple_of(1 << self.depth) {
            return Err(Error::InvalidInput(format!(
                "frames {} not divisible by 2^{}",
                self.frames, self.depth
            )));
        }
        Ok(())
    }

    /// Upper bound on how many input frames on either side can influence
    /// one output frame.
    pub fn receptive_radius(&self) -> usize {
        let half = self.kernel / 2;
        let mut r = half; // stem
        for i in 0..self.depth {
            let s = 1 << i;
            r += half * s + half * 2 * s + s;
        }
        for j in 0..self.depth {
            let s = 1 << (self.depth - j - 1);
            r += half * s + s;
        }
        r + half // head hidden conv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownBlock<F> {
    pub conv1: Conv1d<F>,
    pub norm1: ChannelNorm<F>,
    pub conv2: Conv1d<F>,
    pub norm2: ChannelNorm<F>,
}

struct DownCache<F> {
    x: Act<F>,
    n1: NormCache<F>,
    pre1: Act<F>,
    s1: Act<F>,
    n2: NormCache<F>,
    z: Act<F>,
}

impl<F: Scalar> DownBlock<F> {
    fn new(ch: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv1: Conv1d::new(ch, ch, kernel, 2, rng),
            norm1: ChannelNorm::new(ch),
            conv2: Conv1d::new(ch, ch, kernel, 1, rng),
            norm2: ChannelNorm::new(ch),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            norm1: self.norm1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            norm2: self.norm2.zeros_like(),
        }
    }

    fn forward(&self, x: &Act<F>) -> (Act<F>, DownCache<F>) {
        let a1 = self.conv1.forward(x);
        let (pre1, n1) = self.norm1.forward(&a1);
        let s1 = silu(&pre1);
        let a2 = self.conv2.forward(&s1);
        let (mut z, n2) = self.norm2.forward(&a2);
        z.add_assign(&avg_pool2(x));
        let out = silu(&z);
        (
            out,
            DownCache {
                x: x.clone(),
                n1,
                pre1,
                s1,
                n2,
                z,
            },
        )
    }

    fn backward(&self, c: &DownCache<F>, dout: &Act<F>, g: &mut Self) -> Act<F> {
        let dz = silu_backward(&c.z, dout);
        let da2 = self.norm2.backward(&c.n2, &dz, &mut g.norm2);
        let ds1 = self.conv2.backward(&c.s1, &da2, &mut g.conv2);
        let dpre1 = silu_backward(&c.pre1, &ds1);
        let da1 = self.norm1.backward(&c.n1, &dpre1, &mut g.norm1);
        let mut dx = self.conv1.backward(&c.x, &da1, &mut g.conv1);
        dx.add_assign(&avg_pool2_backward(c.x.len, &dz));
        dx
    }

    fn push_tensors<'a>(&'a self, out: &mut Vec<&'a [F]>) {
        out.extend(self.conv1.tensors());
        out.extend(self.norm1.tensors());
        out.extend(self.conv2.tensors());
        out.extend(self.norm2.tensors());
    }

    fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [F]>) {
        out.extend(self.conv1.tensors_mut());
        out.extend(self.norm1.tensors_mut());
        out.extend(self.conv2.tensors_mut());
        out.extend(self.norm2.tensors_mut());
    }
}

/// Stem plus stride-2 residual blocks; shared by the detector and the
/// window classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<F> {
    pub stem: Conv1d<F>,
    pub stem_norm: ChannelNorm<F>,
    pub down: Vec<DownBlock<F>>,
}

pub(crate) struct EncoderCache<F> {
    input: Act<F>,
    stem_norm: NormCache<F>,
    stem_pre: Act<F>,
    down: Vec<DownCache<F>>,
}

impl<F: Scalar> Encoder<F> {
    fn new(freq_bins: usize, ch: usize, depth: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            stem: Conv1d::new(freq_bins, ch, kernel, 1, rng),
            stem_norm: ChannelNorm::new(ch),
            down: (0..depth).map(|_| DownBlock::new(ch, kernel, rng)).collect(),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            stem: self.stem.zeros_like(),
            stem_norm: self.stem_norm.zeros_like(),
            down: self.down.iter().map(DownBlock::zeros_like).collect(),
        }
    }

    /// Returns the feature map at every resolution, finest first.
    pub(crate) fn forward(&self, input: &Act<F>) -> (Vec<Act<F>>, EncoderCache<F>) {
        let a = self.stem.forward(input);
        let (stem_pre, stem_norm) = self.stem_norm.forward(&a);
        let mut feats = vec![silu(&stem_pre)];
        let mut down = Vec::with_capacity(self.down.len());
        for block in &self.down {
            let (out, c) = block.forward(feats.last().expect("stem output"));
            feats.push(out);
            down.push(c);
        }
        (
            feats,
            EncoderCache {
                input: input.clone(),
                stem_norm,
                stem_pre,
                down,
            },
        )
    }

    /// `dfeats[i]` is the gradient arriving at feature map `i`.
    pub(crate) fn backward(&self, c: &EncoderCache<F>, mut dfeats: Vec<Act<F>>, g: &mut Self) {
        for i in (0..self.down.len()).rev() {
            let dx = self.down[i].backward(&c.down[i], &dfeats[i + 1], &mut g.down[i]);
            dfeats[i].add_assign(&dx);
        }
        let dpre = silu_backward(&c.stem_pre, &dfeats[0]);
        let da = self.stem_norm.backward(&c.stem_norm, &dpre, &mut g.stem_norm);
        // input gradient is not needed
        let _ = self.stem.backward(&c.input, &da, &mut g.stem);
    }

    fn push_tensors<'a>(&'a self, out: &mut Vec<&'a [F]>) {
        out.extend(self.stem.tensors());
        out.extend(self.stem_norm.tensors());
        for b in &self.down {
            b.push_tensors(out);
        }
    }

    fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [F]>) {
        out.extend(self.stem.tensors_mut());
        out.extend(self.stem_norm.tensors_mut());
        for b in &mut self.down {
            b.push_tensors_mut(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpBlock<F> {
    pub conv: Conv1d<F>,
    pub norm: ChannelNorm<F>,
}

struct UpCache<F> {
    up: Act<F>,
    norm: NormCache<F>,
    z: Act<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head<F> {
    pub hidden: Conv1d<F>,
    pub out: Conv1d<F>,
}

struct HeadCache<F> {
    pre: Act<F>,
    h: Act<F>,
    out: Act<F>,
}

impl<F: Scalar> Head<F> {
    fn new(ch: usize, width: usize, kernel: usize, out_bias: F, rng: &mut ChaCha8Rng) -> Self {
        let mut out = Conv1d::new(ch, width, 1, 1, rng);
        out.weight.iter_mut().for_each(|w| *w *= F::lit(0.1));
        out.bias.iter_mut().for_each(|b| *b = out_bias);
        Self {
            hidden: Conv1d::new(ch, ch, kernel, 1, rng),
            out,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.zeros_like(),
            out: self.out.zeros_like(),
        }
    }

    fn forward(&self, feat: &Act<F>) -> HeadCache<F> {
        let pre = self.hidden.forward(feat);
        let h = silu(&pre);
        let out = self.out.forward(&h);
        HeadCache { pre, h, out }
    }

    fn backward(&self, feat: &Act<F>, c: &HeadCache<F>, dout: &Act<F>, g: &mut Self) -> Act<F> {
        let dh = self.out.backward(&c.h, dout, &mut g.out);
        let dpre = silu_backward(&c.pre, &dh);
        self.hidden.backward(feat, &dpre, &mut g.hidden)
    }
}

/// All trainable parameters of the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams<F> {
    pub arch: ArchSpec,
    pub encoder: Encoder<F>,
    pub up: Vec<UpBlock<F>>,
    pub heat_head: Head<F>,
    pub length_head: Head<F>,
    pub offset_head: Head<F>,
}

/// Model outputs for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTensors<F> {
    /// `T x channels`, entries in (0, 1).
    pub heat: Matrix<F>,
    /// Word length in frames, >= 0.
    pub length: Vec<F>,
    /// Sub-frame center offset, in (0, 1).
    pub offset: Vec<F>,
}

/// Activations retained by [`DetectorParams::forward`] for the backward pass.
pub struct ForwardCache<F> {
    arch: ArchSpec,
    encoder: EncoderCache<F>,
    up: Vec<UpCache<F>>,
    feat: Act<F>,
    heads: [HeadCache<F>; 3],
}

impl<F: Scalar> DetectorParams<F> {
    /// He-initialized parameters. The heatmap bias starts at logit(0.01) and
    /// the length bias at the configured length prior.
    pub fn init(arch: &ArchSpec, length_prior_frames: f64, rng_seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let ch = arch.channels;
        let encoder = Encoder::new(arch.freq_bins, ch, arch.depth, arch.kernel, &mut rng);
        let up = (0..arch.depth)
            .map(|_| UpBlock {
                conv: Conv1d::new(ch, ch, arch.kernel, 1, &mut rng),
                norm: ChannelNorm::new(ch),
            })
            .collect();
        let heat_bias = F::lit((0.01f64 / 0.99).ln());
        let len_bias = softplus_inv(F::lit(length_prior_frames.max(1e-3)));
        Ok(Self {
            arch: arch.clone(),
            encoder,
            up,
            heat_head: Head::new(ch, arch.heat_channels, arch.kernel, heat_bias, &mut rng),
            length_head: Head::new(ch, 1, arch.kernel, len_bias, &mut rng),
            offset_head: Head::new(ch, 1, arch.kernel, F::zero(), &mut rng),
        })
    }

    pub fn from_config(cfg: &PipelineConfig, rng_seed: u64) -> Result<Self> {
        Self::init(
            &ArchSpec::from_config(cfg),
            cfg.length_prior_s * cfg.frames_per_second(),
            rng_seed,
        )
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            encoder: self.encoder.zeros_like(),
            up: self
                .up
                .iter()
                .map(|u| UpBlock {
                    conv: u.conv.zeros_like(),
                    norm: u.norm.zeros_like(),
                })
                .collect(),
            heat_head: self.heat_head.zeros_like(),
            length_head: self.length_head.zeros_like(),
            offset_head: self.offset_head.zeros_like(),
        }
    }

    /// Human-readable parameter summary.
    pub fn describe(&self) -> String {
        let enc = {
            let mut v = Vec::new();
            self.encoder.push_tensors(&mut v);
            v.iter().map(|t| t.len()).sum::<usize>()
        };
        let up: usize = self
            .up
            .iter()
            .map(|u| u.conv.num_params() + u.norm.num_params())
            .sum();
        let head = |h: &Head<F>| h.hidden.num_params() + h.out.num_params();
        format!(
            "detector: {} input bins, {} channels, depth {}, kernel {}, {} heatmap channels, {} frames\n\
             encoder {enc}, decoder {up}, heads {}/{}/{}, total {} parameters",
            self.arch.freq_bins,
            self.arch.channels,
            self.arch.depth,
            self.arch.kernel,
            self.arch.heat_channels,
            self.arch.frames,
            head(&self.heat_head),
            head(&self.length_head),
            head(&self.offset_head),
            self.num_params()
        )
    }

    /// Runs the network on a `frames x freq_bins` feature matrix.
    pub fn forward(&self, input: &Matrix<F>) -> Result<(PredictionTensors<F>, ForwardCache<F>)> {
        let a = &self.arch;
        if input.shape() != (a.frames, a.freq_bins) {
            return Err(Error::Shape(format!(
                "detector input {:?}, expected ({}, {})",
                input.shape(),
                a.frames,
                a.freq_bins
            )));
        }
        let x = Act {
            channels: a.freq_bins,
            len: a.frames,
            data: input.transposed().into_vec(),
        };
        let (feats, enc_cache) = self.encoder.forward(&x);
        let mut u = feats[a.depth].clone();
        let mut up_caches = Vec::with_capacity(a.depth);
        for (j, block) in self.up.iter().enumerate() {
            let up = upsample2(&u);
            let conv = block.conv.forward(&up);
            let (mut z, norm) = block.norm.forward(&conv);
            z.add_assign(&feats[a.depth - 1 - j]);
            u = silu(&z);
            up_caches.push(UpCache { up, norm, z });
        }
        let heads = [
            self.heat_head.forward(&u),
            self.length_head.forward(&u),
            self.offset_head.forward(&u),
        ];
        let t = a.frames;
        let mut heat = Matrix::zeros(t, a.heat_channels);
        for c in 0..a.heat_channels {
            for (i, &z) in heads[0].out.row(c).iter().enumerate() {
                heat.set(i, c, sigmoid(z));
            }
        }
        let length = heads[1].out.row(0).iter().map(|&z| softplus(z)).collect();
        let offset = heads[2].out.row(0).iter().map(|&z| sigmoid(z)).collect();
        Ok((
            PredictionTensors { heat, length, offset },
            ForwardCache {
                arch: a.clone(),
                encoder: enc_cache,
                up: up_caches,
                feat: u,
                heads,
            },
        ))
    }

    pub fn predict(&self, input: &Matrix<F>) -> Result<PredictionTensors<F>> {
        self.forward(input).map(|(p, _)| p)
    }

    /// Parameter gradients given gradients of the loss with respect to the
    /// three (post-activation) outputs.
    pub fn backward(&self, cache: &ForwardCache<F>, grads: &PredictionGrads<F>) -> Result<Self> {
        let a = &self.arch;
        if cache.arch != *a {
            return Err(Error::Shape("forward cache belongs to a different architecture".into()));
        }
        let t = a.frames;
        if grads.heat.shape() != (t, a.heat_channels) || grads.length.len() != t || grads.offset.len() != t {
            return Err(Error::Shape("prediction gradients do not match outputs".into()));
        }
        let mut g = self.zeros_like();
        let one = F::one();

        let mut d_heat = Act::zeros(a.heat_channels, t);
        for c in 0..a.heat_channels {
            let zrow = cache.heads[0].out.row(c);
            for i in 0..t {
                let p = sigmoid(zrow[i]);
                d_heat.data[c * t + i] = grads.heat.get(i, c) * p * (one - p);
            }
        }
        let mut d_len = Act::zeros(1, t);
        let mut d_off = Act::zeros(1, t);
        for i in 0..t {
            d_len.data[i] = grads.length[i] * sigmoid(cache.heads[1].out.data[i]);
            let o = sigmoid(cache.heads[2].out.data[i]);
            d_off.data[i] = grads.offset[i] * o * (one - o);
        }

        let mut du = self.heat_head.backward(&cache.feat, &cache.heads[0], &d_heat, &mut g.heat_head);
        du.add_assign(&self.length_head.backward(&cache.feat, &cache.heads[1], &d_len, &mut g.length_head));
        du.add_assign(&self.offset_head.backward(&cache.feat, &cache.heads[2], &d_off, &mut g.offset_head));

        let mut dfeats: Vec<Act<F>> = (0..=a.depth)
            .map(|i| Act::zeros(a.channels, t >> i))
            .collect();
        for j in (0..a.depth).rev() {
            let c = &cache.up[j];
            let dz = silu_backward(&c.z, &du);
            dfeats[a.depth - 1 - j].add_assign(&dz);
            let dconv = self.up[j].norm.backward(&c.norm, &dz, &mut g.up[j].norm);
            let dup = self.up[j].conv.backward(&c.up, &dconv, &mut g.up[j].conv);
            du = upsample2_backward(&dup);
        }
        dfeats[a.depth].add_assign(&du);
        self.encoder.backward(&cache.encoder, dfeats, &mut g.encoder);
        Ok(g)
    }
}

impl<F: Scalar> ParamSet<F> for DetectorParams<F> {
    fn tensors(&self) -> Vec<&[F]> {
        let mut v = Vec::new();
        self.encoder.push_tensors(&mut v);
        for u in &self.up {
            v.extend(u.conv.tensors());
            v.extend(u.norm.tensors());
        }
        for h in [&self.heat_head, &self.length_head, &self.offset_head] {
            v.extend(h.hidden.tensors());
            v.extend(h.out.tensors());
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut v = Vec::new();
        self.encoder.push_tensors_mut(&mut v);
        for u in &mut self.up {
            v.extend(u.conv.tensors_mut());
            v.extend(u.norm.tensors_mut());
        }
        for h in [&mut self.heat_head, &mut self.length_head, &mut self.offset_head] {
            v.extend(h.hidden.tensors_mut());
            v.extend(h.out.tensors_mut());
        }
        v
    }
}

/// Converts a feature matrix to the model's scalar type.
pub fn to_model_input<F: Scalar>(features: &Matrix<f64>) -> Matrix<F> {
    features.map(F::lit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_arch() -> ArchSpec {
        ArchSpec {
            freq_bins: 5,
            channels: 4,
            depth: 2,
            kernel: 3,
            heat_channels: 3,
            frames: 16,
        }
    }

    fn random_input(seed: u64, arch: &ArchSpec) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(
            arch.frames,
            arch.freq_bins,
            (0..arch.frames * arch.freq_bins).map(|_| rng.random_range(0.0..2.0)).collect(),
        )
    }

    #[test]
    fn init_is_deterministic() {
        let a = DetectorParams::<f64>::init(&tiny_arch(), 8.0, 3).unwrap();
        let b = DetectorParams::<f64>::init(&tiny_arch(), 8.0, 3).unwrap();
        assert_eq!(a, b);
        let c = DetectorParams::<f64>::init(&tiny_arch(), 8.0, 4).unwrap();
        assert_ne!(a, c);
        assert!(a.describe().contains(&format!("total {}", a.num_params())));
    }

    #[test]
    fn zero_input_gives_prior_heat() {
        let cfg = PipelineConfig::parse_str("C = 3\nn_ch = 64\ndepth = 3").unwrap();
        let p = DetectorParams::<f32>::from_config(&cfg, 1).unwrap();
        let input = Matrix::zeros(128, 256);
        let out = p.predict(&input).unwrap();
        assert_eq!(out.heat.shape(), (128, 4));
        assert!(out.heat.as_slice().iter().all(|&v| (v - 0.01).abs() < 1e-6));
        let prior = (0.4 * cfg.frames_per_second()) as f32;
        assert!(out.length.iter().all(|&l| (l - prior).abs() < 1e-3));
    }

    #[test]
    fn invalid_arch_is_rejected() {
        let mut a = tiny_arch();
        a.frames = 18; // not divisible by 4
        assert!(DetectorParams::<f64>::init(&a, 8.0, 0).is_err());
        let mut a = tiny_arch();
        a.kernel = 2;
        assert!(DetectorParams::<f64>::init(&a, 8.0, 0).is_err());
    }

    #[test]
    fn output_ranges_and_purity() {
        let arch = tiny_arch();
        let p = DetectorParams::<f64>::init(&arch, 8.0, 5).unwrap();
        let x = random_input(1, &arch);
        let a = p.predict(&x).unwrap();
        let b = p.predict(&x).unwrap();
        assert_eq!(a, b);
        assert!(a.heat.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(a.length.iter().all(|&v| v >= 0.0));
        assert!(a.offset.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(p.predict(&Matrix::zeros(15, 5)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients_and_scales_linearly() {
        let arch = tiny_arch();
        let p = DetectorParams::<f64>::init(&arch, 8.0, 6).unwrap();
        let (_, cache) = p.forward(&random_input(2, &arch)).unwrap();
        let zero = PredictionGrads::zeros(16, 3);
        let g = p.backward(&cache, &zero).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut up = PredictionGrads::<f64>::zeros(16, 3);
        up.heat.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        up.length.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        up.offset.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let g1 = p.backward(&cache, &up).unwrap();
        up.scale(2.0);
        let g2 = p.backward(&cache, &up).unwrap();
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let p = DetectorParams::<f64>::init(&tiny_arch(), 8.0, 6).unwrap();
        let mut other = tiny_arch();
        other.heat_channels = 2;
        let q = DetectorParams::<f64>::init(&other, 8.0, 6).unwrap();
        let (_, cache) = q.forward(&random_input(2, &other)).unwrap();
        assert!(p.backward(&cache, &PredictionGrads::zeros(16, 3)).is_err());
    }

    #[test]
    fn output_depends_only_on_receptive_field() {
        let arch = ArchSpec {
            frames: 64,
            ..tiny_arch()
        };
        let r = arch.receptive_radius();
        let p = DetectorParams::<f64>::init(&arch, 8.0, 7).unwrap();
        let x = random_input(3, &arch);
        let base = p.predict(&x).unwrap();
        let j = 5;
        let mut y = x.clone();
        for k in 0..arch.freq_bins {
            y.set(j, k, y.get(j, k) + 1.0);
        }
        let moved = p.predict(&y).unwrap();
        for t in 0..arch.frames {
            if t.abs_diff(j) > r {
                assert_eq!(base.heat.row(t), moved.heat.row(t), "frame {t}");
                assert_eq!(base.length[t], moved.length[t]);
            }
        }
    }
}
