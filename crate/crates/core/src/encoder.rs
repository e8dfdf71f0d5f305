//! Scale-embedded convolutional encoder.
//!
//! `[c, h, w]` zero-filled coil magnitudes are projected to `channels`
//! feature maps, passed through residual blocks
//! (conv → GN → swish → + scale bias → conv → GN → + skip → swish) and
//! projected by a 1×1 convolution to `feature_dim` channels.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    fill_fan_in_uniform, fill_normal, swish, swish_backward, Conv2d, GroupNorm,
    NormCache, ParamLayout, SlotId,
};
use crate::real::Real;

/// Scale at which the normalized scale input equals one.
pub const SCALE_REF: f64 = 4.0;
const SCALE_INIT_STD: f64 = 0.02;

/// Normalized scalar scale input `s / 4`.
pub fn scale_input(scale: usize) -> f64 {
    scale as f64 / SCALE_REF
}

/// Per-channel bias `W·(s/4) + b` with `W: [channels, 1]`.
pub fn scale_bias<T: Real>(scale: usize, weight: &[T], bias: &[T]) -> Vec<T> {
    let phi = T::of(scale_input(scale));
    weight.iter().zip(bias).map(|(&w, &b)| w * phi + b).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub channels: usize,
    pub feature_dim: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub groups: usize,
    pub eps: f64,
    pub scale_embedding: bool,
}

impl EncoderConfig {
    /// 64 channels, 5 blocks of 5×5 convolutions, 128 output features.
    pub fn full_size(in_channels: usize) -> Self {
        EncoderConfig {
            in_channels,
            channels: 64,
            feature_dim: 128,
            blocks: 5,
            kernel: 5,
            groups: 8,
            eps: 1e-5,
            scale_embedding: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("channels", self.channels),
            ("feature_dim", self.feature_dim),
            ("kernel", self.kernel),
            ("groups", self.groups),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::validation(field, "must be positive"));
            }
        }
        if self.kernel % 2 == 0 {
            return Err(Error::validation("kernel", "must be odd"));
        }
        if self.channels % self.groups != 0 {
            return Err(Error::validation("groups", "must divide the channel count"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::validation("eps", "must be positive"));
        }
        Ok(())
    }
}

/// Learned projection of the scalar scale input to a per-channel bias.
#[derive(Debug, Clone)]
pub struct ScaleProjection {
    pub weight: SlotId,
    pub bias: SlotId,
}

#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub norm1: GroupNorm,
    pub scale: Option<ScaleProjection>,
    pub conv2: Conv2d,
    pub norm2: GroupNorm,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub input: Conv2d,
    pub blocks: Vec<ResBlock>,
    pub output: Conv2d,
}

/// Activations saved by [`Encoder::forward`] for the backward pass.
#[derive(Debug, Default, Clone)]
pub struct EncoderCache<T> {
    /// Input of each block, then the final block output.
    stages: Vec<Vec<T>>,
    blocks: Vec<BlockCache<T>>,
    cols: Vec<T>,
}

#[derive(Debug, Default, Clone)]
struct BlockCache<T> {
    pre1: Vec<T>,
    mid: Vec<T>,
    pre2: Vec<T>,
    norm1: NormCache<T>,
    norm2: NormCache<T>,
}

impl Encoder {
    pub fn new(layout: &mut ParamLayout, config: EncoderConfig) -> Self {
        let c = config.channels;
        let input = Conv2d::new(layout, "encoder.input", config.in_channels, c, config.kernel);
        let blocks = (0..config.blocks)
            .map(|b| {
                let name = format!("encoder.block{b}");
                ResBlock {
                    conv1: Conv2d::new(layout, &format!("{name}.conv1"), c, c, config.kernel),
                    norm1: GroupNorm::new(layout, &format!("{name}.norm1"), c, config.groups, config.eps),
                    scale: config.scale_embedding.then(|| ScaleProjection {
                        weight: layout.push(format!("{name}.scale.weight"), &[c, 1]),
                        bias: layout.push(format!("{name}.scale.bias"), &[c]),
                    }),
                    conv2: Conv2d::new(layout, &format!("{name}.conv2"), c, c, config.kernel),
                    norm2: GroupNorm::new(layout, &format!("{name}.norm2"), c, config.groups, config.eps),
                }
            })
            .collect();
        let output = Conv2d::new(layout, "encoder.output", c, config.feature_dim, 1);
        Encoder {
            config,
            input,
            blocks,
            output,
        }
    }

    pub fn init<T: Real, R: Rng>(&self, layout: &ParamLayout, params: &mut [T], rng: &mut R) {
        let conv_init = |conv: &Conv2d, params: &mut [T], rng: &mut R| {
            fill_fan_in_uniform(layout.get_mut(params, conv.weight), conv.fan_in(), rng);
            fill_fan_in_uniform(layout.get_mut(params, conv.bias), conv.fan_in(), rng);
        };
        conv_init(&self.input, params, rng);
        for b in &self.blocks {
            conv_init(&b.conv1, params, rng);
            b.norm1.init(layout, params);
            if let Some(sp) = &b.scale {
                fill_normal(layout.get_mut(params, sp.weight), SCALE_INIT_STD, rng);
                layout.get_mut(params, sp.bias).fill(T::zero());
            }
            conv_init(&b.conv2, params, rng);
            b.norm2.init(layout, params);
        }
        conv_init(&self.output, params, rng);
    }

    /// Channel-major `[feature_dim, h·w]` features of channel-major `[c, h·w]` input.
    pub fn forward<T: Real>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        x: &[T],
        h: usize,
        w: usize,
        scale: usize,
        cache: &mut EncoderCache<T>,
    ) -> Vec<T> {
        let n = h * w;
        let c = self.config.channels;
        assert_eq!(x.len(), self.config.in_channels * n, "encoder input size");
        cache.stages.resize(self.blocks.len() + 1, Vec::new());
        cache.blocks.resize(self.blocks.len(), BlockCache::default());
        let mut cur = vec![T::zero(); c * n];
        self.input.forward(layout, params, x, h, w, &mut cur, &mut cache.cols);
        for (bi, b) in self.blocks.iter().enumerate() {
            let bc = &mut cache.blocks[bi];
            let mut a = vec![T::zero(); c * n];
            b.conv1.forward(layout, params, &cur, h, w, &mut a, &mut cache.cols);
            bc.pre1.resize(c * n, T::zero());
            b.norm1.forward(layout, params, &a, n, &mut bc.pre1, &mut bc.norm1);
            bc.mid.resize(c * n, T::zero());
            for (m, &p) in bc.mid.iter_mut().zip(&bc.pre1) {
                *m = swish(p);
            }
            if let Some(sp) = &b.scale {
                let bias = scale_bias(scale, layout.get(params, sp.weight), layout.get(params, sp.bias));
                for (row, &bv) in bc.mid.chunks_exact_mut(n).zip(&bias) {
                    for v in row {
                        *v += bv;
                    }
                }
            }
            b.conv2.forward(layout, params, &bc.mid, h, w, &mut a, &mut cache.cols);
            bc.pre2.resize(c * n, T::zero());
            b.norm2.forward(layout, params, &a, n, &mut bc.pre2, &mut bc.norm2);
            let mut next = vec![T::zero(); c * n];
            for ((o, p), &skip) in next.iter_mut().zip(bc.pre2.iter_mut()).zip(&cur) {
                *p += skip;
                *o = swish(*p);
            }
            cache.stages[bi] = std::mem::replace(&mut cur, next);
        }
        let mut out = vec![T::zero(); self.config.feature_dim * n];
        self.output.forward(layout, params, &cur, h, w, &mut out, &mut cache.cols);
        cache.stages[self.blocks.len()] = cur;
        out
    }

    /// Accumulates parameter gradients for upstream gradient `dout: [feature_dim, h·w]`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        grads: &mut [T],
        x: &[T],
        h: usize,
        w: usize,
        scale: usize,
        dout: &[T],
        cache: &mut EncoderCache<T>,
    ) {
        let n = h * w;
        let c = self.config.channels;
        let nb = self.blocks.len();
        let mut dcur = vec![T::zero(); c * n];
        self.output.backward(
            layout,
            params,
            grads,
            &cache.stages[nb],
            h,
            w,
            dout,
            Some(&mut dcur),
            &mut cache.cols,
        );
        let phi = T::of(scale_input(scale));
        for bi in (0..nb).rev() {
            let b = &self.blocks[bi];
            let bc = &cache.blocks[bi];
            // through the output swish; `pre2` holds the post-skip sum
            let mut dr = vec![T::zero(); c * n];
            swish_backward(&bc.pre2, &dcur, &mut dr);
            let mut da = vec![T::zero(); c * n];
            b.norm2.backward(layout, params, grads, &bc.norm2, &dr, n, &mut da);
            let mut dmid = vec![T::zero(); c * n];
            b.conv2.backward(layout, params, grads, &bc.mid, h, w, &da, Some(&mut dmid), &mut cache.cols);
            if let Some(sp) = &b.scale {
                let sums: Vec<T> = dmid.chunks_exact(n).map(|r| r.iter().copied().sum()).collect();
                for (g, &s) in layout.get_mut(grads, sp.weight).iter_mut().zip(&sums) {
                    *g += s * phi;
                }
                for (g, &s) in layout.get_mut(grads, sp.bias).iter_mut().zip(&sums) {
                    *g += s;
                }
            }
            let mut dpre1 = vec![T::zero(); c * n];
            swish_backward(&bc.pre1, &dmid, &mut dpre1);
            da.fill(T::zero());
            b.norm1.backward(layout, params, grads, &bc.norm1, &dpre1, n, &mut da);
            // skip path: dcur ← dr + conv1ᵀ(da)
            dcur = dr;
            b.conv1.backward(
                layout,
                params,
                grads,
                &cache.stages[bi],
                h,
                w,
                &da,
                Some(&mut dcur),
                &mut cache.cols,
            );
        }
        self.input
            .backward(layout, params, grads, x, h, w, &dcur, None, &mut cache.cols);
    }
}

/// Real feature grid `[h, w, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array3<f64>,
}

impl FeatureMap {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("feature_map", "entries must be finite"));
        }
        Ok(FeatureMap { data })
    }

    /// From channel-major `[d, h·w]` storage.
    pub fn from_channel_major<T: Real>(features: &[T], d: usize, h: usize, w: usize) -> Result<Self> {
        let n = h * w;
        Self::new(Array3::from_shape_fn((h, w, d), |(i, j, k)| features[k * n + i * w + j].f64()))
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn feature_dim(&self) -> usize {
        self.data.dim().2
    }
}

/// Encodes `[c, h, w]` magnitudes at `scale` into an `[h, w, d]` feature map.
pub fn encode<T: Real>(
    encoder: &Encoder,
    layout: &ParamLayout,
    params: &[T],
    magnitudes: &Array3<f64>,
    scale: usize,
) -> Result<FeatureMap> {
    let (c, h, w) = magnitudes.dim();
    if c != encoder.config.in_channels {
        return Err(Error::shape(format!(
            "encoder expects {} channels, input has {c}",
            encoder.config.in_channels
        )));
    }
    if scale < 1 {
        return Err(Error::validation("scale", "must be at least 1"));
    }
    let x: Vec<T> = magnitudes.iter().map(|&v| T::of(v)).collect();
    let feats = encoder.forward(layout, params, &x, h, w, scale, &mut EncoderCache::default());
    FeatureMap::from_channel_major(&feats, encoder.config.feature_dim, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(scale_embedding: bool) -> (ParamLayout, Encoder, Vec<f64>) {
        let config = EncoderConfig {
            in_channels: 2,
            channels: 4,
            feature_dim: 3,
            blocks: 2,
            kernel: 3,
            groups: 2,
            eps: 1e-5,
            scale_embedding,
        };
        let mut layout = ParamLayout::new();
        let enc = Encoder::new(&mut layout, config);
        let mut params = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        enc.init(&layout, &mut params, &mut rng);
        // perturb norms away from the identity so their gradients are exercised
        for v in params.iter_mut() {
            *v += 0.01;
        }
        (layout, enc, params)
    }

    fn input(c: usize, h: usize, w: usize) -> Vec<f64> {
        (0..c * h * w).map(|i| ((i * 37 % 17) as f64 / 17.0 - 0.4) * 1.3).collect()
    }

    #[test]
    fn scale_bias_examples() {
        assert_eq!(scale_input(4), 1.0);
        assert_eq!(scale_bias::<f64>(6, &[0.0; 3], &[0.0; 3]), vec![0.0; 3]);
        assert_eq!(scale_bias::<f64>(6, &[0.0, 1.0, 0.0], &[0.0; 3]), vec![0.0, 1.5, 0.0]);
    }

    #[test]
    fn full_size_output_shape() {
        let mut layout = ParamLayout::new();
        let enc = Encoder::new(&mut layout, EncoderConfig::full_size(16));
        assert_eq!(enc.blocks.len(), 5);
        let conv = layout.slot(enc.blocks[0].conv1.weight);
        assert_eq!(conv.shape, vec![64, 64, 5, 5]);
        assert_eq!(layout.slot(enc.output.weight).shape, vec![128, 64, 1, 1]);
    }

    #[test]
    fn scale_changes_output_only_with_embedding() {
        let (h, w) = (6, 5);
        let x = input(2, h, w);
        let (layout, enc, params) = tiny(true);
        let a = enc.forward(&layout, &params, &x, h, w, 4, &mut EncoderCache::default());
        let b = enc.forward(&layout, &params, &x, h, w, 6, &mut EncoderCache::default());
        assert!(a.iter().zip(&b).any(|(p, q)| p != q));
        let again = enc.forward(&layout, &params, &x, h, w, 4, &mut EncoderCache::default());
        assert_eq!(a, again);

        let (layout, enc, params) = tiny(false);
        let a = enc.forward(&layout, &params, &x, h, w, 4, &mut EncoderCache::default());
        let b = enc.forward(&layout, &params, &x, h, w, 6, &mut EncoderCache::default());
        assert_eq!(a, b);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (h, w) = (5, 4);
        let x = input(2, h, w);
        let (layout, enc, mut params) = tiny(true);
        let d = enc.config.feature_dim;
        let probe: Vec<f64> = (0..d * h * w).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.1).collect();
        let loss = |p: &[f64]| -> f64 {
            let out = enc.forward(&layout, p, &x, h, w, 5, &mut EncoderCache::default());
            out.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let mut cache = EncoderCache::default();
        enc.forward(&layout, &params, &x, h, w, 5, &mut cache);
        let mut grads = vec![0.0; layout.len()];
        enc.backward(&layout, &params, &mut grads, &x, h, w, 5, &probe, &mut cache);
        let step = 1e-6;
        for idx in (0..layout.len()).step_by(7) {
            let orig = params[idx];
            params[idx] = orig + step;
            let up = loss(&params);
            params[idx] = orig - step;
            let down = loss(&params);
            params[idx] = orig;
            let fd = (up - down) / (2.0 * step);
            let tol = 1e-6 * (1.0 + fd.abs());
            assert!((fd - grads[idx]).abs() < tol, "param {idx}: fd {fd} vs {}", grads[idx]);
        }
    }

    #[test]
    fn conv_stack_is_translation_equivariant_before_normalization() {
        let (h, w) = (16, 16);
        let (layout, enc, params) = tiny(true);
        let blob = |dy: usize, dx: usize| -> Vec<f64> {
            let mut x = vec![0.0; 2 * h * w];
            for c in 0..2 {
                for i in 6..9 {
                    for j in 5..9 {
                        x[c * h * w + (i + dy) * w + j + dx] = ((c + i * 3 + j) % 5) as f64 - 1.5;
                    }
                }
            }
            x
        };
        let pre_norm = |x: &[f64]| -> Vec<f64> {
            let mut cols = Vec::new();
            let mut a = vec![0.0; 4 * h * w];
            enc.input.forward(&layout, &params, x, h, w, &mut a, &mut cols);
            let mut b = vec![0.0; 4 * h * w];
            enc.blocks[0].conv1.forward(&layout, &params, &a, h, w, &mut b, &mut cols);
            b
        };
        let base = pre_norm(&blob(0, 0));
        let shifted = pre_norm(&blob(1, 1));
        for c in 0..4 {
            for i in 2..h - 3 {
                for j in 2..w - 3 {
                    let a = base[c * h * w + i * w + j];
                    let b = shifted[c * h * w + (i + 1) * w + j + 1];
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let (layout, enc, params) = tiny(true);
        let m = Array3::zeros((3, 4, 4));
        assert!(matches!(encode(&enc, &layout, &params, &m, 4), Err(Error::Shape(_))));
    }
}
