use super::params::{ParamLayout, SlotId};
use crate::real::Real;

/// Group normalization over `[channels, n]` activations with per-channel affine.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: SlotId,
    pub beta: SlotId,
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
}

/// Normalized activations and per-group inverse standard deviations.
#[derive(Debug, Clone, Default)]
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

impl GroupNorm {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize, groups: usize, eps: f64) -> Self {
        assert!(groups > 0 && channels % groups == 0, "groups must divide channels");
        let gamma = layout.push(format!("{name}.gamma"), &[channels]);
        let beta = layout.push(format!("{name}.beta"), &[channels]);
        GroupNorm {
            gamma,
            beta,
            channels,
            groups,
            eps,
        }
    }

    pub fn init<T: Real>(&self, layout: &ParamLayout, params: &mut [T]) {
        layout.get_mut(params, self.gamma).fill(T::one());
        layout.get_mut(params, self.beta).fill(T::zero());
    }

    pub fn forward<T: Real>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        x: &[T],
        n: usize,
        out: &mut [T],
        cache: &mut NormCache<T>,
    ) {
        let per = self.channels / self.groups;
        let gsize = per * n;
        cache.xhat.resize(self.channels * n, T::zero());
        cache.inv_std.resize(self.groups, T::zero());
        let gamma = layout.get(params, self.gamma);
        let beta = layout.get(params, self.beta);
        for g in 0..self.groups {
            let span = g * gsize..(g + 1) * gsize;
            let xs = &x[span.clone()];
            let mean = xs.iter().map(|v| v.f64()).sum::<f64>() / gsize as f64;
            let var = xs
                .iter()
                .map(|v| {
                    let d = v.f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / gsize as f64;
            let inv = 1.0 / (var + self.eps).sqrt();
            cache.inv_std[g] = T::of(inv);
            let (mean_t, inv_t) = (T::of(mean), T::of(inv));
            for c in g * per..(g + 1) * per {
                let row = c * n..(c + 1) * n;
                for ((xh, o), &v) in cache.xhat[row.clone()]
                    .iter_mut()
                    .zip(&mut out[row.clone()])
                    .zip(&x[row])
                {
                    *xh = (v - mean_t) * inv_t;
                    *o = *xh * gamma[c] + beta[c];
                }
            }
        }
    }

    /// Accumulates γ/β gradients and the input gradient into `dx`.
    pub fn backward<T: Real>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        grads: &mut [T],
        cache: &NormCache<T>,
        dout: &[T],
        n: usize,
        dx: &mut [T],
    ) {
        let per = self.channels / self.groups;
        let m = T::of((per * n) as f64);
        let gamma = layout.get(params, self.gamma).to_vec();
        {
            let mut dgamma = vec![T::zero(); self.channels];
            let mut dbeta = vec![T::zero(); self.channels];
            for c in 0..self.channels {
                let row = c * n..(c + 1) * n;
                for (&g, &xh) in dout[row.clone()].iter().zip(&cache.xhat[row]) {
                    dgamma[c] += g * xh;
                    dbeta[c] += g;
                }
            }
            for (a, b) in layout.get_mut(grads, self.gamma).iter_mut().zip(&dgamma) {
                *a += *b;
            }
            for (a, b) in layout.get_mut(grads, self.beta).iter_mut().zip(&dbeta) {
                *a += *b;
            }
        }
        for g in 0..self.groups {
            // dx = inv/M · (M·dxh − Σdxh − xh·Σ(dxh·xh)), dxh = dy·γ
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for c in g * per..(g + 1) * per {
                let row = c * n..(c + 1) * n;
                for (&dy, &xh) in dout[row.clone()].iter().zip(&cache.xhat[row]) {
                    let d = dy * gamma[c];
                    sum_d += d;
                    sum_dx += d * xh;
                }
            }
            let scale = cache.inv_std[g] / m;
            for c in g * per..(g + 1) * per {
                let row = c * n..(c + 1) * n;
                for ((o, &dy), &xh) in dx[row.clone()]
                    .iter_mut()
                    .zip(&dout[row.clone()])
                    .zip(&cache.xhat[row])
                {
                    *o += scale * (m * dy * gamma[c] - sum_d - xh * sum_dx);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_each_group_and_backward_matches_fd() {
        let (channels, groups, n) = (4, 2, 6);
        let mut layout = ParamLayout::new();
        let gn = GroupNorm::new(&mut layout, "gn", channels, groups, 1e-5);
        let mut params: Vec<f64> = (0..layout.len()).map(|i| 0.5 + (i as f64 * 0.3).sin()).collect();
        let x: Vec<f64> = (0..channels * n).map(|i| (i as f64 * 0.77).sin() * 3.0 + 1.0).collect();
        let probe: Vec<f64> = (0..channels * n).map(|i| (i as f64 * 0.19).cos()).collect();

        let mut unit = params.clone();
        gn.init(&layout, &mut unit);
        let mut out = vec![0.0; x.len()];
        let mut cache = NormCache::default();
        gn.forward(&layout, &unit, &x, n, &mut out, &mut cache);
        for g in 0..groups {
            let s = &out[g * 2 * n..(g + 1) * 2 * n];
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }

        let loss = |p: &[f64], xs: &[f64]| {
            let mut o = vec![0.0; xs.len()];
            let mut c = NormCache::default();
            gn.forward(&layout, p, xs, n, &mut o, &mut c);
            o.iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        gn.forward(&layout, &params, &x, n, &mut out, &mut cache);
        let mut grads = vec![0.0; layout.len()];
        let mut dx = vec![0.0; x.len()];
        gn.backward(&layout, &params, &mut grads, &cache, &probe, n, &mut dx);
        let h = 1e-6;
        for i in 0..params.len() {
            let o = params[i];
            params[i] = o + h;
            let lp = loss(&params, &x);
            params[i] = o - h;
            let lm = loss(&params, &x);
            params[i] = o;
            assert!(((lp - lm) / (2.0 * h) - grads[i]).abs() < 1e-6);
        }
        let mut xs = x.clone();
        for i in 0..xs.len() {
            let o = xs[i];
            xs[i] = o + h;
            let lp = loss(&params, &xs);
            xs[i] = o - h;
            let lm = loss(&params, &xs);
            xs[i] = o;
            assert!(((lp - lm) / (2.0 * h) - dx[i]).abs() < 1e-6);
        }
    }
}
