//! Implicit voxel function: Fourier-feature positional encoding, coordinate
//! grid, the 8-layer skip MLP and the linear phase branch.

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::gemm::MatRef;
use crate::nn::{fill_fan_in_uniform, swish, swish_backward, Linear, ParamLayout};
use crate::real::Real;

/// Frozen random Fourier features `γ(x) = [cos(2πBx), sin(2πBx)]`, `B: [L, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoder {
    b: Vec<f64>,
    sigma: f64,
}

impl PositionalEncoder {
    /// Draws `B` i.i.d. from `N(0, σ²)`.
    pub fn sample<R: Rng>(features: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        if features == 0 {
            return Err(Error::validation("pe_features", "must be positive"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::validation("pe_sigma", "must be positive and finite"));
        }
        let dist = Normal::new(0.0, sigma).expect("validated");
        let b = (0..2 * features).map(|_| dist.sample(rng)).collect();
        Ok(PositionalEncoder { b, sigma })
    }

    pub fn from_matrix(b: Vec<f64>, sigma: f64) -> Result<Self> {
        if b.is_empty() || b.len() % 2 != 0 {
            return Err(Error::shape(format!("B must be [L, 2], got {} entries", b.len())));
        }
        Ok(PositionalEncoder { b, sigma })
    }

    /// `L`.
    pub fn features(&self) -> usize {
        self.b.len() / 2
    }

    pub fn output_dim(&self) -> usize {
        2 * self.features()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Row-major `[L, 2]`.
    pub fn matrix(&self) -> &[f64] {
        &self.b
    }

    fn fill(&self, x: [f64; 2], out: &mut [f64]) {
        let l = self.features();
        for (k, row) in self.b.chunks_exact(2).enumerate() {
            let arg = 2.0 * std::f64::consts::PI * (row[0] * x[0] + row[1] * x[1]);
            out[k] = arg.cos();
            out[l + k] = arg.sin();
        }
    }

    /// First `L` entries cosines, last `L` sines.
    pub fn encode_position(&self, x: [f64; 2]) -> Result<Vec<f64>> {
        if x.iter().any(|v| !(v.abs() <= 1.0)) {
            return Err(Error::validation("x", format!("{x:?} lies outside [-1, 1]²")));
        }
        let mut out = vec![0.0; self.output_dim()];
        self.fill(x, &mut out);
        Ok(out)
    }

    /// Channel-major `[2L, h·w]` encoding of every grid point.
    pub fn encode_grid<T: Real>(&self, grid: &CoordinateGrid) -> Vec<T> {
        let (h, w) = grid.dim();
        let n = h * w;
        let dim = self.output_dim();
        let mut out = vec![T::zero(); dim * n];
        let mut buf = vec![0.0; dim];
        for i in 0..h {
            for j in 0..w {
                self.fill(grid.at(i, j), &mut buf);
                for (k, &v) in buf.iter().enumerate() {
                    out[k * n + i * w + j] = T::of(v);
                }
            }
        }
        out
    }
}

/// Normalized voxel coordinates `[h, w, 2]`, `(row, column)` in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateGrid {
    coords: Array3<f64>,
}

fn axis_coord(i: usize, len: usize) -> f64 {
    if i + 1 == len {
        1.0
    } else {
        -1.0 + 2.0 * i as f64 / (len - 1) as f64
    }
}

pub fn make_grid(h: usize, w: usize) -> Result<CoordinateGrid> {
    if h < 2 {
        return Err(Error::validation("h", "must be at least 2"));
    }
    if w < 2 {
        return Err(Error::validation("w", "must be at least 2"));
    }
    let coords = Array3::from_shape_fn((h, w, 2), |(i, j, k)| {
        if k == 0 {
            axis_coord(i, h)
        } else {
            axis_coord(j, w)
        }
    });
    Ok(CoordinateGrid { coords })
}

impl CoordinateGrid {
    pub fn dim(&self) -> (usize, usize) {
        let (h, w, _) = self.coords.dim();
        (h, w)
    }

    pub fn coords(&self) -> &Array3<f64> {
        &self.coords
    }

    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        [self.coords[[i, j, 0]], self.coords[[i, j, 1]]]
    }

    /// Channel-major `[2, h·w]` raw coordinates.
    pub fn channel_major<T: Real>(&self) -> Vec<T> {
        let (h, w) = self.dim();
        let n = h * w;
        let mut out = vec![T::zero(); 2 * n];
        for i in 0..h {
            for j in 0..w {
                let [a, b] = self.at(i, j);
                out[i * w + j] = T::of(a);
                out[n + i * w + j] = T::of(b);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Width of the position input: `2L` with positional encoding, 2 without.
    pub position_dim: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub coils: usize,
}

const TRUNK_LAYERS: usize = 8;
/// 0-based indices of the layers that also receive the network input.
const SKIP_LAYERS: [usize; 2] = [3, 6];

/// Eight-layer MLP trunk plus linear phase layer.
#[derive(Debug, Clone)]
pub struct Field {
    pub config: FieldConfig,
    pub layers: Vec<Linear>,
    pub phase: Linear,
}

/// Pre-activations and activations of trunk layers 1–7.
#[derive(Debug, Clone, Default)]
pub struct FieldCache<T> {
    pre: Vec<Vec<T>>,
    act: Vec<Vec<T>>,
    n: usize,
}

impl<T: Real> FieldCache<T> {
    /// Input of the last trunk layer, channel-major `[hidden, n]`.
    pub fn trunk_features(&self) -> &[T] {
        &self.act[TRUNK_LAYERS - 2]
    }
}

impl Field {
    pub fn new(layout: &mut ParamLayout, config: FieldConfig) -> Self {
        let widths = Self::input_widths_for(&config);
        let layers = widths
            .iter()
            .enumerate()
            .map(|(i, &fan_in)| {
                let fan_out = if i + 1 == TRUNK_LAYERS { config.coils } else { config.hidden };
                Linear::new(layout, &format!("field.layer{}", i + 1), fan_in, fan_out)
            })
            .collect();
        let phase = Linear::new(layout, "field.phase", config.coils + config.hidden, config.coils);
        Field { config, layers, phase }
    }

    fn input_widths_for(c: &FieldConfig) -> Vec<usize> {
        let input = c.position_dim + c.feature_dim;
        (0..TRUNK_LAYERS)
            .map(|i| match i {
                0 => input,
                i if SKIP_LAYERS.contains(&i) => input + c.hidden,
                _ => c.hidden,
            })
            .collect()
    }

    pub fn input_widths(&self) -> Vec<usize> {
        Self::input_widths_for(&self.config)
    }

    pub fn phase_input_width(&self) -> usize {
        self.phase.fan_in
    }

    pub fn init<T: Real, R: Rng>(&self, layout: &ParamLayout, params: &mut [T], rng: &mut R) {
        for l in &self.layers {
            fill_fan_in_uniform(layout.get_mut(params, l.weight), l.fan_in, rng);
            fill_fan_in_uniform(layout.get_mut(params, l.bias), l.fan_in, rng);
        }
        layout.get_mut(params, self.phase.weight).fill(T::zero());
        layout.get_mut(params, self.phase.bias).fill(T::zero());
    }

    /// Batched trunk: `pos: [position_dim, n]`, `feats: [feature_dim, n]`
    /// → intensities `[coils, n]`.
    pub fn forward<T: Real>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        pos: &[T],
        feats: &[T],
        n: usize,
        cache: &mut FieldCache<T>,
    ) -> Vec<T> {
        let cfg = &self.config;
        let hd = cfg.hidden;
        cache.n = n;
        cache.pre.resize(TRUNK_LAYERS - 1, Vec::new());
        cache.act.resize(TRUNK_LAYERS - 1, Vec::new());
        let pos_m = MatRef::new(pos, cfg.position_dim, n);
        let feat_m = MatRef::new(feats, cfg.feature_dim, n);
        for i in 0..TRUNK_LAYERS - 1 {
            let mut z = std::mem::take(&mut cache.pre[i]);
            z.resize(hd * n, T::zero());
            {
                let prev = (i > 0).then(|| MatRef::new(&cache.act[i - 1], hd, n));
                let parts: Vec<MatRef<'_, T>> = match (i, prev) {
                    (0, _) => vec![pos_m, feat_m],
                    (_, Some(p)) if SKIP_LAYERS.contains(&i) => vec![pos_m, feat_m, p],
                    (_, Some(p)) => vec![p],
                    _ => unreachable!(),
                };
                self.layers[i].forward(layout, params, &parts, n, &mut z);
            }
            let mut a = std::mem::take(&mut cache.act[i]);
            a.resize(hd * n, T::zero());
            for (o, &v) in a.iter_mut().zip(&z) {
                *o = swish(v);
            }
            cache.pre[i] = z;
            cache.act[i] = a;
        }
        let mut out = vec![T::zero(); cfg.coils * n];
        let last = MatRef::new(cache.trunk_features(), hd, n);
        self.layers[TRUNK_LAYERS - 1].forward(layout, params, &[last], n, &mut out);
        out
    }

    /// Batched phase branch on `[phase_u, trunk_features]` → `[coils, n]`.
    pub fn phase_forward_batch<T: Real>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        phase_u: &[T],
        cache: &FieldCache<T>,
    ) -> Vec<T> {
        let n = cache.n;
        let c = self.config.coils;
        let mut out = vec![T::zero(); c * n];
        let parts = [
            MatRef::new(phase_u, c, n),
            MatRef::new(cache.trunk_features(), self.config.hidden, n),
        ];
        self.phase.forward(layout, params, &parts, n, &mut out);
        out
    }

    /// Accumulates parameter gradients and `dfeats: [feature_dim, n]` given
    /// upstream gradients of the intensities and (optionally) of the phases.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        grads: &mut [T],
        pos: &[T],
        feats: &[T],
        cache: &FieldCache<T>,
        d_intensity: &[T],
        phase: Option<(&[T], &[T])>,
        dfeats: &mut [T],
    ) {
        let cfg = &self.config;
        let (n, hd, c) = (cache.n, cfg.hidden, cfg.coils);
        let pos_m = MatRef::new(pos, cfg.position_dim, n);
        let feat_m = MatRef::new(feats, cfg.feature_dim, n);
        let mut dh = vec![T::zero(); hd * n];
        let h7 = MatRef::new(cache.trunk_features(), hd, n);
        self.layers[TRUNK_LAYERS - 1].backward(
            layout,
            params,
            grads,
            &[h7],
            d_intensity,
            n,
            &mut [Some(&mut dh)],
        );
        if let Some((phase_u, d_phase)) = phase {
            self.phase.backward(
                layout,
                params,
                grads,
                &[MatRef::new(phase_u, c, n), h7],
                d_phase,
                n,
                &mut [None, Some(&mut dh)],
            );
        }
        let mut dz = vec![T::zero(); hd * n];
        for i in (0..TRUNK_LAYERS - 1).rev() {
            dz.fill(T::zero());
            swish_backward(&cache.pre[i], &dh, &mut dz);
            dh.fill(T::zero());
            let layer = &self.layers[i];
            if i == 0 {
                layer.backward(layout, params, grads, &[pos_m, feat_m], &dz, n, &mut [None, Some(&mut *dfeats)]);
            } else {
                let prev = MatRef::new(&cache.act[i - 1], hd, n);
                if SKIP_LAYERS.contains(&i) {
                    layer.backward(
                        layout,
                        params,
                        grads,
                        &[pos_m, feat_m, prev],
                        &dz,
                        n,
                        &mut [None, Some(&mut *dfeats), Some(&mut dh)],
                    );
                } else {
                    layer.backward(layout, params, grads, &[prev], &dz, n, &mut [Some(&mut dh)]);
                }
            }
        }
    }

    /// Single-voxel trunk: returns `(intensities [c], trunk_features [hidden])`.
    pub fn trunk_forward<T: Real>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        gamma_x: &[T],
        v_x: &[T],
    ) -> Result<(Vec<T>, Vec<T>)> {
        if gamma_x.len() != self.config.position_dim {
            return Err(Error::shape(format!(
                "position encoding has {} entries, expected {}",
                gamma_x.len(),
                self.config.position_dim
            )));
        }
        if v_x.len() != self.config.feature_dim {
            return Err(Error::shape(format!(
                "feature vector has {} entries, expected {}",
                v_x.len(),
                self.config.feature_dim
            )));
        }
        let mut cache = FieldCache::default();
        let out = self.forward(layout, params, gamma_x, v_x, 1, &mut cache);
        Ok((out, cache.trunk_features().to_vec()))
    }

    /// Single-voxel phase branch.
    pub fn phase_forward<T: Real>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        phase_u: &[T],
        trunk_features: &[T],
    ) -> Result<Vec<T>> {
        if phase_u.len() != self.config.coils || trunk_features.len() != self.config.hidden {
            return Err(Error::shape(format!(
                "phase branch expects {} + {} inputs, got {} + {}",
                self.config.coils,
                self.config.hidden,
                phase_u.len(),
                trunk_features.len()
            )));
        }
        let mut out = vec![T::zero(); self.config.coils];
        let parts = [
            MatRef::new(phase_u, self.config.coils, 1),
            MatRef::new(trunk_features, self.config.hidden, 1),
        ];
        self.phase.forward(layout, params, &parts, 1, &mut out);
        Ok(out)
    }
}
