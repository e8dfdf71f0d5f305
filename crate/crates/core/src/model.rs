//! The full reconstruction network: encoder + positional encoding + field,
//! plus per-item data preparation and the end-to-end loss and gradient.

use ndarray::{Array2, Array3};
use num_complex::{Complex, Complex64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ifft_coils, phase_of, sos_unchecked, KSpaceVolume};
use crate::encoder::{Encoder, EncoderCache, EncoderConfig, FeatureMap};
use crate::error::{Error, Result};
use crate::field::{make_grid, Field, FieldCache, FieldConfig, PositionalEncoder};
use crate::nn::ParamLayout;
use crate::real::Real;
use crate::render::{image_l1_loss_grad, Renderer};
use crate::sampling::{apply_mask, SamplingMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the maximum of the zero-filled SoS image of each item.
    #[default]
    ZeroFilledMax,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub coils: usize,
    pub encoder_channels: usize,
    pub encoder_blocks: usize,
    pub kernel: usize,
    pub groups: usize,
    pub feature_dim: usize,
    pub pe_features: usize,
    pub pe_sigma: f64,
    pub hidden: usize,
    pub positional_encoding: bool,
    pub scale_embedding: bool,
    pub phase_prediction: bool,
}

impl ModelConfig {
    /// 64-channel encoder, d = 128, L = 128, 256 hidden units.
    pub fn full_size(coils: usize) -> Self {
        ModelConfig {
            coils,
            encoder_channels: 64,
            encoder_blocks: 5,
            kernel: 5,
            groups: 8,
            feature_dim: 128,
            pe_features: 128,
            pe_sigma: 1.0,
            hidden: 256,
            positional_encoding: true,
            scale_embedding: true,
            phase_prediction: true,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            in_channels: self.coils,
            channels: self.encoder_channels,
            feature_dim: self.feature_dim,
            blocks: self.encoder_blocks,
            kernel: self.kernel,
            groups: self.groups,
            eps: 1e-5,
            scale_embedding: self.scale_embedding,
        }
    }

    /// Width of the position input to the field.
    pub fn position_dim(&self) -> usize {
        if self.positional_encoding {
            2 * self.pe_features
        } else {
            2
        }
    }

    pub fn field_config(&self) -> FieldConfig {
        FieldConfig {
            position_dim: self.position_dim(),
            feature_dim: self.feature_dim,
            hidden: self.hidden,
            coils: self.coils,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coils == 0 {
            return Err(Error::validation("coils", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::validation("hidden", "must be positive"));
        }
        if self.pe_features == 0 {
            return Err(Error::validation("pe_features", "must be positive"));
        }
        if !(self.pe_sigma > 0.0 && self.pe_sigma.is_finite()) {
            return Err(Error::validation("pe_sigma", "must be positive and finite"));
        }
        self.encoder_config().validate()
    }
}

/// One training or inference item: network inputs and (normalized) targets.
#[derive(Debug, Clone)]
pub struct Prepared<T: Real> {
    pub h: usize,
    pub w: usize,
    pub coils: usize,
    pub scale: usize,
    /// Zero-filled coil magnitudes divided by `norm`, `[c, h·w]`.
    pub input: Vec<T>,
    /// Zero-filled coil phases in radians, `[c, h·w]`.
    pub phase_u: Vec<T>,
    /// Fully-sampled k-space divided by `norm`.
    pub target_k: Vec<Complex<T>>,
    /// Fully-sampled coil magnitudes divided by `norm`.
    pub target_mag: Vec<T>,
    pub norm: f64,
}

/// Normalization constant for a zero-filled coil stack.
pub fn normalization_constant(zero_filled: &Array3<Complex64>, mode: Normalization) -> f64 {
    match mode {
        Normalization::None => 1.0,
        Normalization::ZeroFilledMax => {
            let mags = zero_filled.mapv(|z| z.norm());
            let peak = sos_unchecked(mags.view()).iter().copied().fold(0.0, f64::max);
            if peak > 0.0 {
                peak
            } else {
                1.0
            }
        }
    }
}

/// Inputs derived from undersampled k-space only.
pub fn prepare_input<T: Real>(k_under: &KSpaceVolume, mode: Normalization) -> (Vec<T>, Vec<T>, f64) {
    let zf = ifft_coils(k_under.data());
    let norm = normalization_constant(&zf, mode);
    let input = zf.iter().map(|z| T::of(z.norm() / norm)).collect();
    let phase_u = zf.iter().map(|&z| T::of(phase_of(z))).collect();
    (input, phase_u, norm)
}

impl<T: Real> Prepared<T> {
    /// Undersamples the fully-sampled `kspace` with `mask` and normalizes.
    pub fn new(kspace: &KSpaceVolume, mask: &SamplingMask, mode: Normalization) -> Result<Self> {
        let (c, h, w) = kspace.dim();
        let under = apply_mask(kspace, mask)?;
        let (input, phase_u, norm) = prepare_input(&under, mode);
        let target_k = kspace
            .data()
            .iter()
            .map(|z| Complex::new(T::of(z.re / norm), T::of(z.im / norm)))
            .collect();
        let target_mag = ifft_coils(kspace.data())
            .iter()
            .map(|z| T::of(z.norm() / norm))
            .collect();
        Ok(Prepared {
            h,
            w,
            coils: c,
            scale: mask.scale(),
            input,
            phase_u,
            target_k,
            target_mag,
            norm,
        })
    }
}

/// Per-image-size buffers reused across forward/backward calls.
pub struct Workspace<T: Real> {
    h: usize,
    w: usize,
    pos: Vec<T>,
    renderer: Renderer<T>,
    encoder: EncoderCache<T>,
    field: FieldCache<T>,
}

impl<T: Real> Workspace<T> {
    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }
}

/// Network outputs for one item, channel-major `[c, h·w]`.
#[derive(Debug, Clone)]
pub struct Prediction<T> {
    pub intensities: Vec<T>,
    pub phases: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct InrModel<T: Real> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub encoder: Encoder,
    pub field: Field,
    pub pe: PositionalEncoder,
    pub params: Vec<T>,
}

impl<T: Real> InrModel<T> {
    /// Builds the architecture and draws `B` and the initial parameters from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pe = PositionalEncoder::sample(config.pe_features, config.pe_sigma, &mut rng)?;
        let mut model = Self::zeroed(config, pe)?;
        model.encoder.init(&model.layout, &mut model.params, &mut rng);
        model.field.init(&model.layout, &mut model.params, &mut rng);
        Ok(model)
    }

    /// Architecture with all parameters zero.
    pub fn zeroed(config: ModelConfig, pe: PositionalEncoder) -> Result<Self> {
        config.validate()?;
        if pe.features() != config.pe_features {
            return Err(Error::shape(format!(
                "B has {} rows, configuration expects {}",
                pe.features(),
                config.pe_features
            )));
        }
        let mut layout = ParamLayout::new();
        let encoder = Encoder::new(&mut layout, config.encoder_config());
        let field = Field::new(&mut layout, config.field_config());
        let params = vec![T::zero(); layout.len()];
        Ok(InrModel {
            config,
            layout,
            encoder,
            field,
            pe,
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    pub fn workspace(&self, h: usize, w: usize) -> Result<Workspace<T>> {
        let grid = make_grid(h, w)?;
        let pos = if self.config.positional_encoding {
            self.pe.encode_grid(&grid)
        } else {
            grid.channel_major()
        };
        Ok(Workspace {
            h,
            w,
            pos,
            renderer: Renderer::new(h, w),
            encoder: EncoderCache::default(),
            field: FieldCache::default(),
        })
    }

    fn check_item(&self, ws: &Workspace<T>, coils: usize, h: usize, w: usize) -> Result<()> {
        if coils != self.config.coils {
            return Err(Error::validation(
                "coils",
                format!("model expects {} coils, data has {coils}", self.config.coils),
            ));
        }
        if ws.shape() != (h, w) {
            return Err(Error::shape(format!(
                "workspace is {:?}, item is {:?}",
                ws.shape(),
                (h, w)
            )));
        }
        Ok(())
    }

    /// Forward pass with explicit parameters (used by gradient checks).
    pub fn forward_with(
        &self,
        params: &[T],
        ws: &mut Workspace<T>,
        input: &[T],
        phase_u: &[T],
        scale: usize,
    ) -> (Vec<T>, Prediction<T>) {
        let (h, w) = ws.shape();
        let n = h * w;
        let feats = self
            .encoder
            .forward(&self.layout, params, input, h, w, scale, &mut ws.encoder);
        let intensities = self
            .field
            .forward(&self.layout, params, &ws.pos, &feats, n, &mut ws.field);
        let phases = self
            .config
            .phase_prediction
            .then(|| self.field.phase_forward_batch(&self.layout, params, phase_u, &ws.field));
        (feats, Prediction { intensities, phases })
    }

    pub fn predict(&self, ws: &mut Workspace<T>, input: &[T], phase_u: &[T], scale: usize) -> Prediction<T> {
        self.forward_with(&self.params, ws, input, phase_u, scale).1
    }

    /// Training loss of one item with explicit parameters.
    pub fn loss_with(&self, params: &[T], ws: &mut Workspace<T>, item: &Prepared<T>) -> Result<f64> {
        self.check_item(ws, item.coils, item.h, item.w)?;
        let (_, pred) = self.forward_with(params, ws, &item.input, &item.phase_u, item.scale);
        Ok(match &pred.phases {
            Some(ph) => ws.renderer.kspace_loss(&pred.intensities, Some(ph), &item.target_k),
            None => {
                let mut scratch = vec![T::zero(); pred.intensities.len()];
                image_l1_loss_grad(&pred.intensities, &item.target_mag, &mut scratch)
            }
        })
    }

    /// Loss of one item; accumulates its parameter gradient into `grads`.
    pub fn loss_and_grad(
        &self,
        params: &[T],
        ws: &mut Workspace<T>,
        item: &Prepared<T>,
        grads: &mut [T],
    ) -> Result<f64> {
        self.check_item(ws, item.coils, item.h, item.w)?;
        let (h, w) = ws.shape();
        let n = h * w;
        let (feats, pred) = self.forward_with(params, ws, &item.input, &item.phase_u, item.scale);
        let len = pred.intensities.len();
        let mut d_int = vec![T::zero(); len];
        let mut d_phase = vec![T::zero(); len];
        let loss = match &pred.phases {
            Some(ph) => ws.renderer.kspace_loss_grad(
                &pred.intensities,
                ph,
                &item.target_k,
                &mut d_int,
                &mut d_phase,
            ),
            None => image_l1_loss_grad(&pred.intensities, &item.target_mag, &mut d_int),
        };
        let mut dfeats = vec![T::zero(); self.config.feature_dim * n];
        let phase = pred.phases.as_ref().map(|_| (item.phase_u.as_slice(), d_phase.as_slice()));
        self.field.backward(
            &self.layout,
            params,
            grads,
            &ws.pos,
            &feats,
            &ws.field,
            &d_int,
            phase,
            &mut dfeats,
        );
        self.encoder.backward(
            &self.layout,
            params,
            grads,
            &item.input,
            h,
            w,
            item.scale,
            &dfeats,
            &mut ws.encoder,
        );
        Ok(loss)
    }

    /// Encoder features of one item as an `[h, w, d]` map.
    pub fn features(&self, ws: &mut Workspace<T>, input: &[T], scale: usize) -> Result<FeatureMap> {
        let (h, w) = ws.shape();
        let f = self
            .encoder
            .forward(&self.layout, &self.params, input, h, w, scale, &mut ws.encoder);
        FeatureMap::from_channel_major(&f, self.config.feature_dim, h, w)
    }

    /// SoS image of the predicted coil intensities, un-normalized by `norm`.
    pub fn reconstruct_prepared(
        &self,
        ws: &mut Workspace<T>,
        input: &[T],
        scale: usize,
        norm: f64,
    ) -> Array2<f64> {
        let (h, w) = ws.shape();
        let c = self.config.coils;
        let n = h * w;
        let feats = self
            .encoder
            .forward(&self.layout, &self.params, input, h, w, scale, &mut ws.encoder);
        let intens = self
            .field
            .forward(&self.layout, &self.params, &ws.pos, &feats, n, &mut ws.field);
        let mut out = Array2::zeros((h, w));
        for (idx, o) in out.iter_mut().enumerate() {
            let s: f64 = (0..c).map(|k| intens[k * n + idx].f64().powi(2)).sum();
            *o = s.sqrt() * norm;
        }
        out
    }

    /// Parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> InrModel<U> {
        InrModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            encoder: self.encoder.clone(),
            field: self.field.clone(),
            pe: self.pe.clone(),
            params: self.params.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::simulate_records;
    use crate::sampling::make_equispaced_mask;

    fn toy_config() -> ModelConfig {
        ModelConfig {
            coils: 2,
            encoder_channels: 4,
            encoder_blocks: 2,
            kernel: 3,
            groups: 2,
            feature_dim: 4,
            pe_features: 3,
            pe_sigma: 1.0,
            hidden: 6,
            positional_encoding: true,
            scale_embedding: true,
            phase_prediction: true,
        }
    }

    #[test]
    fn full_size_widths() {
        let model = InrModel::<f32>::zeroed(
            ModelConfig::full_size(16),
            PositionalEncoder::from_matrix(vec![0.0; 256], 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(model.field.input_widths(), vec![384, 256, 256, 640, 256, 256, 640, 256]);
        assert_eq!(model.field.phase_input_width(), 272);
    }

    #[test]
    fn raw_coordinates_without_positional_encoding() {
        let mut cfg = toy_config();
        cfg.positional_encoding = false;
        let model = InrModel::<f64>::new(cfg, 0).unwrap();
        assert_eq!(model.field.input_widths()[0], 2 + 4);
    }

    #[test]
    fn gradient_matches_finite_differences_both_loss_paths() {
        let rec = &simulate_records(1, 8, 8, 2, 0.01, 4).unwrap()[0];
        let mask = make_equispaced_mask(8, 2, 0.25).unwrap();
        let item = Prepared::<f64>::new(&rec.kspace, &mask, Normalization::ZeroFilledMax).unwrap();
        for phase_prediction in [true, false] {
            let mut cfg = toy_config();
            cfg.phase_prediction = phase_prediction;
            let mut model = InrModel::<f64>::new(cfg, 1).unwrap();
            let slot = model.layout.slot(model.field.phase.weight).clone();
            for (i, v) in model.params[slot.offset..slot.offset + slot.len].iter_mut().enumerate() {
                *v = 0.05 * (i as f64 - 3.0);
            }
            let mut ws = model.workspace(8, 8).unwrap();
            let mut grads = vec![0.0; model.param_count()];
            let params = model.params.clone();
            model.loss_and_grad(&params, &mut ws, &item, &mut grads).unwrap();
            let mut p = params.clone();
            let step = 1e-6;
            let mut checked = 0;
            for idx in (0..p.len()).step_by(11) {
                let orig = p[idx];
                p[idx] = orig + step;
                let up = model.loss_with(&p, &mut ws, &item).unwrap();
                p[idx] = orig - step;
                let down = model.loss_with(&p, &mut ws, &item).unwrap();
                p[idx] = orig;
                let fd = (up - down) / (2.0 * step);
                let err = (fd - grads[idx]).abs() / fd.abs().max(grads[idx].abs()).max(1e-6);
                assert!(err < 1e-3, "param {idx} ({phase_prediction}): fd {fd} vs {}", grads[idx]);
                checked += 1;
            }
            assert!(checked > 10);
            model.params = params;
        }
    }

    #[test]
    fn coil_mismatch_is_validation_error() {
        let model = InrModel::<f64>::new(toy_config(), 0).unwrap();
        let rec = &simulate_records(1, 8, 8, 3, 0.0, 4).unwrap()[0];
        let mask = make_equispaced_mask(8, 2, 0.25).unwrap();
        let item = Prepared::<f64>::new(&rec.kspace, &mask, Normalization::ZeroFilledMax).unwrap();
        let mut ws = model.workspace(8, 8).unwrap();
        assert!(matches!(
            model.loss_with(&model.params, &mut ws, &item),
            Err(Error::Validation { field: "coils", .. })
        ));
    }
}
