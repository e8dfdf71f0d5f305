//! Inference, per-scale metric tables and the toggle ablation.

use std::fmt::Write as _;

use log::warn;
use ndarray::{Array2, Array3};

use crate::checkpoint::Checkpoint;
use crate::data::{sos_unchecked, KSpaceVolume};
use crate::dataset::Record;
use crate::error::{Error, Result};
use crate::grappa::{grappa_auto, zero_fill_baseline, KernelSpec};
use crate::metrics::{psnr, ssim};
use crate::model::{prepare_input, InrModel};
use crate::real::Real;
use crate::sampling::{apply_mask, make_equispaced_mask, SamplingMask};
use crate::train::{fit_checkpoint, Precision, TrainConfig};

/// SoS of `[c, h, w]` coil intensities scaled by `norm`; negative
/// intensities contribute through their square.
pub fn sos_reconstruction(intensities: &Array3<f64>, norm: f64) -> Array2<f64> {
    sos_unchecked(intensities.view()).mapv(|v| v * norm)
}

#[derive(Debug, Clone)]
enum AnyModel {
    F32(InrModel<f32>),
    F64(InrModel<f64>),
}

/// Inference wrapper around a checkpoint.
#[derive(Debug, Clone)]
pub struct Reconstructor {
    config: TrainConfig,
    model: AnyModel,
}

fn run<T: Real>(model: &InrModel<T>, config: &TrainConfig, k: &KSpaceVolume, scale: usize) -> Result<Array2<f64>> {
    let (c, h, w) = k.dim();
    if c != model.config.coils {
        return Err(Error::validation(
            "coils",
            format!("checkpoint expects {} coils, data has {c}", model.config.coils),
        ));
    }
    let mut ws = model.workspace(h, w)?;
    let (input, _, norm) = prepare_input::<T>(k, config.normalization);
    Ok(model.reconstruct_prepared(&mut ws, &input, scale, norm))
}

impl Reconstructor {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let model = match ckpt.config.precision {
            Precision::F32 => AnyModel::F32(ckpt.to_model()?),
            Precision::F64 => AnyModel::F64(ckpt.to_model()?),
        };
        Ok(Reconstructor {
            config: ckpt.config.clone(),
            model,
        })
    }

    pub fn trained_scales(&self) -> &[usize] {
        &self.config.scales
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// SoS magnitude image `[h, w]` from undersampled k-space acquired at `scale`.
    pub fn reconstruct(&self, k_undersampled: &KSpaceVolume, scale: usize) -> Result<Array2<f64>> {
        if scale < 1 {
            return Err(Error::validation("scale", "must be at least 1"));
        }
        if !self.config.scales.contains(&scale) {
            warn!(
                "scale {scale} was not among the trained scales {:?}; extrapolating",
                self.config.scales
            );
        }
        match &self.model {
            AnyModel::F32(m) => run(m, &self.config, k_undersampled, scale),
            AnyModel::F64(m) => run(m, &self.config, k_undersampled, scale),
        }
    }
}

/// One-shot inference from a checkpoint.
pub fn reconstruct(ckpt: &Checkpoint, k_undersampled: &KSpaceVolume, scale: usize) -> Result<Array2<f64>> {
    Reconstructor::from_checkpoint(ckpt)?.reconstruct(k_undersampled, scale)
}

/// A reconstruction method evaluated on (record, mask) pairs.
pub trait Method {
    fn name(&self) -> String;
    fn reconstruct(&self, record: &Record, mask: &SamplingMask) -> Result<Array2<f64>>;
}

impl Method for Reconstructor {
    fn name(&self) -> String {
        "inr".into()
    }

    fn reconstruct(&self, record: &Record, mask: &SamplingMask) -> Result<Array2<f64>> {
        let under = apply_mask(&record.kspace, mask)?;
        Reconstructor::reconstruct(self, &under, mask.scale())
    }
}

pub struct ZeroFill;

impl Method for ZeroFill {
    fn name(&self) -> String {
        "zerofill".into()
    }

    fn reconstruct(&self, record: &Record, mask: &SamplingMask) -> Result<Array2<f64>> {
        Ok(zero_fill_baseline(&apply_mask(&record.kspace, mask)?))
    }
}

pub struct Grappa(pub KernelSpec);

impl Method for Grappa {
    fn name(&self) -> String {
        "grappa".into()
    }

    fn reconstruct(&self, record: &Record, mask: &SamplingMask) -> Result<Array2<f64>> {
        grappa_auto(&apply_mask(&record.kspace, mask)?, mask, self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub scale: usize,
    pub mean_ssim: f64,
    pub mean_psnr: f64,
    pub n_records: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricTable {
    /// `(key, value)` pairs echoed as `# key = value` header lines.
    pub header: Vec<(String, String)>,
    pub rows: Vec<MetricRow>,
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

impl MetricTable {
    pub fn row(&self, method: &str, scale: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method && r.scale == scale)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out.push_str("method,scale,mean_ssim,mean_psnr,n_records\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.method,
                r.scale,
                fmt_metric(r.mean_ssim),
                fmt_metric(r.mean_psnr),
                r.n_records
            );
        }
        out
    }
}

/// Per-record SSIM and PSNR against the ground-truth SoS image.
pub fn record_metrics(reference: &Array2<f64>, image: &Array2<f64>) -> Result<(f64, f64)> {
    Ok((ssim(reference, image)?, psnr(reference, image)?))
}

/// Mean SSIM/PSNR per (method, scale) over `records`. A method whose
/// calibration is infeasible for the data yields a NaN row and a warning.
pub fn evaluate(
    methods: &[&dyn Method],
    records: &[Record],
    scales: &[usize],
    acs_fraction: f64,
) -> Result<MetricTable> {
    if records.is_empty() {
        return Err(Error::validation("dataset", "test set is empty"));
    }
    let mut rows = Vec::new();
    for method in methods {
        for &scale in scales {
            let (mut ssim_sum, mut psnr_sum) = (0.0, 0.0);
            let mut failed = None;
            for (i, rec) in records.iter().enumerate() {
                let (_, _, w) = rec.dim();
                let mask = make_equispaced_mask(w, scale, acs_fraction)?;
                match method.reconstruct(rec, &mask) {
                    Ok(img) => {
                        let (s, p) = record_metrics(&rec.sos, &img)?;
                        ssim_sum += s;
                        psnr_sum += p;
                    }
                    Err(e @ Error::Calibration { .. }) => {
                        failed = Some((i, e));
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            let n = records.len() as f64;
            let (mean_ssim, mean_psnr) = match failed {
                Some((i, e)) => {
                    warn!("{} at scale {scale} unavailable (record {i}): {e}", method.name());
                    (f64::NAN, f64::NAN)
                }
                None => (ssim_sum / n, psnr_sum / n),
            };
            rows.push(MetricRow {
                method: method.name(),
                scale,
                mean_ssim,
                mean_psnr,
                n_records: records.len(),
            });
        }
    }
    Ok(MetricTable {
        header: Vec::new(),
        rows,
    })
}

/// Published SSIM / PSNR of each arm on brain data at s = 4, 5, 6, shown for context.
pub const REFERENCE_BRAIN: [(&str, [(f64, f64); 3]); 5] = [
    ("none", [(0.9707, 41.5927), (0.9726, 41.9174), (0.9631, 39.9647)]),
    ("pe", [(0.9722, 42.0947), (0.9741, 42.5105), (0.9652, 40.5191)]),
    ("se", [(0.9715, 41.6752), (0.9736, 41.9687), (0.9639, 39.9786)]),
    ("pp", [(0.9745, 42.8396), (0.9768, 43.3088), (0.9674, 41.0928)]),
    ("all", [(0.9761, 43.2289), (0.9779, 43.5963), (0.9690, 41.4567)]),
];

#[derive(Debug, Clone)]
pub struct AblationArm {
    pub name: &'static str,
    pub config: TrainConfig,
}

/// The five toggle arms: none, each single module, and all three.
pub fn ablation_arms(base: &TrainConfig) -> Vec<AblationArm> {
    let arm = |name, pe, se, pp| AblationArm {
        name,
        config: TrainConfig {
            positional_encoding: pe,
            scale_embedding: se,
            phase_prediction: pp,
            ..base.clone()
        },
    };
    vec![
        arm("none", false, false, false),
        arm("pe", true, false, false),
        arm("se", false, true, false),
        arm("pp", false, false, true),
        arm("all", true, true, true),
    ]
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub arm: String,
    pub config: TrainConfig,
    /// `(mean SSIM, mean PSNR)` per scale.
    pub metrics: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub scales: Vec<usize>,
    pub rows: Vec<AblationRow>,
}

fn mark(b: bool) -> &'static str {
    if b {
        "x"
    } else {
        "-"
    }
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,positional_encoding,scale_embedding,phase_prediction");
        for s in &self.scales {
            let _ = write!(out, ",ssim_s{s},psnr_s{s}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{}",
                r.arm, r.config.positional_encoding, r.config.scale_embedding, r.config.phase_prediction
            );
            for (s, p) in &r.metrics {
                let _ = write!(out, ",{},{}", fmt_metric(*s), fmt_metric(*p));
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text table with the published brain values as context.
    pub fn to_text(&self) -> String {
        let mut out = String::from("arm   PE SE PP");
        for s in &self.scales {
            let _ = write!(out, " | s={s:<2} SSIM / PSNR    ");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{:<5} {:>2} {:>2} {:>2}",
                r.arm,
                mark(r.config.positional_encoding),
                mark(r.config.scale_embedding),
                mark(r.config.phase_prediction)
            );
            for (s, p) in &r.metrics {
                let _ = write!(out, " | {s:.4} / {p:>8.4}    ");
            }
            out.push('\n');
        }
        out.push_str("\nreference (brain, s = 4 / 5 / 6; context only):\n");
        for (arm, vals) in REFERENCE_BRAIN {
            let _ = write!(out, "{arm:<5}");
            for (s, p) in vals {
                let _ = write!(out, " | {s:.4} / {p:.4}");
            }
            out.push('\n');
        }
        out
    }
}

/// Trains and evaluates every arm on identical data and seeds.
pub fn ablation_report(train: &[Record], test: &[Record], base: &TrainConfig) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for arm in ablation_arms(base) {
        log::info!("ablation arm {}", arm.name);
        let (ckpt, _) = fit_checkpoint(train, &arm.config)?;
        let recon = Reconstructor::from_checkpoint(&ckpt)?;
        let table = evaluate(&[&recon], test, &base.scales, base.acs_fraction)?;
        let metrics = table.rows.iter().map(|r| (r.mean_ssim, r.mean_psnr)).collect();
        rows.push(AblationRow {
            arm: arm.name.to_string(),
            config: ckpt.config,
            metrics,
        });
    }
    Ok(AblationReport {
        scales: base.scales.clone(),
        rows,
    })
}
