//! Generalized implicit-neural-representation reconstruction of undersampled
//! multi-coil MRI k-space, with GRAPPA and zero-filled baselines.

pub mod checkpoint;
mod container;
pub mod data;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fft;
pub mod grappa;
pub mod field;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod real;
pub mod render;
pub mod sampling;
pub mod train;

pub use data::{
    fft_coils, generate_phantom, ifft_coils, simulate_acquisition, sos_combine, CoilImageStack,
    CoilSensitivities, Ellipse, KSpaceVolume, PhantomSpec,
};
pub use dataset::{load_dataset, save_dataset, simulate_records, Record};
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use eval::{
    ablation_arms, ablation_report, evaluate, reconstruct, AblationReport, Grappa, Method,
    MetricRow, MetricTable, Reconstructor, ZeroFill,
};
pub use grappa::{grappa_auto, grappa_calibrate, grappa_fill, zero_fill_baseline, KernelSpec};
pub use model::{InrModel, ModelConfig, Normalization};
pub use metrics::{psnr, ssim};
pub use real::Real;
pub use train::{fit, fit_checkpoint, Precision, TrainConfig};
pub use sampling::{apply_mask, degrade, make_equispaced_mask, zero_filled_images, SamplingMask};
