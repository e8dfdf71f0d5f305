//! Equispaced undersampling with a centered auto-calibration (ACS) block.
//!
//! Phase-encoding lines run along the width axis: line `j` is the column
//! `k[:, :, j]` of a `[c, h, w]` k-space volume.

use std::ops::Range;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::data::{fft_coils, ifft_coils, CoilImageStack, CoilSensitivities, KSpaceVolume};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingMask {
    lines: Vec<bool>,
    scale: usize,
    acs_fraction: f64,
    acs_range: Range<usize>,
}

/// Number of ACS lines: `acs_fraction·width` rounded half up.
pub fn acs_line_count(width: usize, acs_fraction: f64) -> usize {
    (acs_fraction * width as f64 + 0.5).floor() as usize
}

/// Keeps every `scale`-th line (offset 0) plus a centered block of
/// `round(acs_fraction·width)` lines.
pub fn make_equispaced_mask(width: usize, scale: usize, acs_fraction: f64) -> Result<SamplingMask> {
    if width < 2 {
        return Err(Error::validation("width", "must be at least 2"));
    }
    if scale < 1 {
        return Err(Error::validation("scale", "must be at least 1"));
    }
    if !(acs_fraction > 0.0 && acs_fraction < 1.0) {
        return Err(Error::validation("acs_fraction", "must lie in (0, 1)"));
    }
    let n_acs = acs_line_count(width, acs_fraction);
    if n_acs < 1 {
        return Err(Error::validation(
            "acs_fraction",
            format!("{acs_fraction}·{width} rounds to zero ACS lines"),
        ));
    }
    let start = (width - n_acs) / 2;
    let acs_range = start..start + n_acs;
    let lines = (0..width)
        .map(|j| j % scale == 0 || acs_range.contains(&j))
        .collect();
    Ok(SamplingMask {
        lines,
        scale,
        acs_fraction,
        acs_range,
    })
}

impl SamplingMask {
    pub fn width(&self) -> usize {
        self.lines.len()
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn acs_fraction(&self) -> f64 {
        self.acs_fraction
    }

    pub fn acs_range(&self) -> Range<usize> {
        self.acs_range.clone()
    }

    pub fn lines(&self) -> &[bool] {
        &self.lines
    }

    pub fn is_sampled(&self, line: usize) -> bool {
        self.lines[line]
    }

    pub fn selected_count(&self) -> usize {
        self.lines.iter().filter(|&&b| b).count()
    }

    /// Comma-separated 0/1 line selector.
    pub fn to_csv_line(&self) -> String {
        self.lines
            .iter()
            .map(|&b| if b { "1" } else { "0" })
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn mask_in_place(k: &mut Array3<Complex64>, m: &SamplingMask) {
    for (j, mut col) in k.axis_iter_mut(Axis(2)).enumerate() {
        if !m.lines[j] {
            col.fill(Complex64::new(0.0, 0.0));
        }
    }
}

/// Zeroes every unselected phase-encoding line in all coils.
pub fn apply_mask(k: &KSpaceVolume, m: &SamplingMask) -> Result<KSpaceVolume> {
    let (_, _, w) = k.dim();
    if w != m.width() {
        return Err(Error::shape(format!(
            "mask width {} does not match k-space width {w}",
            m.width()
        )));
    }
    let mut out = k.data().clone();
    mask_in_place(&mut out, m);
    KSpaceVolume::new(out)
}

/// Inverse FFT of (undersampled) k-space per coil.
pub fn zero_filled_images(k_undersampled: &KSpaceVolume) -> CoilImageStack {
    CoilImageStack::new(ifft_coils(k_undersampled.data())).expect("ifft of a valid volume is valid")
}

/// Noiseless degradation `yᵢ = M·F(Sᵢ ⊙ I)`.
pub fn degrade(image: &Array2<Complex64>, sens: &CoilSensitivities, m: &SamplingMask) -> Result<KSpaceVolume> {
    let (c, h, w) = sens.dim();
    if image.dim() != (h, w) {
        return Err(Error::shape(format!(
            "image {:?} does not match sensitivities [{c}, {h}, {w}]",
            image.dim()
        )));
    }
    if m.width() != w {
        return Err(Error::shape(format!("mask width {} vs image width {w}", m.width())));
    }
    let mut coil_images = sens.data().clone();
    for mut plane in coil_images.outer_iter_mut() {
        plane *= image;
    }
    let mut k = fft_coils(&coil_images);
    mask_in_place(&mut k, m);
    KSpaceVolume::new(k)
}
