//! GRAPPA and zero-filled baselines.
//!
//! Missing phase-encoding line `j` (offset `r = j mod s` from the sampled
//! line `j₀ = j − r`) is predicted from the sampled lines
//! `j₀ + t·s, t ∈ {−1, 0, 1, 2}`, five read-direction neighbours each
//! (circular wrap) and every coil. Near the phase-encoding edges the kernel
//! is truncated to the source lines that exist; each truncated variant is
//! calibrated separately on the ACS block.

use std::ops::Range;

use nalgebra::DMatrix;
use ndarray::{s, Array2, Array3};
use num_complex::Complex64;

use crate::data::{ifft_coils, sos_unchecked, KSpaceVolume};
use crate::error::{Error, Result};
use crate::sampling::SamplingMask;

/// Kernel shape and regularization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    /// Read-direction taps (odd).
    pub read_taps: usize,
    /// Tikhonov weight relative to the mean diagonal of the normal matrix.
    pub lambda_rel: f64,
    /// Minimum ratio of calibration equations to unknowns.
    pub min_equation_ratio: usize,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            read_taps: 5,
            lambda_rel: 1e-10,
            min_equation_ratio: 4,
        }
    }
}

/// Source-line offsets `t` (in units of the scale) of the full kernel.
pub const SOURCE_OFFSETS: Range<isize> = -1..3;

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    /// Target offset `r ∈ 1..s`.
    pub offset: usize,
    /// Inclusive range of source offsets `t`.
    pub first: isize,
    pub last: isize,
    /// `[unknowns, coils]`; row order `(t, read tap, coil)`.
    pub weights: DMatrix<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrappaWeights {
    pub scale: usize,
    pub coils: usize,
    pub spec: KernelSpec,
    pub kernels: Vec<Kernel>,
}

impl GrappaWeights {
    fn kernel(&self, offset: usize, first: isize, last: isize) -> Option<&Kernel> {
        self.kernels
            .iter()
            .find(|k| k.offset == offset && k.first == first && k.last == last)
    }
}

fn variants() -> Vec<(isize, isize)> {
    let mut v = Vec::new();
    for first in [SOURCE_OFFSETS.start, 0] {
        for last in 0..SOURCE_OFFSETS.end {
            v.push((first, last));
        }
    }
    v
}

/// Source vector at read row `i` for sampled base line `j0`, written into `row`.
fn gather(
    k: &Array3<Complex64>,
    i: usize,
    j0: isize,
    scale: usize,
    first: isize,
    last: isize,
    taps: usize,
    row: &mut [Complex64],
) {
    let (c, h, _) = k.dim();
    let half = (taps / 2) as isize;
    let mut idx = 0;
    for t in first..=last {
        let j = (j0 + t * scale as isize) as usize;
        for d in -half..=half {
            let ii = (i as isize + d).rem_euclid(h as isize) as usize;
            for q in 0..c {
                row[idx] = k[[q, ii, j]];
                idx += 1;
            }
        }
    }
}

/// Calibrates kernels for every target offset and edge variant from a fully
/// sampled ACS block `[c, h, n_acs]` (phase-encoding along the last axis).
pub fn grappa_calibrate(acs: &Array3<Complex64>, spec: KernelSpec, scale: usize) -> Result<GrappaWeights> {
    if scale == 0 {
        return Err(Error::validation("scale", "must be at least 1"));
    }
    if spec.read_taps % 2 == 0 {
        return Err(Error::validation("read_taps", "must be odd"));
    }
    let (c, h, n_acs) = acs.dim();
    let mut kernels = Vec::new();
    for offset in 1..scale {
        for (first, last) in variants() {
            let unknowns = (last - first + 1) as usize * spec.read_taps * c;
            // base positions whose sources and target all lie in the block
            let lo = (-first * scale as isize).max(0);
            let hi = n_acs as isize - 1 - (last * scale as isize).max(offset as isize);
            let positions = if hi >= lo { (hi - lo + 1) as usize } else { 0 };
            let equations = positions * h;
            let required = spec.min_equation_ratio * unknowns;
            if equations < required {
                return Err(Error::Calibration {
                    equations,
                    unknowns,
                    required,
                });
            }
            let mut a = DMatrix::<Complex64>::zeros(equations, unknowns);
            let mut b = DMatrix::<Complex64>::zeros(equations, c);
            let mut row = vec![Complex64::new(0.0, 0.0); unknowns];
            let mut e = 0;
            for j0 in lo..=hi {
                for i in 0..h {
                    gather(acs, i, j0, scale, first, last, spec.read_taps, &mut row);
                    for (col, v) in row.iter().enumerate() {
                        a[(e, col)] = *v;
                    }
                    for q in 0..c {
                        b[(e, q)] = acs[[q, i, j0 as usize + offset]];
                    }
                    e += 1;
                }
            }
            let ah = a.adjoint();
            let mut normal = &ah * &a;
            let mean_diag = (0..unknowns).map(|d| normal[(d, d)].re).sum::<f64>() / unknowns as f64;
            let lambda = spec.lambda_rel * mean_diag.max(f64::MIN_POSITIVE);
            for d in 0..unknowns {
                normal[(d, d)] += Complex64::new(lambda, 0.0);
            }
            let rhs = &ah * &b;
            let chol = normal.cholesky().ok_or(Error::Calibration {
                equations,
                unknowns,
                required,
            })?;
            kernels.push(Kernel {
                offset,
                first,
                last,
                weights: chol.solve(&rhs),
            });
        }
    }
    Ok(GrappaWeights {
        scale,
        coils: c,
        spec,
        kernels,
    })
}

/// The ACS columns of `k`.
pub fn extract_acs(k: &KSpaceVolume, mask: &SamplingMask) -> Array3<Complex64> {
    let r = mask.acs_range();
    k.data().slice(s![.., .., r.start..r.end]).to_owned()
}

/// Fills every unsampled line by kernel application; sampled lines are copied.
pub fn grappa_fill(
    k_undersampled: &KSpaceVolume,
    mask: &SamplingMask,
    weights: &GrappaWeights,
) -> Result<KSpaceVolume> {
    let (c, h, w) = k_undersampled.dim();
    if mask.width() != w {
        return Err(Error::shape(format!("mask width {} vs k-space width {w}", mask.width())));
    }
    if weights.scale != mask.scale() {
        return Err(Error::validation(
            "weights",
            format!("calibrated for scale {}, mask has scale {}", weights.scale, mask.scale()),
        ));
    }
    if weights.coils != c {
        return Err(Error::validation(
            "weights",
            format!("calibrated for {} coils, data has {c}", weights.coils),
        ));
    }
    let s = weights.scale;
    let mut out = k_undersampled.data().clone();
    let src = k_undersampled.data();
    let taps = weights.spec.read_taps;
    for j in 0..w {
        if mask.is_sampled(j) {
            continue;
        }
        let offset = j % s;
        let j0 = (j - offset) as isize;
        let first = if j0 >= s as isize { SOURCE_OFFSETS.start } else { 0 };
        let last = (0..SOURCE_OFFSETS.end)
            .rev()
            .find(|&t| j0 + t * (s as isize) < w as isize)
            .expect("base line is inside the grid");
        let kernel = weights.kernel(offset, first, last).ok_or_else(|| {
            Error::validation("weights", format!("no kernel for offset {offset}, sources {first}..={last}"))
        })?;
        let unknowns = kernel.weights.nrows();
        let mut sources = DMatrix::<Complex64>::zeros(h, unknowns);
        let mut row = vec![Complex64::new(0.0, 0.0); unknowns];
        for i in 0..h {
            gather(src, i, j0, s, first, last, taps, &mut row);
            for (col, v) in row.iter().enumerate() {
                sources[(i, col)] = *v;
            }
        }
        let pred = sources * &kernel.weights;
        for q in 0..c {
            for i in 0..h {
                out[[q, i, j]] = pred[(i, q)];
            }
        }
    }
    KSpaceVolume::new(out)
}

/// SoS of the coil images of `k`.
fn sos_image(k: &Array3<Complex64>) -> Array2<f64> {
    sos_unchecked(ifft_coils(k).mapv(|z| z.norm()).view())
}

/// GRAPPA fill followed by inverse FFT and SoS combination.
pub fn grappa_reconstruct(
    k_undersampled: &KSpaceVolume,
    mask: &SamplingMask,
    weights: &GrappaWeights,
) -> Result<Array2<f64>> {
    let filled = grappa_fill(k_undersampled, mask, weights)?;
    Ok(sos_image(filled.data()))
}

/// Calibrates on the ACS block of `k_undersampled` and reconstructs.
pub fn grappa_auto(k_undersampled: &KSpaceVolume, mask: &SamplingMask, spec: KernelSpec) -> Result<Array2<f64>> {
    let weights = grappa_calibrate(&extract_acs(k_undersampled, mask), spec, mask.scale())?;
    grappa_reconstruct(k_undersampled, mask, &weights)
}

/// SoS of the zero-filled coil images.
pub fn zero_fill_baseline(k_undersampled: &KSpaceVolume) -> Array2<f64> {
    sos_image(k_undersampled.data())
}

/// Number of PE lines the ACS block needs for the full kernel at `scale`
/// with `h` read rows and `c` coils.
pub fn required_acs_lines(scale: usize, h: usize, c: usize, spec: KernelSpec) -> usize {
    if scale <= 1 {
        return 0;
    }
    let unknowns = 4 * spec.read_taps * c;
    let positions = (spec.min_equation_ratio * unknowns).div_ceil(h);
    3 * scale + positions
}
