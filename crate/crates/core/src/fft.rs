//! Centered, orthonormal 2D FFT.
//!
//! The DC bin sits at `(h/2, w/2)` (integer division) and both directions
//! are scaled by `1/√(h·w)`, so the transform is unitary and the inverse is
//! its adjoint.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::real::Real;

pub struct Fft2<T: Real> {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Real> Fft2<T> {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// In-place centered forward transform of one `[h, w]` plane.
    pub fn forward(&self, plane: &mut [Complex<T>]) {
        self.transform(plane, true);
    }

    /// In-place centered inverse transform of one `[h, w]` plane.
    pub fn inverse(&self, plane: &mut [Complex<T>]) {
        self.transform(plane, false);
    }

    /// Applies the transform to every consecutive `[h, w]` plane of `stack`.
    pub fn forward_stack(&self, stack: &mut [Complex<T>]) {
        for plane in stack.chunks_exact_mut(self.h * self.w) {
            self.forward(plane);
        }
    }

    pub fn inverse_stack(&self, stack: &mut [Complex<T>]) {
        for plane in stack.chunks_exact_mut(self.h * self.w) {
            self.inverse(plane);
        }
    }

    fn transform(&self, plane: &mut [Complex<T>], forward: bool) {
        let (h, w) = (self.h, self.w);
        assert_eq!(plane.len(), h * w, "plane size");
        // Undo centering: element (i, j) of the centered grid moves to the
        // FFT's natural position.
        let mut buf = vec![Complex::new(T::zero(), T::zero()); h * w];
        for i in 0..h {
            let si = (i + h / 2) % h;
            for j in 0..w {
                buf[i * w + j] = plane[si * w + (j + w / 2) % w];
            }
        }
        let (rows, cols) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        rows.process(&mut buf);
        let mut tr = vec![Complex::new(T::zero(), T::zero()); h * w];
        transpose(&buf, &mut tr, h, w);
        cols.process(&mut tr);
        transpose(&tr, &mut buf, w, h);
        let scale = T::one() / T::of((h * w) as f64).sqrt();
        for i in 0..h {
            let di = (i + h / 2) % h;
            for j in 0..w {
                plane[di * w + (j + w / 2) % w] = buf[i * w + j] * scale;
            }
        }
    }
}

fn transpose<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}
