use super::gemm::{gemm, MatRef};
use super::params::{ParamLayout, SlotId};
use crate::real::Real;

/// Square `k×k` convolution, stride 1, zero ("same") padding, via im2col.
///
/// Input and output are channel-major `[channels, h·w]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: SlotId,
    pub bias: SlotId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        let weight = layout.push(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
        );
        let bias = layout.push(format!("{name}.bias"), &[out_channels]);
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn forward<T: Real>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        x: &[T],
        h: usize,
        w: usize,
        out: &mut [T],
        cols: &mut Vec<T>,
    ) {
        let n = h * w;
        assert_eq!(x.len(), self.in_channels * n, "conv input size");
        let wmat = MatRef::new(layout.get(params, self.weight), self.out_channels, self.fan_in());
        let b = layout.get(params, self.bias);
        for (row, &bv) in out[..self.out_channels * n].chunks_exact_mut(n).zip(b) {
            row.fill(bv);
        }
        let src = if self.kernel == 1 {
            x
        } else {
            im2col(x, self.in_channels, h, w, self.kernel, cols);
            cols.as_slice()
        };
        gemm(T::one(), wmat, MatRef::new(src, self.fan_in(), n), T::one(), out);
    }

    /// Accumulates weight/bias gradients and, if requested, `dx`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        grads: &mut [T],
        x: &[T],
        h: usize,
        w: usize,
        dout: &[T],
        dx: Option<&mut [T]>,
        cols: &mut Vec<T>,
    ) {
        let n = h * w;
        let fan_in = self.fan_in();
        let dy = MatRef::new(dout, self.out_channels, n);
        {
            let db = layout.get_mut(grads, self.bias);
            for (g, row) in db.iter_mut().zip(dout.chunks_exact(n)) {
                *g += row.iter().copied().sum::<T>();
            }
        }
        let src = if self.kernel == 1 {
            x
        } else {
            im2col(x, self.in_channels, h, w, self.kernel, cols);
            cols.as_slice()
        };
        {
            let dw = layout.get_mut(grads, self.weight);
            gemm(T::one(), dy, MatRef::new(src, fan_in, n).t(), T::one(), dw);
        }
        if let Some(dx) = dx {
            let wmat = MatRef::new(layout.get(params, self.weight), self.out_channels, fan_in);
            if self.kernel == 1 {
                gemm(T::one(), wmat.t(), dy, T::one(), dx);
            } else {
                let mut dcols = vec![T::zero(); fan_in * n];
                gemm(T::one(), wmat.t(), dy, T::zero(), &mut dcols);
                col2im_add(&dcols, self.in_channels, h, w, self.kernel, dx);
            }
        }
    }
}

/// `cols[(c·k + ky)·k + kx, y·w + x] = input[c, y + ky − p, x + kx − p]` (zero outside).
fn im2col<T: Real>(x: &[T], channels: usize, h: usize, w: usize, k: usize, cols: &mut Vec<T>) {
    let n = h * w;
    let pad = k / 2;
    cols.clear();
    cols.resize(channels * k * k * n, T::zero());
    for c in 0..channels {
        let plane = &x[c * n..(c + 1) * n];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * n..][..n];
                let (y0, y1) = valid_range(ky, pad, h);
                let (x0, x1) = valid_range(kx, pad, w);
                for y in y0..y1 {
                    let sy = y + ky - pad;
                    let dst = &mut row[y * w + x0..y * w + x1];
                    let s = &plane[sy * w + x0 + kx - pad..sy * w + x1 + kx - pad];
                    dst.copy_from_slice(s);
                }
            }
        }
    }
}

fn col2im_add<T: Real>(cols: &[T], channels: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let n = h * w;
    let pad = k / 2;
    for c in 0..channels {
        let plane = &mut dx[c * n..(c + 1) * n];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * n..][..n];
                let (y0, y1) = valid_range(ky, pad, h);
                let (x0, x1) = valid_range(kx, pad, w);
                for y in y0..y1 {
                    let sy = y + ky - pad;
                    let src = &row[y * w + x0..y * w + x1];
                    let d = &mut plane[sy * w + x0 + kx - pad..sy * w + x1 + kx - pad];
                    for (a, &b) in d.iter_mut().zip(src) {
                        *a += b;
                    }
                }
            }
        }
    }
}

/// Output positions `o` for which `o + tap − pad` lies in `[0, len)`.
fn valid_range(tap: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(tap);
    let hi = (len + pad).saturating_sub(tap).min(len);
    (lo, hi.max(lo))
}
