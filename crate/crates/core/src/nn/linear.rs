use super::gemm::{gemm, gemm_ld, MatRef};
use super::params::{ParamLayout, SlotId};
use crate::real::Real;

/// Fully connected layer `y = W·x + b` with `W: [fan_out, fan_in]`.
///
/// The input may be supplied as several row blocks whose heights sum to
/// `fan_in`; this is how skip concatenations are evaluated without copying.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: SlotId,
    pub bias: SlotId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = layout.push(format!("{name}.weight"), &[fan_out, fan_in]);
        let bias = layout.push(format!("{name}.bias"), &[fan_out]);
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    fn check_parts<T: Real>(&self, parts: &[MatRef<'_, T>], n: usize) {
        let total: usize = parts.iter().map(|p| p.rows()).sum();
        assert_eq!(total, self.fan_in, "linear input width");
        assert!(parts.iter().all(|p| p.cols() == n), "linear input length");
    }

    /// `out[fan_out, n] = W·[parts] + b`.
    pub fn forward<T: Real>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        parts: &[MatRef<'_, T>],
        n: usize,
        out: &mut [T],
    ) {
        self.check_parts(parts, n);
        let w = MatRef::new(layout.get(params, self.weight), self.fan_out, self.fan_in);
        let b = layout.get(params, self.bias);
        for (row, &bv) in out[..self.fan_out * n].chunks_exact_mut(n).zip(b) {
            row.fill(bv);
        }
        let mut col = 0;
        for part in parts {
            gemm(T::one(), w.col_block(col, part.rows()), *part, T::one(), out);
            col += part.rows();
        }
    }

    /// Accumulates parameter gradients into `grads` and, for each part with a
    /// `Some` slot in `dparts`, the input gradient into that buffer.
    pub fn backward<T: Real>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        grads: &mut [T],
        parts: &[MatRef<'_, T>],
        dout: &[T],
        n: usize,
        dparts: &mut [Option<&mut [T]>],
    ) {
        self.check_parts(parts, n);
        assert_eq!(dparts.len(), parts.len());
        let dy = MatRef::new(dout, self.fan_out, n);
        {
            let db = layout.get_mut(grads, self.bias);
            for (g, row) in db.iter_mut().zip(dout.chunks_exact(n)) {
                *g += row.iter().copied().sum::<T>();
            }
        }
        let w = MatRef::new(layout.get(params, self.weight), self.fan_out, self.fan_in);
        let mut col = 0;
        for (part, dpart) in parts.iter().zip(dparts.iter_mut()) {
            let rows = part.rows();
            // dW[:, block] += dY · partᵀ
            let dw = layout.get_mut(grads, self.weight);
            gemm_ld(T::one(), dy, part.t(), T::one(), &mut dw[col..], self.fan_in);
            if let Some(dx) = dpart.as_deref_mut() {
                gemm(T::one(), w.col_block(col, rows).t(), dy, T::one(), dx);
            }
            col += rows;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_input_equals_concatenated_input() {
        let mut layout = ParamLayout::new();
        let lin = Linear::new(&mut layout, "l", 5, 3);
        let params: Vec<f64> = (0..layout.len()).map(|i| ((i * 7) % 11) as f64 * 0.1 - 0.5).collect();
        let n = 4;
        let x: Vec<f64> = (0..5 * n).map(|i| (i as f64).cos()).collect();
        let mut whole = vec![0.0; 3 * n];
        lin.forward(&layout, &params, &[MatRef::new(&x, 5, n)], n, &mut whole);
        let mut split = vec![0.0; 3 * n];
        lin.forward(
            &layout,
            &params,
            &[MatRef::new(&x[..2 * n], 2, n), MatRef::new(&x[2 * n..], 3, n)],
            n,
            &mut split,
        );
        for (a, b) in whole.iter().zip(&split) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut layout = ParamLayout::new();
        let lin = Linear::new(&mut layout, "l", 3, 2);
        let mut params: Vec<f64> = (0..layout.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let n = 3;
        let x: Vec<f64> = (0..3 * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let target: Vec<f64> = (0..2 * n).map(|i| i as f64 * 0.1).collect();
        let loss = |p: &[f64], xs: &[f64]| {
            let mut y = vec![0.0; 2 * n];
            lin.forward(&layout, p, &[MatRef::new(xs, 3, n)], n, &mut y);
            y.iter().zip(&target).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum::<f64>()
        };
        let mut y = vec![0.0; 2 * n];
        lin.forward(&layout, &params, &[MatRef::new(&x, 3, n)], n, &mut y);
        let dy: Vec<f64> = y.iter().zip(&target).map(|(a, b)| a - b).collect();
        let mut grads = vec![0.0; layout.len()];
        let mut dx = vec![0.0; 3 * n];
        lin.backward(
            &layout,
            &params,
            &mut grads,
            &[MatRef::new(&x, 3, n)],
            &dy,
            n,
            &mut [Some(&mut dx)],
        );
        let h = 1e-6;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let lp = loss(&params, &x);
            params[i] = orig - h;
            let lm = loss(&params, &x);
            params[i] = orig;
            assert!(((lp - lm) / (2.0 * h) - grads[i]).abs() < 1e-7);
        }
        let mut xs = x.clone();
        for i in 0..xs.len() {
            let orig = xs[i];
            xs[i] = orig + h;
            let lp = loss(&params, &xs);
            xs[i] = orig - h;
            let lm = loss(&params, &xs);
            xs[i] = orig;
            assert!(((lp - lm) / (2.0 * h) - dx[i]).abs() < 1e-7);
        }
    }
}
