//! k-space rendering `K = F(I·e^{iφ})` and the complex L1 loss.

use ndarray::Array3;
use num_complex::{Complex, Complex64};

use crate::data::{fft_coils, KSpaceVolume};
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::real::Real;

/// Per-coil centered orthonormal FFT of `I ⊙ e^{iφ}`.
pub fn render_kspace(intensities: &Array3<f64>, phases: &Array3<f64>) -> Result<KSpaceVolume> {
    if intensities.dim() != phases.dim() {
        return Err(Error::shape(format!(
            "intensities {:?} vs phases {:?}",
            intensities.dim(),
            phases.dim()
        )));
    }
    if intensities.iter().chain(phases.iter()).any(|v| !v.is_finite()) {
        return Err(Error::validation("intensities", "inputs must be finite"));
    }
    let mut z = Array3::from_elem(intensities.dim(), Complex64::new(0.0, 0.0));
    for ((o, &m), &p) in z.iter_mut().zip(intensities).zip(phases) {
        *o = Complex64::from_polar(m, p);
    }
    KSpaceVolume::new(fft_coils(&z))
}

fn check_same(pred: &KSpaceVolume, reference: &KSpaceVolume) -> Result<()> {
    if pred.dim() != reference.dim() {
        return Err(Error::shape(format!(
            "prediction {:?} vs reference {:?}",
            pred.dim(),
            reference.dim()
        )));
    }
    Ok(())
}

/// Mean over all entries of `|Re Δ| + |Im Δ|`.
pub fn kspace_l1_loss(pred: &KSpaceVolume, reference: &KSpaceVolume) -> Result<f64> {
    check_same(pred, reference)?;
    let n = pred.data().len() as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| {
            let d = a - b;
            d.re.abs() + d.im.abs()
        })
        .sum();
    Ok(sum / n)
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Gradient of [`kspace_l1_loss`] w.r.t. the prediction, packed as
/// `∂L/∂Re + i·∂L/∂Im` (zero residual components get subgradient 0).
pub fn kspace_l1_grad(pred: &KSpaceVolume, reference: &KSpaceVolume) -> Result<Array3<Complex64>> {
    check_same(pred, reference)?;
    let n = pred.data().len() as f64;
    let mut g = pred.data() - reference.data();
    for v in g.iter_mut() {
        *v = Complex64::new(sign(v.re), sign(v.im)) / n;
    }
    Ok(g)
}

/// Compensated running sum.
#[derive(Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        self.comp += if self.sum.abs() >= x.abs() {
            (self.sum - t) + x
        } else {
            (x - t) + self.sum
        };
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Reusable buffers for rendering-based losses on `[c, h, w]` channel-major data.
pub struct Renderer<T: Real> {
    fft: Fft2<T>,
    buf: Vec<Complex<T>>,
}

impl<T: Real> Renderer<T> {
    pub fn new(h: usize, w: usize) -> Self {
        Renderer {
            fft: Fft2::new(h, w),
            buf: Vec::new(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.fft.shape()
    }

    /// Renders into the internal buffer and returns it.
    pub fn render(&mut self, intensities: &[T], phases: Option<&[T]>) -> &[Complex<T>] {
        self.buf.clear();
        match phases {
            Some(p) => self
                .buf
                .extend(intensities.iter().zip(p).map(|(&m, &ph)| Complex::from_polar(m, ph))),
            None => self
                .buf
                .extend(intensities.iter().map(|&m| Complex::new(m, T::zero()))),
        }
        self.fft.forward_stack(&mut self.buf);
        &self.buf
    }

    /// k-space L1 loss of the rendering against `target`; accumulates
    /// `∂L/∂I` into `d_int` and `∂L/∂φ` into `d_phase`.
    pub fn kspace_loss_grad(
        &mut self,
        intensities: &[T],
        phases: &[T],
        target: &[Complex<T>],
        d_int: &mut [T],
        d_phase: &mut [T],
    ) -> f64 {
        let len = intensities.len();
        assert!(phases.len() == len && target.len() == len && d_int.len() == len && d_phase.len() == len);
        self.render(intensities, Some(phases));
        let inv_n = T::one() / T::of(len as f64);
        let mut loss = 0.0;
        for (k, &t) in self.buf.iter_mut().zip(target) {
            let d = *k - t;
            loss += d.re.abs().f64() + d.im.abs().f64();
            *k = Complex::new(sign(d.re) * inv_n, sign(d.im) * inv_n);
        }
        // the transform is unitary, so its adjoint is the inverse
        self.fft.inverse_stack(&mut self.buf);
        for i in 0..len {
            let u = Complex::from_polar(T::one(), -phases[i]);
            let q = self.buf[i] * u;
            d_int[i] += q.re;
            d_phase[i] += intensities[i] * q.im;
        }
        loss / len as f64
    }

    /// k-space L1 loss without gradients.
    pub fn kspace_loss(&mut self, intensities: &[T], phases: Option<&[T]>, target: &[Complex<T>]) -> f64 {
        let len = intensities.len();
        let k = self.render(intensities, phases);
        let mut acc = Neumaier::default();
        for (a, b) in k.iter().zip(target) {
            let d = a - b;
            acc.add(d.re.abs().f64());
            acc.add(d.im.abs().f64());
        }
        acc.total() / len as f64
    }
}

/// Image-domain mean L1 loss; accumulates its gradient into `d_int`.
pub fn image_l1_loss_grad<T: Real>(intensities: &[T], target: &[T], d_int: &mut [T]) -> f64 {
    let len = intensities.len();
    let inv_n = T::one() / T::of(len as f64);
    let mut loss = 0.0;
    for ((g, &p), &t) in d_int.iter_mut().zip(intensities).zip(target) {
        let d = p - t;
        loss += d.abs().f64();
        *g += sign(d) * inv_n;
    }
    loss / len as f64
}
