//! K-space and image containers, synthetic multi-coil phantoms and the
//! acquisition model.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView3, Axis, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;

fn check_grid(data: &Array3<Complex64>, what: &str) -> Result<()> {
    let (c, h, w) = data.dim();
    if c < 1 || h < 2 || w < 2 {
        return Err(Error::shape(format!(
            "{what} must be [c ≥ 1, h ≥ 2, w ≥ 2], got [{c}, {h}, {w}]"
        )));
    }
    if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::validation("data", format!("{what} contains non-finite entries")));
    }
    Ok(())
}

macro_rules! complex_grid {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            data: Array3<Complex64>,
        }

        impl $name {
            pub fn new(data: Array3<Complex64>) -> Result<Self> {
                check_grid(&data, stringify!($name))?;
                Ok(Self { data })
            }

            pub fn data(&self) -> &Array3<Complex64> {
                &self.data
            }

            pub fn into_inner(self) -> Array3<Complex64> {
                self.data
            }

            /// `(coils, height, width)`.
            pub fn dim(&self) -> (usize, usize, usize) {
                self.data.dim()
            }

            pub fn coils(&self) -> usize {
                self.data.dim().0
            }
        }
    };
}

complex_grid!(
    /// Multi-coil frequency-domain samples `[c, h, w]`, DC at `(h/2, w/2)`.
    KSpaceVolume
);
complex_grid!(
    /// Multi-coil complex images `[c, h, w]`.
    CoilImageStack
);
complex_grid!(
    /// Complex coil sensitivity maps `[c, h, w]`.
    CoilSensitivities
);

/// Argument in `(-π, π]`, with the phase of an exact zero defined as 0.
pub fn phase_of(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let a = z.im.atan2(z.re);
    if a <= -PI {
        PI
    } else {
        a
    }
}

impl CoilImageStack {
    pub fn magnitude(&self) -> Array3<f64> {
        self.data.mapv(|z| z.norm())
    }

    pub fn phase(&self) -> Array3<f64> {
        self.data.mapv(phase_of)
    }
}

/// Centered orthonormal forward FFT of every coil.
pub fn fft_coils(images: &Array3<Complex64>) -> Array3<Complex64> {
    let (_, h, w) = images.dim();
    let mut out = images.as_standard_layout().into_owned();
    Fft2::<f64>::new(h, w).forward_stack(out.as_slice_mut().expect("standard layout"));
    out
}

/// Centered orthonormal inverse FFT of every coil.
pub fn ifft_coils(kspace: &Array3<Complex64>) -> Array3<Complex64> {
    let (_, h, w) = kspace.dim();
    let mut out = kspace.as_standard_layout().into_owned();
    Fft2::<f64>::new(h, w).inverse_stack(out.as_slice_mut().expect("standard layout"));
    out
}

/// Root-sum-of-squares coil combination `√(Σᵢ mᵢ²)`.
pub fn sos_combine(magnitudes: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
    if magnitudes.iter().any(|&m| !m.is_finite() || m < 0.0) {
        return Err(Error::validation(
            "magnitudes",
            "entries must be finite and non-negative",
        ));
    }
    Ok(sos_unchecked(magnitudes))
}

/// SoS without the sign check; used on raw network outputs, which may be negative.
pub(crate) fn sos_unchecked(values: ArrayView3<'_, f64>) -> Array2<f64> {
    values
        .map(|m| m * m)
        .sum_axis(Axis(0))
        .mapv(f64::sqrt)
}

/// Ellipse in normalized coordinates, `x` along width and `y` along height, both in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub axes: (f64, f64),
    /// Rotation in radians.
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.axes.0).powi(2) + (v / self.axes.1).powi(2) <= 1.0
    }
}

/// Description of one synthetic multi-coil acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub coils: usize,
    /// Painted in order; later ellipses overwrite earlier ones.
    pub ellipses: Vec<Ellipse>,
    /// Phase field `a0 + a1·x + a2·y + a3·x² + a4·x·y + a5·y²` in radians.
    pub phase_coeffs: [f64; 6],
    /// Standard deviation of the complex Gaussian k-space noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 2 {
            return Err(Error::validation("height", "must be at least 2"));
        }
        if self.width < 2 {
            return Err(Error::validation("width", "must be at least 2"));
        }
        if self.coils == 0 {
            return Err(Error::validation("coils", "must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::validation("noise_sigma", "must be finite and ≥ 0"));
        }
        for (i, e) in self.ellipses.iter().enumerate() {
            if !(0.0..=1.0).contains(&e.intensity) {
                return Err(Error::validation(
                    "ellipses",
                    format!("ellipse {i} intensity {} outside [0, 1]", e.intensity),
                ));
            }
            if !(e.axes.0 > 0.0 && e.axes.1 > 0.0) {
                return Err(Error::validation(
                    "ellipses",
                    format!("ellipse {i} has non-positive axes"),
                ));
            }
        }
        if self.phase_coeffs.iter().any(|a| !a.is_finite()) {
            return Err(Error::validation("phase_coeffs", "must be finite"));
        }
        Ok(())
    }

    /// Random head-like phantom: an outer shell, an inner body and a handful
    /// of smaller features, with a smooth random phase field.
    pub fn random(height: usize, width: usize, coils: usize, noise_sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ellipses = Vec::new();
        let cx = rng.gen_range(-0.08..0.08);
        let cy = rng.gen_range(-0.08..0.08);
        let ax = rng.gen_range(0.62..0.78);
        let ay = rng.gen_range(0.75..0.9);
        let angle = rng.gen_range(-0.3..0.3);
        ellipses.push(Ellipse {
            center: (cx, cy),
            axes: (ax, ay),
            angle,
            intensity: rng.gen_range(0.8..1.0),
        });
        ellipses.push(Ellipse {
            center: (cx, cy),
            axes: (ax * 0.88, ay * 0.9),
            angle,
            intensity: rng.gen_range(0.25..0.45),
        });
        let n_small = rng.gen_range(3..7);
        for _ in 0..n_small {
            let r = rng.gen_range(0.0..0.5);
            let t = rng.gen_range(0.0..2.0 * PI);
            ellipses.push(Ellipse {
                center: (cx + r * ax * t.cos(), cy + r * ay * t.sin()),
                axes: (rng.gen_range(0.05..0.22), rng.gen_range(0.05..0.22)),
                angle: rng.gen_range(0.0..PI),
                intensity: rng.gen_range(0.05..1.0),
            });
        }
        let mut phase_coeffs = [0.0; 6];
        phase_coeffs[0] = rng.gen_range(-PI / 2.0..PI / 2.0);
        for a in &mut phase_coeffs[1..] {
            *a = rng.gen_range(-0.8..0.8);
        }
        PhantomSpec {
            height,
            width,
            coils,
            ellipses,
            phase_coeffs,
            noise_sigma,
            seed,
        }
    }

    fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        let y = -1.0 + 2.0 * i as f64 / (self.height - 1) as f64;
        let x = -1.0 + 2.0 * j as f64 / (self.width - 1) as f64;
        (x, y)
    }

    fn magnitude(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.height, self.width), |(i, j)| {
            let (x, y) = self.coords(i, j);
            self.ellipses
                .iter()
                .rev()
                .find(|e| e.contains(x, y))
                .map_or(0.0, |e| e.intensity)
        })
    }

    fn phase_field(&self, x: f64, y: f64) -> f64 {
        let a = &self.phase_coeffs;
        a[0] + a[1] * x + a[2] * y + a[3] * x * x + a[4] * x * y + a[5] * y * y
    }
}

/// Smooth complex Gaussian sensitivities centered on a circle around the
/// field of view, normalized to unit root-sum-of-squares and referenced to
/// the phase of coil 0.
pub fn coil_sensitivities(height: usize, width: usize, coils: usize) -> CoilSensitivities {
    const RING_RADIUS: f64 = 1.3;
    const WIDTH: f64 = 0.9;
    const RAMP: f64 = 0.6;
    let mut data = Array3::<Complex64>::zeros((coils, height, width));
    for ((ci, i, j), v) in data.indexed_iter_mut() {
        let theta = 2.0 * PI * ci as f64 / coils as f64;
        let (px, py) = (RING_RADIUS * theta.cos(), RING_RADIUS * theta.sin());
        let y = -1.0 + 2.0 * i as f64 / (height - 1) as f64;
        let x = -1.0 + 2.0 * j as f64 / (width - 1) as f64;
        let d2 = (x - px).powi(2) + (y - py).powi(2);
        let mag = (-d2 / (2.0 * WIDTH * WIDTH)).exp();
        let phase = theta + RAMP * (x * theta.cos() + y * theta.sin());
        *v = Complex64::from_polar(mag, phase);
    }
    for i in 0..height {
        for j in 0..width {
            let norm = (0..coils)
                .map(|c| data[[c, i, j]].norm_sqr())
                .sum::<f64>()
                .sqrt();
            let s0 = data[[0, i, j]];
            let r0 = s0.norm_sqr().sqrt();
            let unit = s0.conj() / r0;
            for c in 1..coils {
                data[[c, i, j]] = data[[c, i, j]] * unit / norm;
            }
            data[[0, i, j]] = Complex64::new(r0 / norm, 0.0);
        }
    }
    CoilSensitivities { data }
}

/// Renders the phantom and its coil images.
///
/// `ground_truth[i] = sens[i] ⊙ (|phantom| · e^{i·phase})`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(CoilImageStack, CoilSensitivities)> {
    spec.validate()?;
    let sens = coil_sensitivities(spec.height, spec.width, spec.coils);
    let mag = spec.magnitude();
    let mut gt = Array3::<Complex64>::zeros((spec.coils, spec.height, spec.width));
    Zip::indexed(&mut gt)
        .and(sens.data())
        .for_each(|(_, i, j), g, &s| {
            let (x, y) = spec.coords(i, j);
            *g = s * Complex64::from_polar(mag[[i, j]], spec.phase_field(x, y));
        });
    Ok((CoilImageStack { data: gt }, sens))
}

/// Fully-sampled acquisition `K* = F(image) + n`, `n ~ CN(0, σ²)` per entry.
pub fn simulate_acquisition(
    ground_truth: &CoilImageStack,
    noise_sigma: f64,
    seed: u64,
) -> Result<KSpaceVolume> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::validation("noise_sigma", "must be finite and ≥ 0"));
    }
    let mut k = fft_coils(ground_truth.data());
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma / 2f64.sqrt()).expect("valid sigma");
        for z in k.iter_mut() {
            *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    KSpaceVolume::new(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn one_ellipse(coils: usize) -> PhantomSpec {
        PhantomSpec {
            height: 24,
            width: 20,
            coils,
            ellipses: vec![Ellipse {
                center: (0.0, 0.1),
                axes: (0.6, 0.5),
                angle: 0.3,
                intensity: 0.9,
            }],
            phase_coeffs: [0.0; 6],
            noise_sigma: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn zero_phase_single_coil_is_real() {
        let (gt, sens) = generate_phantom(&one_ellipse(1)).unwrap();
        assert!(gt.data().iter().all(|z| z.im == 0.0));
        assert!(sens.data().iter().all(|z| (z.re - 1.0).abs() < 1e-15 && z.im == 0.0));
    }

    #[test]
    fn generation_is_bit_reproducible() {
        let spec = PhantomSpec::random(32, 32, 4, 0.01, 9);
        assert_eq!(spec, PhantomSpec::random(32, 32, 4, 0.01, 9));
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sensitivities_have_unit_sos() {
        let sens = coil_sensitivities(32, 28, 4);
        for i in 0..32 {
            for j in 0..28 {
                let s: f64 = (0..4).map(|c| sens.data()[[c, i, j]].norm_sqr()).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sos_image_equals_phantom_magnitude() {
        let spec = PhantomSpec::random(24, 24, 4, 0.0, 3);
        let (gt, _) = generate_phantom(&spec).unwrap();
        let sos = sos_combine(gt.magnitude().view()).unwrap();
        let mag = spec.magnitude();
        for (a, b) in sos.iter().zip(mag.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_spec_names_the_field() {
        let mut spec = one_ellipse(2);
        spec.ellipses[0].intensity = 1.5;
        match generate_phantom(&spec) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "ellipses"),
            other => panic!("unexpected {other:?}"),
        }
        let mut spec = one_ellipse(2);
        spec.coils = 0;
        assert!(matches!(
            generate_phantom(&spec),
            Err(Error::Validation { field: "coils", .. })
        ));
        let mut spec = one_ellipse(2);
        spec.noise_sigma = -1.0;
        assert!(matches!(
            generate_phantom(&spec),
            Err(Error::Validation { field: "noise_sigma", .. })
        ));
    }

    #[test]
    fn constant_image_has_single_dc_bin() {
        let img = CoilImageStack::new(Array3::from_elem((1, 4, 4), Complex64::new(1.0, 0.0))).unwrap();
        let k = simulate_acquisition(&img, 0.0, 0).unwrap();
        for ((_, i, j), z) in k.data().indexed_iter() {
            let want = if (i, j) == (2, 2) { 4.0 } else { 0.0 };
            assert!((z - Complex64::new(want, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn noiseless_acquisition_round_trips() {
        let (gt, _) = generate_phantom(&PhantomSpec::random(32, 30, 3, 0.0, 5)).unwrap();
        let k = simulate_acquisition(&gt, 0.0, 0).unwrap();
        let back = ifft_coils(k.data());
        let num: f64 = back.iter().zip(gt.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = gt.data().iter().map(|z| z.norm_sqr()).sum();
        assert!((num / den).sqrt() < 1e-10);
    }

    #[test]
    fn noise_is_reproducible_for_fixed_seed() {
        let (gt, _) = generate_phantom(&one_ellipse(2)).unwrap();
        let a = simulate_acquisition(&gt, 0.1, 42).unwrap();
        let b = simulate_acquisition(&gt, 0.1, 42).unwrap();
        let c = simulate_acquisition(&gt, 0.1, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sos_examples() {
        let m = Array3::from_shape_vec((2, 1, 1), vec![3.0, 4.0]).unwrap();
        assert_eq!(sos_combine(m.view()).unwrap()[[0, 0]], 5.0);
        let single = Array3::from_shape_vec((1, 1, 3), vec![0.5, 0.0, 2.0]).unwrap();
        assert_eq!(sos_combine(single.view()).unwrap().as_slice().unwrap(), &[0.5, 0.0, 2.0]);
        let same = Array3::from_elem((4, 2, 2), 1.5);
        for v in sos_combine(same.view()).unwrap() {
            assert!((v - 2.0 * 1.5).abs() < 1e-15);
        }
        let neg = Array3::from_elem((1, 2, 2), -1.0);
        assert!(matches!(sos_combine(neg.view()), Err(Error::Validation { .. })));
    }

    #[test]
    fn rejects_degenerate_shapes_and_nan() {
        assert!(KSpaceVolume::new(Array3::zeros((0, 4, 4))).is_err());
        assert!(KSpaceVolume::new(Array3::zeros((1, 1, 4))).is_err());
        let mut bad = Array3::<Complex64>::zeros((1, 2, 2));
        bad[[0, 1, 1]] = Complex64::new(f64::NAN, 0.0);
        assert!(KSpaceVolume::new(bad).is_err());
    }

    #[test]
    fn phase_convention() {
        assert_eq!(phase_of(Complex64::new(0.0, 0.0)), 0.0);
        assert_eq!(phase_of(Complex64::new(-0.0, -0.0)), 0.0);
        assert_eq!(phase_of(Complex64::new(-1.0, -0.0)), PI);
        assert!((phase_of(Complex64::new(0.0, 1.0)) - PI / 2.0).abs() < 1e-15);
    }
}
