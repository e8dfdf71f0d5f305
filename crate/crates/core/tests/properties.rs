//! Property tests over the public API.

use kinr::data::coil_sensitivities;
use kinr::field::PositionalEncoder;
use kinr::grappa::{extract_acs, grappa_calibrate, grappa_fill};
use kinr::render::{kspace_l1_loss, render_kspace};
use kinr::train::lr_schedule;
use kinr::*;
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_complex(dim: (usize, usize, usize), seed: u64) -> Array3<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn(dim, |_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn random_real(dim: (usize, usize), lo: f64, hi: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn(dim, |_| rng.gen_range(lo..hi))
}

fn kvol(dim: (usize, usize, usize), seed: u64) -> KSpaceVolume {
    KSpaceVolume::new(random_complex(dim, seed)).unwrap()
}

fn max_rel(a: &Array3<Complex64>, b: &Array3<Complex64>) -> f64 {
    let scale = b.iter().map(|z| z.norm()).fold(1e-300, f64::max);
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
}

/// Selection rule written out directly: offset-0 equispaced lines plus the
/// centered ACS block.
fn brute_force_mask(width: usize, scale: usize, acs: f64) -> Vec<bool> {
    let n_acs = (acs * width as f64 + 0.5).floor() as usize;
    let start = (width - n_acs) / 2;
    let mut lines = vec![false; width];
    let mut j = 0;
    while j < width {
        lines[j] = true;
        j += scale;
    }
    for l in lines.iter_mut().skip(start).take(n_acs) {
        *l = true;
    }
    lines
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sos_is_positively_homogeneous(seed in any::<u64>(), a in 0.0f64..10.0, c in 1usize..5) {
        let m = random_real((c * 6, 5), 0.0, 2.0, seed).into_shape_with_order((c, 6, 5)).unwrap();
        let base = sos_combine(m.view()).unwrap();
        let scaled = sos_combine(m.mapv(|v| v * a).view()).unwrap();
        for (x, y) in scaled.iter().zip(&base) {
            prop_assert!((x - a * y).abs() <= 1e-12 * (1.0 + a * y));
        }
    }

    #[test]
    fn sos_bounded_by_max_and_sum(seed in any::<u64>(), c in 1usize..6) {
        let m = random_real((c * 4, 4), 0.0, 3.0, seed).into_shape_with_order((c, 4, 4)).unwrap();
        let sos = sos_combine(m.view()).unwrap();
        for ((i, j), &v) in sos.indexed_iter() {
            let col: Vec<f64> = (0..c).map(|q| m[[q, i, j]]).collect();
            let max = col.iter().copied().fold(0.0, f64::max);
            let sum: f64 = col.iter().sum();
            prop_assert!(v >= max - 1e-12 && v <= sum + 1e-12);
        }
    }

    #[test]
    fn mask_matches_brute_force(width in 2usize..400, scale in 1usize..9, acs in 0.01f64..0.6) {
        prop_assume!((acs * width as f64 + 0.5).floor() >= 1.0);
        let m = make_equispaced_mask(width, scale, acs).unwrap();
        let expected = brute_force_mask(width, scale, acs);
        prop_assert_eq!(m.lines(), expected.as_slice());
        prop_assert_eq!(m.selected_count(), expected.iter().filter(|&&b| b).count());
    }

    #[test]
    fn masking_is_idempotent(seed in any::<u64>(), scale in 1usize..7) {
        let k = kvol((2, 6, 24), seed);
        let m = make_equispaced_mask(24, scale, 0.1).unwrap();
        let once = apply_mask(&k, &m).unwrap();
        prop_assert_eq!(apply_mask(&once, &m).unwrap(), once.clone());
        for j in 0..24 {
            for q in 0..2 {
                for i in 0..6 {
                    let expect = if m.is_sampled(j) { k.data()[[q, i, j]] } else { Complex64::new(0.0, 0.0) };
                    prop_assert_eq!(once.data()[[q, i, j]], expect);
                }
            }
        }
    }

    #[test]
    fn degrade_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, scale in 1usize..5) {
        let sens = coil_sensitivities(8, 12, 3);
        let m = make_equispaced_mask(12, scale, 0.2).unwrap();
        let x = random_complex((1, 8, 12), seed).into_shape_with_order((8, 12)).unwrap();
        let y = random_complex((1, 8, 12), seed ^ 1).into_shape_with_order((8, 12)).unwrap();
        let (ca, cb) = (Complex64::new(a, 0.5), Complex64::new(b, -0.25));
        let lhs = degrade(&(x.mapv(|v| v * ca) + y.mapv(|v| v * cb)), &sens, &m).unwrap();
        let rhs = degrade(&x, &sens, &m).unwrap().into_inner().mapv(|v| v * ca)
            + degrade(&y, &sens, &m).unwrap().into_inner().mapv(|v| v * cb);
        prop_assert!(max_rel(lhs.data(), &rhs) < 1e-12);
    }

    #[test]
    fn fft_round_trip_and_parseval(seed in any::<u64>(), h in 2usize..12, w in 2usize..12) {
        let z = random_complex((2, h, w), seed);
        let k = fft_coils(&z);
        prop_assert!(max_rel(&ifft_coils(&k), &z) < 1e-12);
        let e0: f64 = z.iter().map(|v| v.norm_sqr()).sum();
        let e1: f64 = k.iter().map(|v| v.norm_sqr()).sum();
        prop_assert!((e0 - e1).abs() <= 1e-12 * e0);
    }

    #[test]
    fn render_inverts_to_polar_input(seed in any::<u64>()) {
        let z = random_complex((2, 7, 6), seed);
        let k = render_kspace(&z.mapv(|v| v.norm()), &z.mapv(kinr::data::phase_of)).unwrap();
        prop_assert!(max_rel(&ifft_coils(k.data()), &z) < 1e-12);
    }

    #[test]
    fn kspace_l1_is_a_metric(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
        let (a, b, c) = (kvol((2, 4, 5), s1), kvol((2, 4, 5), s2), kvol((2, 4, 5), s3));
        let ab = kspace_l1_loss(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(kspace_l1_loss(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab, kspace_l1_loss(&b, &a).unwrap());
        let ac = kspace_l1_loss(&a, &c).unwrap();
        let cb = kspace_l1_loss(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn positional_encoding_is_lipschitz(
        seed in any::<u64>(),
        x in prop::array::uniform2(-1.0f64..1.0),
        y in prop::array::uniform2(-1.0f64..1.0),
        sigma in 0.1f64..20.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pe = PositionalEncoder::sample(16, sigma, &mut rng).unwrap();
        let gx = pe.encode_position(x).unwrap();
        let gy = pe.encode_position(y).unwrap();
        let frob: f64 = pe.matrix().iter().map(|v| v * v).sum::<f64>().sqrt();
        let dist = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        let dg: f64 = gx.iter().zip(&gy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(dg <= 2.0 * std::f64::consts::PI * frob * dist + 1e-12);
        let n2: f64 = gx.iter().map(|v| v * v).sum();
        prop_assert!((n2 - 16.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_error_magnitude(seed in any::<u64>(), t in 0.01f64..1.0, f in 1.01f64..4.0) {
        let r = random_real((12, 12), 0.1, 1.0, seed);
        let e = random_real((12, 12), -0.1, 0.1, seed ^ 7);
        let p1 = psnr(&r, &(&r + &e.mapv(|v| v * t))).unwrap();
        let p2 = psnr(&r, &(&r + &e.mapv(|v| v * t * f))).unwrap();
        prop_assert!(p2 < p1);
        prop_assert!((p1 - p2 - 20.0 * f.log10()).abs() < 1e-9);
    }

    #[test]
    fn ssim_bounded_and_maximal_at_identity(seed in any::<u64>()) {
        let r = random_real((16, 16), 0.0, 1.0, seed);
        let t = random_real((16, 16), 0.0, 1.0, seed ^ 3);
        let v = ssim(&r, &t).unwrap();
        prop_assert!(v <= 1.0 && v >= -1.0);
        prop_assert_eq!(ssim(&r, &r).unwrap(), 1.0);
    }

    #[test]
    fn schedule_is_monotone_and_bounded(iters in 1usize..5000, frac in 0.0f64..1.0) {
        let cfg = TrainConfig { iterations: iters, ..TrainConfig::default() };
        let t = (frac * iters as f64) as usize;
        let a = lr_schedule(t, &cfg).unwrap();
        let b = lr_schedule((t + 1).min(iters), &cfg).unwrap();
        prop_assert!(a >= b && a <= cfg.lr0 && b >= -1e-18);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn grappa_is_linear_and_preserves_acquired_lines(
        s1 in any::<u64>(), s2 in any::<u64>(), a in -2.0f64..2.0, scale in 2usize..4,
    ) {
        let (c, h, w) = (2, 12, 49);
        let calib = kvol((c, h, w), 99);
        let m = make_equispaced_mask(w, scale, 0.6).unwrap();
        let wts = grappa_calibrate(&extract_acs(&calib, &m), KernelSpec::default(), scale).unwrap();
        let x = apply_mask(&kvol((c, h, w), s1), &m).unwrap();
        let y = apply_mask(&kvol((c, h, w), s2), &m).unwrap();
        let fx = grappa_fill(&x, &m, &wts).unwrap();
        let fy = grappa_fill(&y, &m, &wts).unwrap();
        let comb = KSpaceVolume::new(x.data().mapv(|v| v * a) + y.data()).unwrap();
        let fc = grappa_fill(&comb, &m, &wts).unwrap();
        let expect = fx.data().mapv(|v| v * a) + fy.data();
        prop_assert!(max_rel(fc.data(), &expect) < 1e-10);
        for j in (0..w).filter(|&j| m.is_sampled(j)) {
            for q in 0..c {
                for i in 0..h {
                    prop_assert_eq!(fx.data()[[q, i, j]], x.data()[[q, i, j]]);
                }
            }
        }
    }
}

struct Truth;

impl Method for Truth {
    fn name(&self) -> String {
        "truth".into()
    }
    fn reconstruct(&self, record: &Record, _: &SamplingMask) -> Result<Array2<f64>> {
        Ok(record.sos.mapv(|v| v * 0.9))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn evaluation_is_permutation_invariant(seed in any::<u64>()) {
        let records = simulate_records(4, 16, 16, 2, 0.01, 3).unwrap();
        let mut shuffled = records.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let a = evaluate(&[&Truth, &ZeroFill], &records, &[2, 4], 0.1).unwrap();
        let b = evaluate(&[&Truth, &ZeroFill], &shuffled, &[2, 4], 0.1).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            prop_assert_eq!(&x.method, &y.method);
            prop_assert!((x.mean_ssim - y.mean_ssim).abs() < 1e-12);
            prop_assert!((x.mean_psnr - y.mean_psnr).abs() < 1e-10);
        }
    }
}
