//! Toeplitz covariance reconstruction through the maximum-entropy spectrum.
//!
//! A positive-definite sample covariance R defines the prediction vector
//! W = R^{-1} e_1 normalized to W_0 = 1. Treating W as polynomial
//! coefficients, any roots inside the unit disk are flipped across the
//! circle by Blaschke factors, preserving |W| on the circle, which yields a
//! zero-free vector P. The Gohberg-Semencul identity then assembles the
//! inverse of the unique positive-definite Hermitian Toeplitz matrix with
//! that same spectrum:
//!
//!   P_0 T^{-1} = L_P L_P^H - M_P M_P^H
//!
//! with L_P lower-triangular Toeplitz built from P and M_P from the
//! reversed conjugate tail of P.

use crate::error::{Error, Result};
use crate::numerics::{
    hermitize, max_abs, pd_cholesky, poly_eval, poly_from_roots, poly_roots, C64, CMat, CVec,
};
use crate::scenario::ToeplitzHermitian;

/// Roots with modulus in [1 - BOUNDARY_EPS, 1] count as on-circle
/// degeneracies: the Blaschke flip is numerically meaningless there.
pub const BOUNDARY_EPS: f64 = 1.0e-10;

/// Coefficient vector of a maximum-entropy spectrum; the constant term is
/// real and strictly positive.
#[derive(Debug, Clone)]
pub struct MeVector {
    values: Vec<C64>,
}

impl MeVector {
    pub fn new(values: Vec<C64>) -> Result<Self> {
        match values.first() {
            None => Err(Error::Structural("empty coefficient vector".into())),
            Some(v0) if v0.re > 0.0 && v0.im.abs() <= 1e-12 * v0.re => {
                let mut values = values;
                values[0] = C64::new(values[0].re, 0.0);
                Ok(Self { values })
            }
            Some(v0) => Err(Error::Structural(format!(
                "leading value must be real positive, got {v0}"
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    /// |V(e^{i omega})| sampled on a uniform grid of the given size.
    pub fn magnitude_spectrum(&self, grid: usize) -> Vec<f64> {
        (0..grid)
            .map(|g| {
                let omega = std::f64::consts::TAU * g as f64 / grid as f64;
                let z = C64::new(omega.cos(), omega.sin());
                poly_eval(&self.values, z).norm()
            })
            .collect()
    }
}

/// Normalized first column of R^{-1} together with the discarded scale
/// (R^{-1})_{00}, which is the reciprocal of the one-step prediction error
/// variance of R.
fn me_vector_scaled(r: &CMat) -> Result<(MeVector, f64)> {
    let n = r.nrows();
    let chol = pd_cholesky(&hermitize(r)).ok_or_else(|| {
        Error::Domain("covariance is not positive definite; cannot form its ME vector".into())
    })?;
    let mut e1 = CVec::zeros(n);
    e1[0] = C64::new(1.0, 0.0);
    let x = chol.solve(&e1);
    let x0 = x[0];
    if !(x0.re > 0.0 && x0.re.is_finite()) {
        return Err(Error::Domain(format!(
            "leading inverse diagonal {x0} is not positive; matrix is numerically singular"
        )));
    }
    let mut values: Vec<C64> = x.iter().map(|&v| v / x0).collect();
    values[0] = C64::new(1.0, 0.0);
    Ok((MeVector::new(values)?, x0.re))
}

/// Normalized first column of R^{-1}: solves R w = e_1 and scales to w_0 = 1.
pub fn me_vector(r: &CMat) -> Result<MeVector> {
    me_vector_scaled(r).map(|(w, _)| w)
}

/// Flip every root strictly inside the unit disk across the circle,
/// preserving the magnitude spectrum and returning a coefficient vector
/// with a real positive constant term. Roots within `BOUNDARY_EPS` below
/// the circle are reported as degenerate spectra.
pub fn flip_zeros(w: &MeVector) -> Result<MeVector> {
    let n = w.len();
    let mut degree = n - 1;
    while degree > 0 && w.values()[degree].norm() <= 1e-300 {
        degree -= 1;
    }
    if degree == 0 {
        return Ok(w.clone());
    }
    let lead = w.values()[degree];

    let roots = poly_roots(w.values())?;
    let mut inside = Vec::new();
    let mut kept = Vec::new();
    for z in roots {
        let r = z.norm();
        if r < 1.0 - BOUNDARY_EPS {
            inside.push(z);
        } else if r <= 1.0 {
            return Err(Error::Degenerate(format!(
                "spectrum root at |z| = {r:.15} sits on the unit circle"
            )));
        } else {
            kept.push(z);
        }
    }
    if inside.is_empty() {
        return Ok(w.clone());
    }

    let mut new_roots = kept;
    let mut flip_scale = 1.0;
    for z in &inside {
        new_roots.push(C64::new(1.0, 0.0) / z.conj());
        flip_scale *= z.norm();
    }
    // |z - z_n| = |z_n| * |z - 1/conj(z_n)| on the circle, so the leading
    // magnitude grows by prod |z_n|. P(0) = leading * prod(-r_k); the phase
    // of the leading coefficient cancels the product's phase so that the
    // constant term comes out real positive. No root can sit at the origin
    // because the constant term of the input is nonzero.
    let magnitude = lead.norm() * flip_scale;
    let p0_dir: C64 = new_roots.iter().fold(C64::new(1.0, 0.0), |acc, &r| {
        let f = -r;
        acc * (f / f.norm())
    });
    let leading = C64::from_polar(magnitude, -p0_dir.arg());
    let mut values = poly_from_roots(&new_roots, leading);
    values[0] = C64::new(values[0].norm(), 0.0);
    values.resize(n, C64::new(0.0, 0.0));
    MeVector::new(values)
}

/// Gohberg-Semencul inverse: assembles T^{-1} for the Hermitian Toeplitz T
/// whose inverse has first column P. Rejects inputs whose assembled matrix
/// is not positive definite (i.e. P was not zero-free inside the disk).
pub fn gs_inverse(p: &MeVector) -> Result<CMat> {
    let n = p.len();
    let vals = p.values();
    let mut l = CMat::zeros(n, n);
    let mut m = CMat::zeros(n, n);
    for j in 0..n {
        for k in 0..=j {
            l[(j, k)] = vals[j - k];
            // First column of M is (0, conj P_{N-1}, ..., conj P_1).
            let lag = j - k;
            if lag > 0 {
                m[(j, k)] = vals[n - lag].conj();
            }
        }
    }
    let g = (&l * l.adjoint() - &m * m.adjoint()) / C64::new(vals[0].re, 0.0);
    let g = hermitize(&g);
    if pd_cholesky(&g).is_none() {
        return Err(Error::Domain(
            "assembled inverse is not positive definite; coefficient vector has roots inside the unit disk"
                .into(),
        ));
    }
    Ok(g)
}

/// Full reconstruction: unique positive-definite Hermitian Toeplitz matrix
/// with the same maximum-entropy spectrum as R, plus its inverse.
pub fn reconstruct(r: &CMat) -> Result<(ToeplitzHermitian, CMat)> {
    let (w, r00) = me_vector_scaled(r)?;
    let p = flip_zeros(&w)?;
    // The spectral density carried by R is (1/r00) / |W|^2 = (1/r00) / |P|^2.
    // Written with P renormalized to constant term one, the innovation
    // variance becomes 1/(r00 P_0^2), so the true first column of the
    // target inverse is P scaled by r00 * P_0. Without this factor the
    // round trip through gs_inverse would come back off by a constant.
    let scale = C64::new(r00 * p.values()[0].re, 0.0);
    let p_gs = MeVector::new(p.values().iter().map(|&v| v * scale).collect())?;
    let g = gs_inverse(&p_gs)?;
    let n = g.nrows();
    let chol = pd_cholesky(&g)
        .ok_or_else(|| Error::Internal("validated inverse lost positive definiteness".into()))?;
    let full = chol.inverse();
    let scale = max_abs(&full);
    // The inverse of a Gohberg-Semencul form is Toeplitz analytically;
    // averaging the diagonals only removes rounding noise, and anything
    // bigger than 1e-8 of the matrix scale means the pipeline broke.
    let mut first_col = Vec::with_capacity(n);
    for lag in 0..n {
        let count = n - lag;
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..count {
            acc += full[(j + lag, j)];
        }
        let mean = acc / C64::new(count as f64, 0.0);
        for j in 0..count {
            let dev = (full[(j + lag, j)] - mean).norm();
            if dev > 1e-8 * scale {
                return Err(Error::Internal(format!(
                    "reconstructed matrix deviates from Toeplitz structure by {dev:.3e} at lag {lag}"
                )));
            }
        }
        first_col.push(mean);
    }
    first_col[0] = C64::new(first_col[0].re, 0.0);
    let toeplitz = ToeplitzHermitian::new(first_col)?;
    Ok((toeplitz, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{
        apply_phase_errors, build_covariance, draw_phase_errors, trial_rng, ScenarioConfig,
        SUBSTREAM_PHASES,
    };
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Random coefficient vector that is zero-free inside the unit disk,
    /// built from roots of modulus in [1.05, 3].
    fn random_zero_free(n: usize, rng: &mut ChaCha8Rng) -> MeVector {
        let roots: Vec<C64> = (0..n - 1)
            .map(|_| {
                let r = 1.05 + 1.95 * rng.gen::<f64>();
                let a = std::f64::consts::TAU * rng.gen::<f64>();
                c(r * a.cos(), r * a.sin())
            })
            .collect();
        let mut coeffs = poly_from_roots(&roots, c(1.0, 0.0));
        let rot = coeffs[0].conj() / coeffs[0].norm();
        for v in coeffs.iter_mut() {
            *v *= rot;
        }
        coeffs[0] = C64::new(coeffs[0].re, 0.0);
        MeVector::new(coeffs).expect("constant term rotated to be real positive")
    }

    #[test]
    fn me_vector_of_identity_is_e1() {
        let w = me_vector(&CMat::identity(4, 4)).unwrap();
        assert_eq!(w.values()[0], c(1.0, 0.0));
        for k in 1..4 {
            assert!(w.values()[k].norm() <= 1e-14);
        }
    }

    #[test]
    fn me_vector_two_by_two_hand_case() {
        let r = CMat::from_row_slice(2, 2, &[c(2.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)]);
        let w = me_vector(&r).unwrap();
        assert_eq!(w.values()[0], c(1.0, 0.0));
        assert!(
            (w.values()[1] - c(-0.5, 0.0)).norm() <= 1e-14,
            "R^{{-1}} e_1 normalizes to (1, -0.5), got {}",
            w.values()[1]
        );
    }

    #[test]
    fn me_vector_rejects_singular() {
        let r = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(me_vector(&r), Err(Error::Domain(_))));
    }

    #[test]
    fn me_vector_of_pd_toeplitz_is_zero_free() {
        let cfg = ScenarioConfig {
            n: 8,
            ..ScenarioConfig::default()
        };
        let t = build_covariance(&cfg).unwrap().expand();
        let w = me_vector(&t).unwrap();
        let roots = poly_roots(w.values()).unwrap();
        for z in roots {
            assert!(
                z.norm() >= 1.0 - BOUNDARY_EPS,
                "prediction polynomial of a PD Toeplitz matrix has root inside the disk: |z| = {}",
                z.norm()
            );
        }
    }

    #[test]
    fn flip_single_inside_root() {
        let w = MeVector::new(vec![c(1.0, 0.0), c(-2.0, 0.0)]).unwrap();
        let p = flip_zeros(&w).unwrap();
        assert!((p.values()[0] - c(2.0, 0.0)).norm() <= 1e-12);
        assert!((p.values()[1] - c(-1.0, 0.0)).norm() <= 1e-12);
    }

    #[test]
    fn flip_mixed_pair_of_roots() {
        // (1 - 2z)(1 - 0.5z): inside root 0.5 flips to 2, outside root 2 stays.
        let w = MeVector::new(vec![c(1.0, 0.0), c(-2.5, 0.0), c(1.0, 0.0)]).unwrap();
        let p = flip_zeros(&w).unwrap();
        let want = [c(2.0, 0.0), c(-2.0, 0.0), c(0.5, 0.0)];
        for (got, want) in p.values().iter().zip(want.iter()) {
            assert!(
                (got - want).norm() <= 1e-10,
                "flip of (1,-2.5,1) must give (2,-2,0.5), got {:?}",
                p.values()
            );
        }
    }

    #[test]
    fn flip_zero_free_input_is_unchanged() {
        let w = MeVector::new(vec![c(1.0, 0.0), c(-0.4, 0.1)]).unwrap();
        let p = flip_zeros(&w).unwrap();
        for (a, b) in w.values().iter().zip(p.values().iter()) {
            assert_eq!(a, b, "zero-free vectors must pass through untouched");
        }
    }

    #[test]
    fn flip_rejects_on_circle_root() {
        let w = MeVector::new(vec![c(1.0, 0.0), c(-1.0, 0.0)]).unwrap();
        assert!(
            matches!(flip_zeros(&w), Err(Error::Degenerate(_))),
            "root at z = 1 must be a degenerate-spectrum error"
        );
    }

    #[test]
    fn flip_preserves_magnitude_spectrum_and_grows_constant_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..10 {
            // Random vector with roots on both sides of the circle.
            let n = 7;
            let roots: Vec<C64> = (0..n - 1)
                .map(|_| {
                    let r = 0.3 + 1.5 * rng.gen::<f64>();
                    let a = std::f64::consts::TAU * rng.gen::<f64>();
                    c(r * a.cos(), r * a.sin())
                })
                .collect();
            let mut coeffs = poly_from_roots(&roots, c(1.0, 0.0));
            let rot = coeffs[0].conj() / coeffs[0].norm();
            for v in coeffs.iter_mut() {
                *v *= rot;
            }
            coeffs[0] = C64::new(coeffs[0].re, 0.0);
            let w = MeVector::new(coeffs).unwrap();
            let p = flip_zeros(&w).unwrap();
            let wm = w.magnitude_spectrum(1024);
            let pm = p.magnitude_spectrum(1024);
            for (a, b) in wm.iter().zip(pm.iter()) {
                assert!(
                    (a - b).abs() <= 1e-7 * a.max(1e-12),
                    "magnitude spectrum changed: {a} vs {b}"
                );
            }
            assert!(
                p.values()[0].re >= w.values()[0].re * (1.0 - 1e-9),
                "constant term must not shrink: {} -> {}",
                w.values()[0].re,
                p.values()[0].re
            );
            let flipped_roots = poly_roots(p.values()).unwrap();
            for z in flipped_roots {
                assert!(z.norm() >= 1.0 - BOUNDARY_EPS, "flip left a root inside the disk");
            }
        }
    }

    #[test]
    fn flip_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..10 {
            let n = 6;
            let roots: Vec<C64> = (0..n - 1)
                .map(|_| {
                    let r = 0.4 + 1.2 * rng.gen::<f64>();
                    let a = std::f64::consts::TAU * rng.gen::<f64>();
                    c(r * a.cos(), r * a.sin())
                })
                .collect();
            let mut coeffs = poly_from_roots(&roots, c(1.0, 0.0));
            let rot = coeffs[0].conj() / coeffs[0].norm();
            for v in coeffs.iter_mut() {
                *v *= rot;
            }
            coeffs[0] = C64::new(coeffs[0].re, 0.0);
            let w = MeVector::new(coeffs).unwrap();
            let once = flip_zeros(&w).unwrap();
            let twice = flip_zeros(&once).unwrap();
            for (a, b) in once.values().iter().zip(twice.values().iter()) {
                assert!(
                    (a - b).norm() <= 1e-10 * once.values()[0].re,
                    "second flip moved coefficients: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn gs_inverse_of_e1_is_identity() {
        let p = MeVector::new(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        let g = gs_inverse(&p).unwrap();
        assert!(max_abs(&(&g - CMat::identity(3, 3))) <= 1e-14);
    }

    #[test]
    fn gs_inverse_hand_case() {
        let p = MeVector::new(vec![c(2.0, 0.0), c(-1.0, 0.0)]).unwrap();
        let g = gs_inverse(&p).unwrap();
        let want = CMat::from_row_slice(2, 2, &[c(2.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0), c(2.0, 0.0)]);
        assert!(max_abs(&(&g - &want)) <= 1e-14, "GS inverse of (2,-1) is [[2,-1],[-1,2]]");
        let t = nalgebra::Cholesky::new(g).unwrap().inverse();
        let want_t =
            CMat::from_row_slice(2, 2, &[c(2.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)])
                / c(3.0, 0.0);
        assert!(max_abs(&(&t - &want_t)) <= 1e-14, "forward matrix is (1/3)[[2,1],[1,2]]");
    }

    #[test]
    fn gs_inverse_first_column_reproduces_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for n in [3usize, 6, 10] {
            let p = random_zero_free(n, &mut rng);
            let g = gs_inverse(&p).unwrap();
            for j in 0..n {
                assert!(
                    (g[(j, 0)] - p.values()[j]).norm() <= 1e-9 * p.values()[0].re,
                    "T^-1 e_1 must equal P at row {j}"
                );
            }
        }
    }

    #[test]
    fn gs_inverse_rejects_inside_roots() {
        let p = MeVector::new(vec![c(1.0, 0.0), c(-2.0, 0.0)]).unwrap();
        assert!(
            matches!(gs_inverse(&p), Err(Error::Domain(_))),
            "a root inside the disk must surface as an indefinite assembly"
        );
    }

    #[test]
    fn reconstruct_identity_and_pd_toeplitz_fixed_points() {
        let (t, g) = reconstruct(&CMat::identity(5, 5)).unwrap();
        assert!((t.lag(0) - c(1.0, 0.0)).norm() <= 1e-12);
        for m in 1..5 {
            assert!(t.lag(m).norm() <= 1e-12);
        }
        assert!(max_abs(&(&g - CMat::identity(5, 5))) <= 1e-12);

        let cfg = ScenarioConfig {
            n: 9,
            ..ScenarioConfig::default()
        };
        let truth = build_covariance(&cfg).unwrap();
        let (rebuilt, _) = reconstruct(&truth.expand()).unwrap();
        for m in 0..9 {
            let err = (rebuilt.lag(m) - truth.lag(m)).norm();
            assert!(
                err <= 1e-8 * truth.lag(0).re,
                "PD Toeplitz input must be a fixed point; lag {m} off by {err:.3e}"
            );
        }
    }

    #[test]
    fn reconstruct_round_trip_from_gs_built_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        for n in [4usize, 8, 12] {
            let p = random_zero_free(n, &mut rng);
            let g = gs_inverse(&p).unwrap();
            let full = nalgebra::Cholesky::new(g).unwrap().inverse();
            // Project onto exact Toeplitz structure before the round trip.
            let mut first_col = Vec::with_capacity(n);
            for lag in 0..n {
                let count = n - lag;
                let mut acc = c(0.0, 0.0);
                for j in 0..count {
                    acc += full[(j + lag, j)];
                }
                first_col.push(acc / c(count as f64, 0.0));
            }
            first_col[0] = C64::new(first_col[0].re, 0.0);
            let t = ToeplitzHermitian::new(first_col).unwrap();
            let (rebuilt, _) = reconstruct(&t.expand()).unwrap();
            for m in 0..n {
                let err = (rebuilt.lag(m) - t.lag(m)).norm();
                assert!(
                    err <= 1e-8 * t.lag(0).re,
                    "round trip failed at n={n}, lag {m}: {err:.3e}"
                );
            }
        }
    }

    #[test]
    fn reconstruct_preserves_me_magnitude_spectrum() {
        let cfg = ScenarioConfig {
            n: 8,
            ..ScenarioConfig::default()
        };
        let t_n = build_covariance(&cfg).unwrap();
        let mut phase_rng = trial_rng(60, 0, SUBSTREAM_PHASES);
        let phases = draw_phase_errors(90.0, 8, &mut phase_rng);
        let r = apply_phase_errors(&t_n.expand(), &phases);
        let (rebuilt, _) = reconstruct(&r).unwrap();

        // Unit-norm ME vectors of input and output share one magnitude
        // spectrum; the coefficient norm equals the mean square of the
        // spectrum, so both sides are normalized by the same number.
        let w = me_vector(&r).unwrap();
        let v = me_vector(&rebuilt.expand()).unwrap();
        let wn = w.values().iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let vn = v.values().iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let wm = w.magnitude_spectrum(1024);
        let vm = v.magnitude_spectrum(1024);
        for (a, b) in wm.iter().zip(vm.iter()) {
            let (a, b) = (a / wn, b / vn);
            assert!(
                (a - b).abs() <= 1e-6 * a.max(1e-9),
                "ME magnitude spectra diverge: {a} vs {b}"
            );
        }
        // The conjugated matrix is not Toeplitz, so reconstruction must move it.
        let diff = (rebuilt.lag(1) - r[(1, 0)]).norm();
        assert!(diff > 1e-6, "phase-error conjugation should not be a fixed point");
    }
}
