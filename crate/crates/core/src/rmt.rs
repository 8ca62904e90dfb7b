//! Random-matrix correction of sample covariance eigenvalues.
//!
//! For a sample covariance with eigenvalues lambda_hat drawn from T
//! snapshots of an N-dimensional process, the values
//!
//!   gamma_k = T (lambda_k - mu_k)
//!
//! are strongly consistent estimates of the population eigenvalues in the
//! regime where N and T grow together, where the mu_k are the N real roots
//! of
//!
//!   (1/N) sum_k lambda_k / (lambda_k - mu) = T / N.
//!
//! The roots interlace the sample eigenvalues (one per gap, counting a
//! virtual eigenvalue at zero), which makes bracketed bisection safe, and
//! the corrected spectrum always has a smaller dynamic range than the raw
//! one. Replacing the eigenvalues of the sample matrix by gamma while
//! keeping its eigenvectors yields the modified sample matrix used by the
//! structure test.

use crate::error::{Error, Result};
use crate::numerics::{hermitian_eig, hermitize, pd_cholesky, CMat};

/// Corrected spectrum bundle. `lambda_hat` holds the (tie-separated)
/// sample eigenvalues actually used, ascending; `mu_hat` the interlacing
/// roots; `gamma_hat` the corrected values matched positionally to
/// `lambda_hat` (not necessarily ascending: when two sample eigenvalues
/// nearly coincide, the root caught between them pushes one corrected
/// value down). The dynamic-range contraction therefore concerns the
/// corrected endpoints: gamma for the largest over gamma for the smallest
/// sample eigenvalue stays below lambda_max/lambda_min.
#[derive(Debug, Clone)]
pub struct EigenCorrection {
    pub lambda_hat: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub gamma_hat: Vec<f64>,
    pub c: f64,
    pub ties_perturbed: bool,
}

/// Eigenvalues closer than this fraction of the largest one are separated
/// before root finding; exact ties put two poles on top of each other and
/// erase one bracketing interval.
const TIE_SEP_REL: f64 = 1e-12;

/// Bisection brackets are inset from the poles by this fraction of the
/// largest eigenvalue.
const BRACKET_INSET_REL: f64 = 1e-14;

fn check_spectrum(lambda: &[f64]) -> Result<f64> {
    if lambda.is_empty() {
        return Err(Error::Domain("empty spectrum".into()));
    }
    let mut prev = 0.0;
    for (k, &l) in lambda.iter().enumerate() {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Domain(format!(
                "sample eigenvalue {k} is {l}; all must be positive"
            )));
        }
        if l < prev {
            return Err(Error::Domain(format!(
                "sample eigenvalues must be ascending; index {k} breaks order"
            )));
        }
        prev = l;
    }
    Ok(lambda[lambda.len() - 1])
}

fn separate_ties(lambda: &[f64], lambda_max: f64) -> (Vec<f64>, bool) {
    let sep = TIE_SEP_REL * lambda_max;
    let mut out = lambda.to_vec();
    let mut perturbed = false;
    for k in 1..out.len() {
        if out[k] - out[k - 1] < sep {
            out[k] = out[k - 1] + sep;
            perturbed = true;
        }
    }
    (out, perturbed)
}

/// One root of (1/N) sum lambda/(lambda - mu) = 1/c inside (left, lambda[k]),
/// solved in the gap variable g = lambda[k] - mu. Near the vanishing-aspect
/// limit the root hugs the upper pole and mu itself cannot resolve it, but g
/// carries full relative precision and the pole term lambda[k]/g evaluates
/// without cancellation. Returns (mu, g).
fn root_in_gap(lambda: &[f64], c: f64, k: usize, left: f64, lambda_max: f64) -> Result<(f64, f64)> {
    let n = lambda.len() as f64;
    let lk = lambda[k];
    let target = 1.0 / c;
    let h = |g: f64| -> f64 {
        let mut s = lk / g;
        for (j, &l) in lambda.iter().enumerate() {
            if j != k {
                s += l / ((l - lk) + g);
            }
        }
        s / n - target
    };
    let hp = |g: f64| -> f64 {
        let mut s = -lk / (g * g);
        for (j, &l) in lambda.iter().enumerate() {
            if j != k {
                let d = (l - lk) + g;
                s -= l / (d * d);
            }
        }
        s / n
    };

    let width = lk - left;
    let inset = (BRACKET_INSET_REL * lambda_max).min(0.25 * width);
    // h decreases from +inf at g -> 0 to a negative value at the far end of
    // the gap; bisect on ln g so poles that attract the root exponentially
    // are still resolved.
    let mut x_lo = (1e-300f64).ln();
    let mut x_hi = (width - inset).ln();
    for _ in 0..200 {
        let x_mid = 0.5 * (x_lo + x_hi);
        if x_mid <= x_lo || x_mid >= x_hi {
            break;
        }
        if h(x_mid.exp()) < 0.0 {
            x_hi = x_mid;
        } else {
            x_lo = x_mid;
        }
    }
    let (g_lo, g_hi) = (x_lo.exp(), x_hi.exp());
    let mut g = 0.5 * (g_lo + g_hi);
    let mut best = h(g).abs();
    for _ in 0..10 {
        let next = g - h(g) / hp(g);
        if !(next > g_lo && next < g_hi) {
            break;
        }
        let resid = h(next).abs();
        if resid >= best {
            break;
        }
        g = next;
        best = resid;
    }

    // Achievable residual is limited by cancellation among the summed
    // terms; below that floor (relevant only for near-tied spectra) the
    // contract check would reject every representable g.
    let term_scale = {
        let mut s = (lk / g).abs();
        for (j, &l) in lambda.iter().enumerate() {
            if j != k {
                s += (l / ((l - lk) + g)).abs();
            }
        }
        s / n
    };
    let tol = (1e-10 * target).max(64.0 * f64::EPSILON * term_scale);
    if best <= tol {
        Ok((lk - g, g))
    } else {
        Err(Error::Internal(format!(
            "root residual {best:.3e} exceeds tolerance in gap ({left:.6e}, {lk:.6e})"
        )))
    }
}

/// All N roots of the eigenvalue-splitting equation, one per gap below
/// each sample eigenvalue (the gap below the smallest starts at zero).
/// Requires the spectrum ascending and positive and c = N/T in (0, 1).
pub fn mestre_roots(lambda_hat: &[f64], c: f64) -> Result<Vec<f64>> {
    let lambda_max = check_spectrum(lambda_hat)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Domain(format!("aspect ratio c = {c} must be positive")));
    }
    if c >= 1.0 {
        return Err(Error::Domain(format!(
            "aspect ratio c = {c} >= 1: need strictly more snapshots than array elements"
        )));
    }
    let (lambda, _) = separate_ties(lambda_hat, lambda_max);
    Ok(roots_of_separated(&lambda, c, lambda_max)?
        .into_iter()
        .map(|(mu, _)| mu)
        .collect())
}

fn roots_of_separated(lambda: &[f64], c: f64, lambda_max: f64) -> Result<Vec<(f64, f64)>> {
    let mut roots = Vec::with_capacity(lambda.len());
    let mut left = 0.0;
    for (k, &l) in lambda.iter().enumerate() {
        roots.push(root_in_gap(lambda, c, k, left, lambda_max)?);
        left = l;
    }
    Ok(roots)
}

/// Corrected spectrum gamma_k = T (lambda_k - mu_k) for T snapshots.
pub fn mestre_correct(lambda_hat: &[f64], t: usize) -> Result<EigenCorrection> {
    let n = lambda_hat.len();
    if t <= n {
        return Err(Error::Domain(format!(
            "snapshot count {t} must exceed dimension {n} for the correction"
        )));
    }
    let lambda_max = check_spectrum(lambda_hat)?;
    let c = n as f64 / t as f64;
    let (lambda, ties_perturbed) = separate_ties(lambda_hat, lambda_max);
    let pairs = roots_of_separated(&lambda, c, lambda_max)?;
    // gamma = T (lambda - mu) computed from the gap variable directly;
    // the subtraction would throw away the root's precision near poles.
    let gamma: Vec<f64> = pairs.iter().map(|&(_, g)| t as f64 * g).collect();
    let mu: Vec<f64> = pairs.into_iter().map(|(mu, _)| mu).collect();
    Ok(EigenCorrection {
        lambda_hat: lambda,
        mu_hat: mu,
        gamma_hat: gamma,
        c,
        ties_perturbed,
    })
}

/// Sample matrix with its eigenvalues replaced by the corrected spectrum,
/// eigenvectors untouched.
pub fn modify_matrix(r: &CMat, t: usize) -> Result<CMat> {
    let eig = hermitian_eig(&hermitize(r))?;
    let correction = mestre_correct(&eig.eigenvalues, t)?;
    let out = eig.assemble(&correction.gamma_hat);
    if pd_cholesky(&out).is_none() {
        return Err(Error::Internal(
            "corrected matrix lost positive definiteness".into(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{max_abs, C64};
    use crate::scenario::{streamed_sample_covariance, trial_rng, SUBSTREAM_SNAPSHOTS};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spread(v: &[f64]) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &x in v {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        hi / lo
    }

    #[test]
    fn single_eigenvalue_is_analytic() {
        let mu = mestre_roots(&[2.0], 0.3).unwrap();
        assert!(
            (mu[0] - 2.0 * 0.7).abs() <= 1e-12,
            "scalar equation solves to lambda(1-c), got {}",
            mu[0]
        );
        let corr = mestre_correct(&[2.0], 10).unwrap();
        assert!((corr.gamma_hat[0] - 2.0).abs() <= 1e-10, "n=1 correction is exact");
    }

    #[test]
    fn two_eigenvalue_quadratic_case() {
        // lambda = {1, 2}, c = 1/2: roots of 4 mu^2 - 9 mu + 4 = 0.
        let s17 = 17f64.sqrt();
        let mu = mestre_roots(&[1.0, 2.0], 0.5).unwrap();
        assert!((mu[0] - (9.0 - s17) / 8.0).abs() <= 1e-9, "mu_1 = (9-sqrt17)/8, got {}", mu[0]);
        assert!((mu[1] - (9.0 + s17) / 8.0).abs() <= 1e-9, "mu_2 = (9+sqrt17)/8, got {}", mu[1]);

        let corr = mestre_correct(&[1.0, 2.0], 4).unwrap();
        assert!((corr.gamma_hat[0] - 4.0 * (1.0 - (9.0 - s17) / 8.0)).abs() <= 1e-9);
        assert!((corr.gamma_hat[1] - 4.0 * (2.0 - (9.0 + s17) / 8.0)).abs() <= 1e-9);
        assert!((corr.gamma_hat[0] - 1.5615528128).abs() <= 1e-9);
        assert!((corr.gamma_hat[1] - 1.4384471872).abs() <= 1e-9);
    }

    #[test]
    fn vanishing_aspect_ratio_recovers_spectrum() {
        let lambda = [0.5, 1.3, 2.7];
        let mu = mestre_roots(&lambda, 1e-6).unwrap();
        for (l, m) in lambda.iter().zip(mu.iter()) {
            assert!(
                (l - m).abs() <= 1e-4 * l,
                "mu -> lambda as c -> 0: {l} vs {m}"
            );
        }
        let corr = mestre_correct(&lambda, 3_000_000).unwrap();
        for (l, g) in lambda.iter().zip(corr.gamma_hat.iter()) {
            assert!((l - g).abs() <= 1e-4 * l, "gamma -> lambda as c -> 0: {l} vs {g}");
        }
    }

    #[test]
    fn residual_interlacing_positivity_and_trace_on_random_spectra() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..1000 {
            let n = rng.gen_range(2..=20usize);
            // Cumulative gaps keep eigenvalues separated; at near-tied
            // spectra the equation itself is too ill-conditioned in f64
            // for a 1e-10 residual to be representable.
            let mut lambda = Vec::with_capacity(n);
            let mut acc = 0.0;
            for _ in 0..n {
                acc += 0.01 + 0.99 * rng.gen::<f64>();
                lambda.push(acc);
            }
            let c = 0.05 + 0.9 * rng.gen::<f64>();
            let mu = mestre_roots(&lambda, c).unwrap();

            let target = 1.0 / c;
            let mut left = 0.0;
            for (k, (&l, &m)) in lambda.iter().zip(mu.iter()).enumerate() {
                assert!(m > left && m < l, "root {k} must interlace ({left}, {l}), got {m}");
                let resid =
                    (lambda.iter().map(|&x| x / (x - m)).sum::<f64>() / n as f64 - target).abs();
                assert!(resid <= 1e-10 * target, "root residual {resid:.3e} too large");
                left = l;
            }

            // gamma positivity and exact trace preservation, using any T
            // consistent with c < 1.
            let t = (n as f64 / c).ceil() as usize + 1;
            let corr = mestre_correct(&lambda, t).unwrap();
            let sum_l: f64 = corr.lambda_hat.iter().sum();
            let sum_g: f64 = corr.gamma_hat.iter().sum();
            for &g in &corr.gamma_hat {
                assert!(g > 0.0, "corrected eigenvalue must stay positive");
            }
            assert!(
                (sum_l - sum_g).abs() <= 1e-8 * sum_l,
                "correction preserves the trace: {sum_l} vs {sum_g}"
            );
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(mestre_roots(&[1.0, 2.0], 1.0), Err(Error::Domain(_))));
        assert!(matches!(mestre_roots(&[1.0, 2.0], 1.7), Err(Error::Domain(_))));
        assert!(matches!(mestre_roots(&[-1.0, 2.0], 0.5), Err(Error::Domain(_))));
        assert!(matches!(mestre_roots(&[2.0, 1.0], 0.5), Err(Error::Domain(_))));
        assert!(matches!(mestre_correct(&[1.0, 2.0], 2), Err(Error::Domain(_))));
    }

    #[test]
    fn exact_ties_are_separated_and_flagged() {
        let corr = mestre_correct(&[1.0, 1.0, 1.0], 30).unwrap();
        assert!(corr.ties_perturbed, "exact ties must be flagged");
        let mut left = 0.0;
        for (&l, &m) in corr.lambda_hat.iter().zip(corr.mu_hat.iter()) {
            assert!(m > left && m < l, "interlacing must survive tie separation");
            left = l;
        }
        let sum_g: f64 = corr.gamma_hat.iter().sum();
        assert!((sum_g - 3.0).abs() <= 1e-6, "trace preserved through tie handling");
    }

    #[test]
    fn wishart_spectra_shrink_in_dynamic_range() {
        let nn = 17;
        let ident = CMat::identity(nn, nn);
        for (case, t) in [(0u64, 85usize), (1u64, 300usize)] {
            let mut shrunk = 0;
            let trials = 1000;
            for trial in 0..trials {
                let mut rng = trial_rng(1000 + case, trial, SUBSTREAM_SNAPSHOTS);
                let r = streamed_sample_covariance(&ident, t, &mut rng);
                let eig = hermitian_eig(&r).unwrap();
                let corr = mestre_correct(&eig.eigenvalues, t).unwrap();
                let lambda_range = corr.lambda_hat[nn - 1] / corr.lambda_hat[0];
                let gamma_range = corr.gamma_hat[nn - 1] / corr.gamma_hat[0];
                if gamma_range < lambda_range {
                    shrunk += 1;
                }
            }
            assert!(
                shrunk * 100 >= trials * 99,
                "dynamic range must shrink in >= 99% of trials at T={t}; got {shrunk}/{trials}"
            );
        }
    }

    #[test]
    fn modify_matrix_keeps_eigenvectors_and_spectrum_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        for n in [3usize, 8] {
            // Random PD Hermitian matrix via A A^H + I.
            let a = CMat::from_fn(n, n, |_, _| {
                C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let r = hermitize(&(&a * a.adjoint())) + CMat::identity(n, n);
            let t = 6 * n;
            let m = modify_matrix(&r, t).unwrap();

            // Shared eigenvectors make the two matrices commute.
            let comm = &m * &r - &r * &m;
            assert!(
                max_abs(&comm) <= 1e-9 * max_abs(&r) * max_abs(&m),
                "modified matrix must commute with the original"
            );

            let eig = hermitian_eig(&r).unwrap();
            let corr = mestre_correct(&eig.eigenvalues, t).unwrap();
            let mut want = corr.gamma_hat.clone();
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let got = hermitian_eig(&m).unwrap().eigenvalues;
            for (w, g) in want.iter().zip(got.iter()) {
                assert!((w - g).abs() <= 1e-9 * w.abs(), "modified spectrum mismatch: {w} vs {g}");
            }
        }
    }

    #[test]
    fn modify_matrix_is_identity_in_the_classical_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let n = 4;
        let a = CMat::from_fn(n, n, |_, _| {
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let r = hermitize(&(&a * a.adjoint())) + CMat::identity(n, n);
        let m = modify_matrix(&r, 4_000_000).unwrap();
        assert!(
            max_abs(&(&m - &r)) <= 1e-4 * max_abs(&r),
            "c -> 0 leaves the matrix unchanged"
        );
    }

    #[test]
    fn scaled_identity_survives_as_degenerate_case() {
        let r = CMat::identity(5, 5) * C64::new(3.0, 0.0);
        let m = modify_matrix(&r, 50).unwrap();
        assert!(pd_cholesky(&m).is_some(), "degenerate input still yields a PD matrix");
        let tr: f64 = (0..5).map(|j| m[(j, j)].re).sum();
        assert!((tr - 15.0).abs() <= 1e-6, "trace preserved for the tied spectrum");
    }
}
