//! Dense complex linear-algebra kernels and scalar special functions.
//!
//! Everything downstream works with Hermitian matrices, so the kernels here
//! are specialized accordingly: eigendecomposition with ascending eigenvalues,
//! a PSD matrix square root with a small negative-eigenvalue clamp, polynomial
//! root finding through a balanced companion matrix, and the Bessel function
//! J0. All functions are pure; matrices are freely shareable across threads.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Relative tolerance for accepting a matrix as Hermitian.
pub const HERMITIAN_REL_TOL: f64 = 1e-12;

/// Largest entry magnitude, zero for an empty matrix.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest magnitude of M - M^H over all entries.
pub fn hermitian_deviation(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for j in 0..n {
        for k in j..n {
            dev = dev.max((m[(j, k)] - m[(k, j)].conj()).norm());
        }
    }
    dev
}

/// Rejects matrices that are not square and Hermitian within
/// `HERMITIAN_REL_TOL` relative to the largest entry.
pub fn check_hermitian(m: &CMat) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Structural(format!(
            "expected a nonempty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = max_abs(m);
    let dev = hermitian_deviation(m);
    if dev > HERMITIAN_REL_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Structural(format!(
            "matrix is not Hermitian: deviation {dev:.3e} exceeds {HERMITIAN_REL_TOL:.0e} of scale {scale:.3e}"
        )));
    }
    Ok(())
}

/// Exact Hermitian part (M + M^H) / 2.
pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Cholesky factorization that actually certifies positive definiteness.
/// nalgebra's complex Cholesky accepts any pivot with a complex square
/// root, so indefinite Hermitian matrices pass through silently; this
/// wrapper additionally demands a finite, real, strictly positive factor
/// diagonal and returns None otherwise.
pub fn pd_cholesky(m: &CMat) -> Option<nalgebra::Cholesky<C64, nalgebra::Dyn>> {
    let chol = nalgebra::Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    for j in 0..m.nrows() {
        let d = l[(j, j)];
        if !(d.re.is_finite() && d.re > 0.0 && d.im.abs() <= 1e-8 * d.re) {
            return None;
        }
    }
    Some(chol)
}

/// Eigendecomposition of a Hermitian matrix with real eigenvalues sorted
/// ascending; eigenvector columns are unit norm and mutually orthogonal.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMat,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Column of the eigenvector matrix for the k-th ascending eigenvalue.
    pub fn vector(&self, k: usize) -> CVec {
        self.eigenvectors.column(k).into_owned()
    }

    /// Reassemble V diag(values) V^H for arbitrary replacement eigenvalues.
    pub fn assemble(&self, values: &[f64]) -> CMat {
        assert_eq!(
            values.len(),
            self.dim(),
            "replacement spectrum length {} does not match dimension {}",
            values.len(),
            self.dim()
        );
        let n = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for k in 0..n {
            let lambda = C64::new(values[k], 0.0);
            for j in 0..n {
                scaled[(j, k)] *= lambda;
            }
        }
        hermitize(&(scaled * self.eigenvectors.adjoint()))
    }
}

/// Hermitian eigendecomposition with ascending eigenvalues.
pub fn hermitian_eig(m: &CMat) -> Result<EigenDecomposition> {
    check_hermitian(m)?;
    let work = hermitize(m);
    let eig = nalgebra::SymmetricEigen::new(work);
    let n = eig.eigenvalues.len();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Internal(
            "eigendecomposition produced non-finite eigenvalues".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("eigenvalues are finite")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut eigenvectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Hermitian PSD square root. Eigenvalues slightly negative from roundoff
/// (above -1e-10 of the largest) are clamped to zero; anything below that
/// is rejected as indefinite.
pub fn hermitian_sqrt(m: &CMat) -> Result<CMat> {
    let eig = hermitian_eig(m)?;
    let lambda_max = eig.eigenvalues.last().copied().unwrap_or(0.0).max(0.0);
    let floor = -1.0e-10 * lambda_max;
    if let Some(&lambda_min) = eig.eigenvalues.first() {
        if lambda_min < floor {
            return Err(Error::Domain(format!(
                "matrix is indefinite: min eigenvalue {lambda_min:.6e} below clamp floor {floor:.6e}"
            )));
        }
    }
    let sqrt_values: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&v| v.max(0.0).sqrt())
        .collect();
    Ok(eig.assemble(&sqrt_values))
}

/// Horner evaluation of a polynomial with ascending coefficients.
pub fn poly_eval(coeffs: &[C64], z: C64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        acc = acc * z + c;
    }
    acc
}

/// Expand leading * prod_k (z - r_k) into ascending coefficients.
pub fn poly_from_roots(roots: &[C64], leading: C64) -> Vec<C64> {
    let mut coeffs = vec![leading];
    for &r in roots {
        let mut next = vec![C64::new(0.0, 0.0); coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= c * r;
        }
        coeffs = next;
    }
    coeffs
}

/// All complex roots (with multiplicity) of a polynomial given by ascending
/// coefficients, via a balanced companion matrix plus one Newton polish.
pub fn poly_roots(coeffs: &[C64]) -> Result<Vec<C64>> {
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Domain("zero polynomial has no defined roots".into()));
    }
    let mut trimmed: Vec<C64> = coeffs.to_vec();
    while let Some(last) = trimmed.last() {
        if last.norm() > 1e-300 {
            break;
        }
        trimmed.pop();
    }
    let degree = trimmed.len().saturating_sub(1);
    if degree == 0 {
        return Err(Error::Domain(
            "constant polynomial has no roots to locate".into(),
        ));
    }
    let lead = trimmed[degree];
    let mut companion = CMat::zeros(degree, degree);
    for k in 1..degree {
        companion[(k, k - 1)] = C64::new(1.0, 0.0);
    }
    for k in 0..degree {
        companion[(k, degree - 1)] = -trimmed[k] / lead;
    }
    balance_in_place(&mut companion);
    let schur = nalgebra::linalg::Schur::try_new(companion, 1.0e-14, 50_000)
        .ok_or_else(|| Error::Internal("companion Schur iteration failed to converge".into()))?;
    let raw = schur
        .eigenvalues()
        .ok_or_else(|| Error::Internal("companion eigenvalues unavailable".into()))?;

    let deriv: Vec<C64> = trimmed
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| c * (k as f64))
        .collect();
    let mut roots = Vec::with_capacity(degree);
    for &z0 in raw.iter() {
        // Newton polish while it strictly reduces |p|; Schur estimates of
        // ill-conditioned companion eigenvalues need a few corrections.
        let mut z = z0;
        let mut best = poly_eval(&trimmed, z).norm();
        for _ in 0..20 {
            let p = poly_eval(&trimmed, z);
            let dp = poly_eval(&deriv, z);
            if dp.norm() <= 1e-300 {
                break;
            }
            let candidate = z - p / dp;
            let cand_norm = poly_eval(&trimmed, candidate).norm();
            if cand_norm < best {
                z = candidate;
                best = cand_norm;
            } else {
                break;
            }
        }
        roots.push(z);
    }
    Ok(roots)
}

/// Parlett-Reinsch diagonal balancing with radix-2 scale factors; a
/// similarity transform, so eigenvalues are unchanged.
fn balance_in_place(a: &mut CMat) {
    let n = a.nrows();
    let radix = 2.0_f64;
    for _pass in 0..64 {
        let mut converged = true;
        for i in 0..n {
            let mut c: f64 = (0..n).filter(|&j| j != i).map(|j| a[(j, i)].norm()).sum();
            let mut r: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)].norm()).sum();
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            while c < r / radix {
                c *= radix;
                r /= radix;
                f *= radix;
            }
            while c >= r * radix {
                c /= radix;
                r *= radix;
                f /= radix;
            }
            if (c + r) < 0.95 * s && f != 1.0 {
                converged = false;
                let inv = 1.0 / f;
                for j in 0..n {
                    a[(i, j)] *= C64::new(inv, 0.0);
                }
                for j in 0..n {
                    a[(j, i)] *= C64::new(f, 0.0);
                }
            }
        }
        if converged {
            break;
        }
    }
}

/// Bessel function of the first kind, order zero.
///
/// Ascending power series up to |x| = 12, above that the Hankel asymptotic
/// expansion truncated at its smallest term. Both branches stay below 3e-12
/// absolute error on |x| <= 100.
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax == 0.0 {
        return 1.0;
    }
    if ax <= 12.0 {
        bessel_j0_series(ax)
    } else {
        bessel_j0_asymptotic(ax)
    }
}

fn bessel_j0_series(ax: f64) -> f64 {
    let q = ax * ax / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=200u32 {
        let kf = k as f64;
        term *= -q / (kf * kf);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1.0) {
            break;
        }
    }
    sum
}

fn bessel_j0_asymptotic(ax: f64) -> f64 {
    // P + iQ = sum_k i^k t_k with t_0 = 1, t_k = t_{k-1} * -(2k-1)^2 / (8 k x),
    // truncated at the first term that stops decreasing.
    let mut t = 1.0_f64;
    let mut last = 1.0_f64;
    let mut p = 1.0_f64;
    let mut q = 0.0_f64;
    for k in 1..60u32 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        t *= -(odd * odd) / (8.0 * kf * ax);
        if t.abs() > last {
            break;
        }
        last = t.abs();
        match k % 4 {
            0 => p += t,
            1 => q += t,
            2 => p -= t,
            _ => q -= t,
        }
        if t.abs() < 1e-18 {
            break;
        }
    }
    let chi = ax - std::f64::consts::FRAC_PI_4;
    (2.0 / (std::f64::consts::PI * ax)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut w = x - tau * (x / tau).round();
    if w <= -std::f64::consts::PI {
        w += tau;
    }
    if w > std::f64::consts::PI {
        w -= tau;
    }
    w
}
