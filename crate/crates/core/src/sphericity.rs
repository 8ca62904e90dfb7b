//! Sphericity likelihood-ratio testing of covariance structure.
//!
//! The statistic compares a sample covariance R against a candidate matrix
//! M through the eigenvalues of R M^{-1}:
//!
//!   log LR = log det(R M^{-1}) - N log(Tr(R M^{-1}) / N)
//!
//! which is the log of (geometric mean / arithmetic mean)^N of those
//! eigenvalues, hence always <= 0 with equality exactly when R is
//! proportional to M. The statistic is invariant to positive scaling of
//! either argument, and under a true hypothesis its distribution depends
//! only on (N, T), so a Monte Carlo null table built from identity-
//! covariance Wishart draws calibrates the test for any scenario.
//!
//! The Toeplitz-origin pipeline chains the optional random-matrix
//! eigenvalue correction, maximum-entropy Toeplitz reconstruction, and the
//! statistic of the (corrected) sample matrix against its own
//! reconstruction; a verdict falls out by comparing against a lower-tail
//! quantile of a caller-supplied reference distribution.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{hermitize, pd_cholesky, CMat};
use crate::rmt::modify_matrix;
use crate::scenario::{streamed_sample_covariance, trial_rng, SUBSTREAM_SNAPSHOTS};
use crate::toeplitz::reconstruct;

/// Log of the sphericity likelihood ratio; exp(log_lr) lies in (0, 1].
#[derive(Debug, Clone, Copy)]
pub struct LrStatistic {
    pub log_lr: f64,
}

/// Log-LR statistic of R against M. Needs both matrices positive definite;
/// a rank-deficient sample matrix (fewer snapshots than elements) is a
/// domain error.
pub fn lr_stat(r_hat: &CMat, m: &CMat) -> Result<LrStatistic> {
    let n = r_hat.nrows();
    if m.nrows() != n || !r_hat.is_square() || !m.is_square() {
        return Err(Error::Structural(format!(
            "dimension mismatch: sample {}x{}, reference {}x{}",
            r_hat.nrows(),
            r_hat.ncols(),
            m.nrows(),
            m.ncols()
        )));
    }
    let chol_m = pd_cholesky(&hermitize(m))
        .ok_or_else(|| Error::Domain("reference matrix is not positive definite".into()))?;
    let chol_r = pd_cholesky(&hermitize(r_hat)).ok_or_else(|| {
        Error::Domain(
            "sample matrix is rank deficient; the statistic needs at least N snapshots".into(),
        )
    })?;
    if n == 1 {
        // Scalar case: geometric and arithmetic means coincide identically.
        return Ok(LrStatistic { log_lr: 0.0 });
    }
    let log_det = |chol: &nalgebra::Cholesky<crate::numerics::C64, nalgebra::Dyn>| -> f64 {
        let l = chol.l_dirty();
        2.0 * (0..n).map(|j| l[(j, j)].re.ln()).sum::<f64>()
    };
    let x = chol_m.solve(r_hat);
    let trace: f64 = (0..n).map(|j| x[(j, j)].re).sum();
    if !(trace > 0.0) {
        return Err(Error::Internal(format!("trace of R M^-1 came out as {trace}")));
    }
    let log_lr = (log_det(&chol_r) - log_det(&chol_m)) - n as f64 * (trace / n as f64).ln();
    if log_lr > 0.0 {
        if log_lr > 1e-8 {
            return Err(Error::Internal(format!(
                "log likelihood ratio {log_lr:.3e} is positive beyond rounding"
            )));
        }
        return Ok(LrStatistic { log_lr: 0.0 });
    }
    Ok(LrStatistic { log_lr })
}

/// Sorted Monte Carlo draws of the statistic under a true hypothesis for
/// one (N, T); doubles as a container for any reference distribution of
/// log-LR draws (always non-positive).
#[derive(Debug, Clone)]
pub struct NullDistribution {
    n: usize,
    t: usize,
    seed: u64,
    samples: Vec<f64>,
}

impl NullDistribution {
    /// Wraps externally produced draws; sorts them and validates range.
    pub fn from_samples(n: usize, t: usize, seed: u64, mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("reference distribution needs at least one draw".into()));
        }
        for &s in &samples {
            if !(s <= 0.0) || !s.is_finite() && s != f64::NEG_INFINITY {
                return Err(Error::Domain(format!(
                    "log-LR draw {s} is not a non-positive real"
                )));
            }
        }
        samples.sort_by(|a, b| a.partial_cmp(b).expect("draws validated finite"));
        Ok(Self { n, t, seed, samples })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trials(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Nearest-rank lower-tail quantile.
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::Domain(format!("quantile level {alpha} outside (0, 1)")));
        }
        let len = self.samples.len();
        let rank = (alpha * len as f64).ceil() as usize;
        Ok(self.samples[rank.clamp(1, len) - 1])
    }

    /// Plain-text cache: one header line, then one draw per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!(
            "N={} T={} trials={} seed={}\n",
            self.n,
            self.t,
            self.samples.len(),
            self.seed
        ));
        for s in &self.samples {
            out.push_str(&format!("{s:.16e}\n"));
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty null-distribution cache".into()))??;
        let mut n = None;
        let mut t = None;
        let mut trials = None;
        let mut seed = None;
        for part in header.split_whitespace() {
            let (key, value) = part.split_once('=').ok_or_else(|| {
                Error::Config(format!("malformed cache header field '{part}'"))
            })?;
            match key {
                "N" => n = Some(value.parse::<usize>()),
                "T" => t = Some(value.parse::<usize>()),
                "trials" => trials = Some(value.parse::<usize>()),
                "seed" => seed = Some(value.parse::<u64>()),
                other => {
                    return Err(Error::Config(format!("unknown cache header field '{other}'")))
                }
            }
        }
        let bad = |what: &str| Error::Config(format!("cache header missing or invalid {what}"));
        let n = n.ok_or_else(|| bad("N"))?.map_err(|_| bad("N"))?;
        let t = t.ok_or_else(|| bad("T"))?.map_err(|_| bad("T"))?;
        let trials = trials.ok_or_else(|| bad("trials"))?.map_err(|_| bad("trials"))?;
        let seed = seed.ok_or_else(|| bad("seed"))?.map_err(|_| bad("seed"))?;
        let mut samples = Vec::with_capacity(trials);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            samples.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad cache sample line '{line}'")))?,
            );
        }
        if samples.len() != trials {
            return Err(Error::Config(format!(
                "cache announces {trials} draws but contains {}",
                samples.len()
            )));
        }
        Self::from_samples(n, t, seed, samples)
    }
}

/// Monte Carlo null distribution of the statistic for (N, T): draws of
/// lr_stat(Wishart(I, T)/T, I), one RNG stream per trial, sorted.
pub fn null_samples(n: usize, t: usize, trials: usize, seed: u64) -> Result<NullDistribution> {
    if t < n {
        return Err(Error::Domain(format!(
            "null distribution needs T >= N, got T={t}, N={n}"
        )));
    }
    if trials == 0 {
        return Err(Error::Domain("trial count must be positive".into()));
    }
    let ident = CMat::identity(n, n);
    let samples: Result<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial, SUBSTREAM_SNAPSHOTS);
            let r = streamed_sample_covariance(&ident, t, &mut rng);
            Ok(lr_stat(&r, &ident)?.log_lr)
        })
        .collect();
    NullDistribution::from_samples(n, t, seed, samples?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    ToeplitzOrigin,
    NonToeplitzOrigin,
}

#[derive(Debug, Clone, Copy)]
pub struct OriginTest {
    pub verdict: Verdict,
    pub log_lr: f64,
}

/// Tests whether a sample covariance is consistent with a Toeplitz-origin
/// process: optional eigenvalue correction, maximum-entropy Toeplitz
/// reconstruction, then the statistic of the (corrected) sample against
/// its own reconstruction, thresholded at the alpha-quantile of the
/// supplied reference distribution.
pub fn toeplitz_origin_test(
    r_hat: &CMat,
    t: usize,
    use_rmt: bool,
    null: &NullDistribution,
    alpha: f64,
) -> Result<OriginTest> {
    if null.n() != r_hat.nrows() || null.t() != t {
        return Err(Error::Domain(format!(
            "reference distribution is for (N={}, T={}), data is (N={}, T={t})",
            null.n(),
            null.t(),
            r_hat.nrows()
        )));
    }
    let corrected = if use_rmt {
        modify_matrix(r_hat, t)?
    } else {
        r_hat.clone()
    };
    let (t_hat, _) = reconstruct(&corrected)?;
    let log_lr = lr_stat(&corrected, &t_hat.expand())?.log_lr;
    let verdict = if log_lr < null.quantile(alpha)? {
        Verdict::NonToeplitzOrigin
    } else {
        Verdict::ToeplitzOrigin
    };
    Ok(OriginTest { verdict, log_lr })
}

/// Two-sample Kolmogorov-Smirnov distance between sorted samples.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS distance needs non-empty samples");
    debug_assert!(a.windows(2).all(|w| w[0] <= w[1]), "first sample must be sorted");
    debug_assert!(b.windows(2).all(|w| w[0] <= w[1]), "second sample must be sorted");
    let (mut i, mut j) = (0usize, 0usize);
    let mut dist = 0.0f64;
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        let fa = i as f64 / a.len() as f64;
        let fb = j as f64 / b.len() as f64;
        dist = dist.max((fa - fb).abs());
    }
    dist
}
