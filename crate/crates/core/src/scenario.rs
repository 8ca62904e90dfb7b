//! True covariance models, calibration phase errors, and snapshot simulation.
//!
//! The signal model is Y_t = D(Phi) T^{1/2} xi_t with xi_t circular complex
//! Gaussian, unit total variance per component, D(Phi) = diag(exp(i phi_l)),
//! and T a Hermitian Toeplitz covariance built from band-limited sinc
//! correlation plus a steered component and a small white-noise floor.
//!
//! Every random draw goes through an explicit counter-based ChaCha stream
//! derived from (seed, trial, substream), so serial and parallel runs of the
//! Monte Carlo harness produce identical numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{hermitian_sqrt, hermitize, wrap_angle, C64, CMat, CVec};

/// Substreams per trial in the ChaCha stream layout: 0 carries the phase
/// error draws, 1 the snapshot noise, the rest are reserved.
pub const SUBSTREAMS_PER_TRIAL: u64 = 8;
pub const SUBSTREAM_PHASES: u64 = 0;
pub const SUBSTREAM_SNAPSHOTS: u64 = 1;

/// Deterministic per-trial generator: one ChaCha8 stream per
/// (seed, trial, substream) triple.
pub fn trial_rng(seed: u64, trial: u64, substream: u64) -> ChaCha8Rng {
    assert!(
        substream < SUBSTREAMS_PER_TRIAL,
        "substream {substream} outside the reserved layout"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_mul(SUBSTREAMS_PER_TRIAL) + substream);
    rng
}

/// Hermitian Toeplitz matrix stored as its first column; t_0 is real
/// positive and entry (j, k) expands to t_{j-k} for j >= k, conjugate above.
#[derive(Debug, Clone)]
pub struct ToeplitzHermitian {
    first_col: Vec<C64>,
}

impl ToeplitzHermitian {
    pub fn new(first_col: Vec<C64>) -> Result<Self> {
        if first_col.is_empty() {
            return Err(Error::Structural("empty first column".into()));
        }
        let t0 = first_col[0];
        if !(t0.re > 0.0) || t0.im.abs() > 1e-12 * t0.re.abs() {
            return Err(Error::Structural(format!(
                "t_0 must be real positive, got {t0}"
            )));
        }
        let mut col = first_col;
        col[0] = C64::new(col[0].re, 0.0);
        Ok(Self { first_col: col })
    }

    pub fn dim(&self) -> usize {
        self.first_col.len()
    }

    pub fn first_col(&self) -> &[C64] {
        &self.first_col
    }

    /// Lag coefficient t_m for m in 0..N.
    pub fn lag(&self, m: usize) -> C64 {
        self.first_col[m]
    }

    pub fn expand(&self) -> CMat {
        let n = self.dim();
        CMat::from_fn(n, n, |j, k| {
            if j >= k {
                self.first_col[j - k]
            } else {
                self.first_col[k - j].conj()
            }
        })
    }

    /// Checked-Cholesky positive definiteness probe.
    pub fn is_positive_definite(&self) -> bool {
        crate::numerics::pd_cholesky(&self.expand()).is_some()
    }
}

/// Per-element calibration phases in radians; element 0 is the reference
/// and pinned to exactly zero, the rest live in (-pi, pi].
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector {
    phases: Vec<f64>,
}

impl PhaseVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            phases: vec![0.0; n],
        }
    }

    /// Validating constructor: element 0 must already be zero.
    pub fn from_radians(phases: Vec<f64>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Structural("empty phase vector".into()));
        }
        if phases[0] != 0.0 {
            return Err(Error::Structural(format!(
                "reference element must be zero, got {}",
                phases[0]
            )));
        }
        Ok(Self {
            phases: phases.into_iter().map(wrap_angle).collect(),
        })
    }

    /// Re-reference an arbitrary phase profile: subtract element 0 from every
    /// element and wrap, so the invariant holds by construction.
    pub fn pinned(raw: &[f64]) -> Self {
        assert!(!raw.is_empty(), "cannot pin an empty phase profile");
        let r0 = raw[0];
        Self {
            phases: raw.iter().map(|&p| wrap_angle(p - r0)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.phases
    }

    pub fn to_degrees(&self) -> Vec<f64> {
        self.phases.iter().map(|p| p.to_degrees()).collect()
    }

    /// Diagonal of D(Phi) = diag(exp(i phi_l)).
    pub fn steering_diagonal(&self) -> CVec {
        CVec::from_iterator(
            self.len(),
            self.phases.iter().map(|&p| C64::new(p.cos(), p.sin())),
        )
    }
}

/// T snapshots of an N-element array, stored column-per-snapshot.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    data: CMat,
}

impl SnapshotSet {
    pub fn new(data: CMat) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(Error::Structural("empty snapshot set".into()));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Structural("snapshot set contains non-finite values".into()));
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn count(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &CMat {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    /// White floor + wideband sinc + steered half-power narrowband sinc.
    TwoSinc,
    /// White floor + single sinc band centered at zero.
    OneSinc,
    /// Steered narrowband sinc plus a small white floor, fully shifted.
    ShiftedSymmetric,
}

impl CovarianceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CovarianceKind::TwoSinc => "two_sinc",
            CovarianceKind::OneSinc => "one_sinc",
            CovarianceKind::ShiftedSymmetric => "shifted_symmetric",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "two_sinc" => Ok(CovarianceKind::TwoSinc),
            "one_sinc" => Ok(CovarianceKind::OneSinc),
            "shifted_symmetric" => Ok(CovarianceKind::ShiftedSymmetric),
            other => Err(Error::Config(format!(
                "unknown covariance_kind '{other}'; valid: two_sinc, one_sinc, shifted_symmetric"
            ))),
        }
    }
}

/// Full description of one simulated scenario. Angles are degrees in
/// configuration and reports; radians internally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "W1")]
    pub w1: f64,
    #[serde(rename = "W2")]
    pub w2: f64,
    pub theta0: f64,
    pub d_over_lambda: f64,
    /// White-noise floor q^{-2} in dB; -40 dB means 1e-4 * I added.
    pub q_inv_sq_db: f64,
    pub phi_max_deg: f64,
    pub covariance_kind: CovarianceKind,
    pub trials: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 17,
            t: 300,
            w1: 0.2,
            w2: 0.1,
            theta0: 20.0,
            d_over_lambda: 0.25,
            q_inv_sq_db: -40.0,
            phi_max_deg: 5.0,
            covariance_kind: CovarianceKind::TwoSinc,
            trials: 1000,
            seed: 7_2025,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("N must be at least 2, got {}", self.n)));
        }
        if self.t < 1 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        for (name, w) in [("W1", self.w1), ("W2", self.w2)] {
            if !(w > 0.0 && w <= 0.5) {
                return Err(Error::Config(format!("{name} must lie in (0, 0.5], got {w}")));
            }
        }
        if !(self.d_over_lambda > 0.0 && self.d_over_lambda <= 0.5) {
            return Err(Error::Config(format!(
                "d_over_lambda must lie in (0, 0.5], got {}",
                self.d_over_lambda
            )));
        }
        if !(self.theta0.abs() <= 90.0) {
            return Err(Error::Config(format!(
                "theta0 must satisfy |theta0| <= 90 degrees, got {}",
                self.theta0
            )));
        }
        if !(self.phi_max_deg >= 0.0 && self.phi_max_deg <= 180.0) {
            return Err(Error::Config(format!(
                "phi_max_deg must lie in [0, 180], got {}",
                self.phi_max_deg
            )));
        }
        if self.trials < 1 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        Ok(())
    }

    /// Linear white-noise floor 10^(q_inv_sq_db / 10).
    pub fn noise_floor(&self) -> f64 {
        10.0_f64.powf(self.q_inv_sq_db / 10.0)
    }
}

/// Per-lag value of the band-limited sinc correlation: 2W at lag 0,
/// sin(2 pi W m) / (pi m) beyond.
pub fn sinc_lag(w: f64, m: usize) -> f64 {
    if m == 0 {
        2.0 * w
    } else {
        let mf = m as f64;
        (std::f64::consts::TAU * w * mf).sin() / (std::f64::consts::PI * mf)
    }
}

/// Real symmetric band-limited sinc matrix with bandwidth W (cycles).
pub fn build_sinc_matrix(w: f64, n: usize) -> Result<CMat> {
    if !(w > 0.0 && w <= 0.5) {
        return Err(Error::Domain(format!("bandwidth W must lie in (0, 0.5], got {w}")));
    }
    Ok(CMat::from_fn(n, n, |j, k| {
        let m = j.abs_diff(k);
        C64::new(sinc_lag(w, m), 0.0)
    }))
}

/// Steering phase increment per element: 2 pi (d / lambda) sin(theta0).
pub fn steering_phase(theta0_deg: f64, d_over_lambda: f64) -> f64 {
    std::f64::consts::TAU * d_over_lambda * theta0_deg.to_radians().sin()
}

/// Diagonal of the steering matrix: element l carries exp(i l mu).
pub fn build_steering(theta0_deg: f64, d_over_lambda: f64, n: usize) -> CVec {
    let mu = steering_phase(theta0_deg, d_over_lambda);
    CVec::from_iterator(
        n,
        (0..n).map(|l| {
            let p = mu * l as f64;
            C64::new(p.cos(), p.sin())
        }),
    )
}

/// True Toeplitz covariance for the configured scenario kind.
pub fn build_covariance(cfg: &ScenarioConfig) -> Result<ToeplitzHermitian> {
    cfg.validate()?;
    let q2 = cfg.noise_floor();
    let mu = steering_phase(cfg.theta0, cfg.d_over_lambda);
    let n = cfg.n;
    let mut col = Vec::with_capacity(n);
    for m in 0..n {
        let shift = C64::new((mu * m as f64).cos(), (mu * m as f64).sin());
        let delta = if m == 0 { q2 } else { 0.0 };
        let t_m = match cfg.covariance_kind {
            CovarianceKind::TwoSinc => {
                C64::new(sinc_lag(cfg.w1, m) + delta, 0.0) + shift * (0.5 * sinc_lag(cfg.w2, m))
            }
            CovarianceKind::OneSinc => C64::new(sinc_lag(cfg.w1, m) + delta, 0.0),
            CovarianceKind::ShiftedSymmetric => shift * (sinc_lag(cfg.w2, m) + delta),
        };
        col.push(t_m);
    }
    let toeplitz = ToeplitzHermitian::new(col)?;
    if !toeplitz.is_positive_definite() {
        return Err(Error::Internal(
            "scenario covariance failed its positive definiteness check".into(),
        ));
    }
    Ok(toeplitz)
}

/// Independent uniform phase errors on [-phi_max, phi_max], element 0 pinned
/// to zero. Draws are taken as uniforms on (-1, 1) and scaled, so runs with
/// different phi_max but the same stream use proportional errors.
pub fn draw_phase_errors(phi_max_deg: f64, n: usize, rng: &mut ChaCha8Rng) -> PhaseVector {
    let phi_max = phi_max_deg.to_radians();
    let mut phases = Vec::with_capacity(n);
    phases.push(0.0);
    for _ in 1..n {
        let u: f64 = 2.0 * rng.gen::<f64>() - 1.0;
        phases.push(u * phi_max);
    }
    PhaseVector::from_radians(phases).expect("pinned by construction")
}

fn draw_standard_complex(n: usize, rng: &mut ChaCha8Rng, out: &mut [C64]) {
    // CN(0, 1): real and imaginary parts each with variance 1/2.
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for slot in out.iter_mut().take(n) {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *slot = C64::new(re * s, im * s);
    }
}

/// Simulate Y_t = D(Phi) T^{1/2} xi_t for t = 1..T.
pub fn generate_snapshots(
    t_n: &ToeplitzHermitian,
    phases: &PhaseVector,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SnapshotSet> {
    let n = t_n.dim();
    if phases.len() != n {
        return Err(Error::Structural(format!(
            "phase vector length {} does not match dimension {n}",
            phases.len()
        )));
    }
    if t == 0 {
        return Err(Error::Domain("snapshot count T must be positive".into()));
    }
    let sqrt = hermitian_sqrt(&t_n.expand())?;
    let d = phases.steering_diagonal();
    let mut xi = vec![C64::new(0.0, 0.0); n];
    let mut data = CMat::zeros(n, t);
    for col in 0..t {
        draw_standard_complex(n, rng, &mut xi);
        for j in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                acc += sqrt[(j, k)] * xi[k];
            }
            data[(j, col)] = d[j] * acc;
        }
    }
    SnapshotSet::new(data)
}

/// Sample covariance R = (1/T) sum Y_t Y_t^H.
pub fn sample_covariance(y: &SnapshotSet) -> CMat {
    let t = y.count() as f64;
    hermitize(&(y.data() * y.data().adjoint() / C64::new(t, 0.0)))
}

/// Error-free sample covariance computed without materializing snapshots:
/// accumulates M = sum xi_t xi_t^H rank-1 and returns S (M/T) S for
/// S = T^{1/2}. Draws xi in the exact order of `generate_snapshots`, so a
/// shared stream yields the identical matrix.
pub fn streamed_sample_covariance(sqrt: &CMat, t: usize, rng: &mut ChaCha8Rng) -> CMat {
    let n = sqrt.nrows();
    let mut m = CMat::zeros(n, n);
    let mut xi = vec![C64::new(0.0, 0.0); n];
    for _ in 0..t {
        draw_standard_complex(n, rng, &mut xi);
        for k in 0..n {
            let xk = xi[k].conj();
            for j in k..n {
                m[(j, k)] += xi[j] * xk;
            }
        }
    }
    for k in 0..n {
        for j in (k + 1)..n {
            m[(k, j)] = m[(j, k)].conj();
        }
    }
    m /= C64::new(t as f64, 0.0);
    hermitize(&(sqrt * m * sqrt))
}

/// Conjugate an error-free sample covariance by the phase-error diagonal:
/// D(Phi) R D(Phi)^H.
pub fn apply_phase_errors(r0: &CMat, phases: &PhaseVector) -> CMat {
    let n = r0.nrows();
    assert_eq!(phases.len(), n, "phase vector length must match matrix dimension");
    let d = phases.steering_diagonal();
    CMat::from_fn(n, n, |j, k| d[j] * r0[(j, k)] * d[k].conj())
}
