//! Monte Carlo experiment runner: builds the configured scenario, fans
//! trials across a work pool, and aggregates per-trial records into
//! summary statistics and histogram data.
//!
//! Error-metric conventions. Each estimator is scored modulo the reference
//! ambiguity its output actually carries:
//! - The known-covariance ML benchmark determines every phase relative to
//!   the pinned reference element, so its headline metric is the raw
//!   wrapped residual.
//! - The superdiagonal recursion solves a chain of phase differences; its
//!   natural reference is the solution mean, so its headline metric
//!   subtracts the per-trial mean residual. When the reference argument is
//!   estimated from the data, the induced ramp is removed in closed form
//!   before scoring (the ramp equals wrap(arg t̂₁ − arg t₁) per element
//!   step, an identity of the recursion, not a fitted trend).
//! - The elementwise-ratio estimator is scored like the recursion
//!   (mean-centered), as both are covariance-free field calibrators.
//!
//! All three residual channels (raw, mean-centered, best-affine-aligned)
//! are recorded per trial so any convention can be recomputed from the
//! records file alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rayon::prelude::*;

use crate::calib::{
    adhoc_estimate, align_and_rmse, crb, ml_estimate_from_cov, superdiag_estimate, SuperdiagArg,
};
use crate::error::{Error, Result};
use crate::numerics::{hermitian_eig, hermitian_sqrt, wrap_angle, CMat};
use crate::oversampled::{
    b_from_cov, decomposition_residual, objective_q, optimize_phases, sector_matrices,
    ElementPattern, OptimizerOptions, SectorMatrices,
};
use crate::rmt::modify_matrix;
use crate::scenario::{
    apply_phase_errors, build_covariance, draw_phase_errors, streamed_sample_covariance,
    trial_rng, PhaseVector, ScenarioConfig, ToeplitzHermitian, SUBSTREAM_PHASES,
    SUBSTREAM_SNAPSHOTS,
};
use crate::sphericity::{
    ks_distance, lr_stat, null_samples, toeplitz_origin_test, NullDistribution, Verdict,
};
use crate::toeplitz::reconstruct;

/// Seed salt for the sphericity reference distribution, so its snapshot
/// streams never collide with the experiment's own trial streams.
const NULL_SEED_SALT: u64 = 0x6e75_6c6c_5f72_6566;

/// Which experiment the runner executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    /// Likelihood-ratio statistic distributions and the origin test.
    LrPdf,
    /// Known-covariance ML phase estimation benchmark.
    MlBenchmark,
    /// Covariance-free superdiagonal recursion.
    Invariant,
    /// Elementwise-ratio estimator with known covariance.
    Adhoc,
    /// Invisible-sector power minimization on an oversampled array.
    Oversampled,
    /// Deterministic per-element estimation bound profile.
    CrbProfile,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::LrPdf => "lr_pdf",
            ExperimentKind::MlBenchmark => "ml_benchmark",
            ExperimentKind::Invariant => "invariant",
            ExperimentKind::Adhoc => "adhoc",
            ExperimentKind::Oversampled => "oversampled",
            ExperimentKind::CrbProfile => "crb_profile",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lr_pdf" => Ok(ExperimentKind::LrPdf),
            "ml_benchmark" => Ok(ExperimentKind::MlBenchmark),
            "invariant" => Ok(ExperimentKind::Invariant),
            "adhoc" => Ok(ExperimentKind::Adhoc),
            "oversampled" => Ok(ExperimentKind::Oversampled),
            "crb_profile" => Ok(ExperimentKind::CrbProfile),
            other => Err(Error::Config(format!(
                "unknown experiment kind '{other}'; valid: lr_pdf, ml_benchmark, invariant, \
                 adhoc, oversampled, crb_profile"
            ))),
        }
    }

    /// Metric column names of one record row, in file order.
    pub fn columns(&self) -> &'static [&'static str] {
        match self {
            ExperimentKind::MlBenchmark => &[
                "raw_ms_deg2",
                "centered_ms_deg2",
                "aligned_ms_deg2",
                "min_eigenvalue",
                "form_value",
            ],
            ExperimentKind::Invariant => &[
                "raw_ms_deg2",
                "centered_ms_deg2",
                "aligned_ms_deg2",
                "ls_residual",
            ],
            ExperimentKind::Adhoc => &["raw_ms_deg2", "centered_ms_deg2", "aligned_ms_deg2"],
            ExperimentKind::LrPdf => &["lr_true", "lr_gs", "lr_rmt", "reject", "shrink"],
            ExperimentKind::Oversampled => &[
                "invisible_init_no_errors",
                "invisible_final_no_errors",
                "gain_no_errors_db",
                "invisible_init_with_errors",
                "invisible_final_with_errors",
                "gain_with_errors_db",
                "decomposition_rmse_deg",
            ],
            ExperimentKind::CrbProfile => &["crb_variance_rad2", "crb_rms_deg"],
        }
    }
}

/// Reference argument source for the superdiagonal recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgMode {
    /// Use the true first-lag argument of the scenario covariance.
    TrueArg,
    /// Estimate the argument from the averaged sample superdiagonal.
    Estimated,
}

impl ArgMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArgMode::TrueArg => "true_arg",
            ArgMode::Estimated => "estimated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "true_arg" => Ok(ArgMode::TrueArg),
            "estimated" => Ok(ArgMode::Estimated),
            other => Err(Error::Config(format!(
                "unknown arg_mode '{other}'; valid: true_arg, estimated"
            ))),
        }
    }
}

/// Kind-specific knobs; unused fields are ignored by other kinds.
#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    /// Number of stacked diagonals for the recursion (1 = classic).
    pub n_diags: usize,
    /// Reference-argument source for the recursion.
    pub arg_mode: ArgMode,
    /// Run the descent refinement after the ML eigenvector initialization.
    pub refine: bool,
    /// Feed the exact covariance instead of a sampled one (removes
    /// finite-sample noise; useful for flow studies and bounds).
    pub exact_covariance: bool,
    /// Apply the eigenvalue correction inside the origin test.
    pub use_rmt: bool,
    /// Origin-test significance level.
    pub alpha: f64,
    /// Reference-distribution sample count when generated inline.
    pub null_trials: usize,
    /// Optional path to a precomputed reference distribution.
    pub null_path: Option<String>,
    /// Element power pattern of the oversampled array.
    pub element_pattern: ElementPattern,
    /// Spacing that defines the invisible sector; defaults to the
    /// scenario spacing when absent.
    pub sector_d_over_lambda: Option<f64>,
    /// Histogram bin count for emitted distributions.
    pub bins: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            n_diags: 1,
            arg_mode: ArgMode::Estimated,
            refine: false,
            exact_covariance: false,
            use_rmt: true,
            alpha: 0.01,
            null_trials: 1000,
            null_path: None,
            element_pattern: ElementPattern::Cosine,
            sector_d_over_lambda: None,
            bins: 60,
        }
    }
}

/// A fully resolved experiment: scenario, kind, options, and the resolved
/// configuration echo that reports carry for exact replay.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario: ScenarioConfig,
    pub kind: ExperimentKind,
    pub options: ExperimentOptions,
    /// key=value pairs echoed into every report; empty when constructed
    /// programmatically.
    pub resolved: Vec<(String, String)>,
}

impl ExperimentSpec {
    pub fn new(scenario: ScenarioConfig, kind: ExperimentKind, options: ExperimentOptions) -> Self {
        ExperimentSpec {
            scenario,
            kind,
            options,
            resolved: Vec::new(),
        }
    }

    /// Validates the scenario plus kind-specific option completeness.
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let o = &self.options;
        if !(o.alpha > 0.0 && o.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                o.alpha
            )));
        }
        if o.bins < 1 {
            return Err(Error::Config("bins must be at least 1".into()));
        }
        match self.kind {
            ExperimentKind::Invariant => {
                if o.n_diags < 1 || o.n_diags >= self.scenario.n {
                    return Err(Error::Config(format!(
                        "n_diags must lie in [1, N-1] = [1, {}], got {}",
                        self.scenario.n - 1,
                        o.n_diags
                    )));
                }
            }
            ExperimentKind::LrPdf => {
                if self.scenario.t < self.scenario.n {
                    return Err(Error::Config(format!(
                        "the likelihood-ratio statistic needs T >= N; got T={}, N={}",
                        self.scenario.t, self.scenario.n
                    )));
                }
                if o.null_trials < 2 && o.null_path.is_none() {
                    return Err(Error::Config(
                        "null_trials must be at least 2 to define a quantile".into(),
                    ));
                }
            }
            ExperimentKind::Oversampled => {
                let spacing = o
                    .sector_d_over_lambda
                    .unwrap_or(self.scenario.d_over_lambda);
                // Dry-build so an empty invisible sector is a config error,
                // not a per-trial failure.
                let sm = sector_matrices(spacing, self.scenario.n, o.element_pattern)
                    .map_err(|e| Error::Config(e.to_string()))?;
                let trace: f64 = (0..self.scenario.n).map(|j| sm.r_inv()[(j, j)].re).sum();
                if trace <= 0.0 {
                    return Err(Error::Config(format!(
                        "spacing d/lambda = {spacing} with the {} pattern leaves no invisible \
                         sector power to minimize",
                        o.element_pattern.as_str()
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// One Monte Carlo trial: its index, outcome status, and the
/// kind-specific metric columns (NaN-filled when degenerate).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: u64,
    pub status: String,
    pub values: Vec<f64>,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Histogram with explicit bin edges; `edges.len() == counts.len() + 1`
/// unless both are empty (empty input).
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Completed experiment: per-trial records (sorted by trial), the flat
/// summary, plot-ready histograms, and the configuration echo.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub columns: Vec<String>,
    pub records: Vec<TrialRecord>,
    pub summary: BTreeMap<String, f64>,
    pub histograms: Vec<(String, Histogram)>,
    pub resolved: Vec<(String, String)>,
    pub seed: u64,
    /// Wall-clock duration; reported on the console only, never written
    /// into artifacts, which stay byte-identical across reruns.
    pub wall_time_s: f64,
}

struct TrialContext {
    t_n: ToeplitzHermitian,
    t_expand: CMat,
    sqrt: CMat,
    arg_t1: f64,
    sector: Option<SectorMatrices>,
    null: Option<NullDistribution>,
}

impl TrialContext {
    fn prepare(spec: &ExperimentSpec) -> Result<Self> {
        let t_n = build_covariance(&spec.scenario)?;
        let t_expand = t_n.expand();
        let sqrt = hermitian_sqrt(&t_expand)?;
        let arg_t1 = t_n.lag(1).arg();
        let sector = if spec.kind == ExperimentKind::Oversampled {
            let spacing = spec
                .options
                .sector_d_over_lambda
                .unwrap_or(spec.scenario.d_over_lambda);
            Some(sector_matrices(
                spacing,
                spec.scenario.n,
                spec.options.element_pattern,
            )?)
        } else {
            None
        };
        let null = if spec.kind == ExperimentKind::LrPdf {
            Some(reference_distribution_for(spec)?)
        } else {
            None
        };
        Ok(TrialContext {
            t_n,
            t_expand,
            sqrt,
            arg_t1,
            sector,
            null,
        })
    }
}

/// Reference distribution of the origin-test statistic for this scenario:
/// loaded from `null_path` when set, generated otherwise. Generation uses
/// a salted seed so the reference snapshots are independent of the
/// experiment's own trial streams.
pub fn reference_distribution(
    n: usize,
    t: usize,
    trials: usize,
    seed: u64,
) -> Result<NullDistribution> {
    null_samples(n, t, trials, seed ^ NULL_SEED_SALT)
}

fn reference_distribution_for(spec: &ExperimentSpec) -> Result<NullDistribution> {
    match &spec.options.null_path {
        Some(path) if !path.is_empty() => {
            let p = Path::new(path);
            if !p.exists() {
                return Err(Error::Config(format!(
                    "reference distribution file '{path}' not found; generate it with the \
                     null-dist command"
                )));
            }
            NullDistribution::load(p)
        }
        _ => reference_distribution(
            spec.scenario.n,
            spec.scenario.t,
            spec.options.null_trials,
            spec.scenario.seed,
        ),
    }
}

struct TrialOutcome {
    record: TrialRecord,
    /// Per-element headline residuals in degrees (estimator kinds only);
    /// feeds the residual histogram.
    residuals_deg: Vec<f64>,
}

/// Runs every trial of the spec and aggregates the report. Deterministic
/// for a given seed regardless of the rayon pool shape: each trial derives
/// its own generators from (seed, trial) and aggregation happens after a
/// sort by trial index.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let start = Instant::now();
    let ctx = TrialContext::prepare(spec)?;

    let outcomes: Vec<TrialOutcome> = if spec.kind == ExperimentKind::CrbProfile {
        crb_rows(spec, &ctx)?
    } else {
        let trials = spec.scenario.trials as u64;
        let done = AtomicU64::new(0);
        let step = (trials / 10).max(1);
        let mut v: Vec<TrialOutcome> = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let out = run_trial(spec, &ctx, trial);
                let k = done.fetch_add(1, Ordering::Relaxed) + 1;
                if k % step == 0 || k == trials {
                    eprintln!("completed {k}/{trials} trials");
                }
                out
            })
            .collect();
        v.sort_by_key(|o| o.record.trial);
        v
    };

    let records: Vec<TrialRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    let summary = summarize(spec.kind, &records);
    let histograms = build_histograms(spec, &outcomes);
    Ok(ExperimentReport {
        kind: spec.kind,
        columns: spec.kind.columns().iter().map(|s| s.to_string()).collect(),
        records,
        summary,
        histograms,
        resolved: spec.resolved.clone(),
        seed: spec.scenario.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn run_trial(spec: &ExperimentSpec, ctx: &TrialContext, trial: u64) -> TrialOutcome {
    let res = match spec.kind {
        ExperimentKind::MlBenchmark | ExperimentKind::Invariant | ExperimentKind::Adhoc => {
            estimator_trial(spec, ctx, trial)
        }
        ExperimentKind::LrPdf => lr_trial(spec, ctx, trial),
        ExperimentKind::Oversampled => oversampled_trial(spec, ctx, trial),
        ExperimentKind::CrbProfile => unreachable!("profile rows are built directly"),
    };
    res.unwrap_or_else(|e| TrialOutcome {
        record: TrialRecord {
            trial,
            status: sanitize_status(&e.to_string()),
            values: vec![f64::NAN; spec.kind.columns().len()],
        },
        residuals_deg: Vec::new(),
    })
}

fn sanitize_status(msg: &str) -> String {
    msg.replace([',', '\n', '\r'], ";")
}

fn sampled_or_exact_base(spec: &ExperimentSpec, ctx: &TrialContext, trial: u64) -> CMat {
    if spec.options.exact_covariance {
        ctx.t_expand.clone()
    } else {
        let mut rng = trial_rng(spec.scenario.seed, trial, SUBSTREAM_SNAPSHOTS);
        streamed_sample_covariance(&ctx.sqrt, spec.scenario.t, &mut rng)
    }
}

fn estimator_trial(spec: &ExperimentSpec, ctx: &TrialContext, trial: u64) -> Result<TrialOutcome> {
    let sc = &spec.scenario;
    let n = sc.n;
    let mut rng_p = trial_rng(sc.seed, trial, SUBSTREAM_PHASES);
    let truth = draw_phase_errors(sc.phi_max_deg, n, &mut rng_p);
    let r_hat = apply_phase_errors(&sampled_or_exact_base(spec, ctx, trial), &truth);

    let (estimate, extras) = match spec.kind {
        ExperimentKind::MlBenchmark => {
            let pe = ml_estimate_from_cov(&r_hat, &ctx.t_n, spec.options.refine)?;
            let d = &pe.diagnostics;
            (
                pe.phases,
                vec![
                    d.min_eigenvalue.unwrap_or(f64::NAN),
                    d.form_value.unwrap_or(f64::NAN),
                ],
            )
        }
        ExperimentKind::Invariant => {
            let arg = match spec.options.arg_mode {
                ArgMode::TrueArg => SuperdiagArg::True(ctx.arg_t1),
                ArgMode::Estimated => SuperdiagArg::Estimated,
            };
            let pe = superdiag_estimate(&r_hat, arg, spec.options.n_diags)?;
            let resid = pe.diagnostics.residual.unwrap_or(f64::NAN);
            (pe.phases, vec![resid])
        }
        ExperimentKind::Adhoc => (adhoc_estimate(&r_hat, &ctx.t_n)?.phases, Vec::new()),
        _ => unreachable!(),
    };

    let mut raw: Vec<f64> = estimate
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(e, t)| wrap_angle(e - t))
        .collect();

    if spec.kind == ExperimentKind::Invariant && spec.options.arg_mode == ArgMode::Estimated {
        // The estimated reference argument shifts every recursion step by
        // the same constant, i.e. adds an exact ramp through the pinned
        // element. Remove that known ramp (not a fitted trend) so the
        // variant is scored on the same footing as the true-argument one.
        let mut acc = num_complex::Complex64::new(0.0, 0.0);
        for p in 0..n - 1 {
            acc += r_hat[(p, p + 1)];
        }
        let delta = wrap_angle(acc.arg() + ctx.arg_t1);
        for (l, r) in raw.iter_mut().enumerate() {
            *r = wrap_angle(*r - delta * l as f64);
        }
    }

    let nf = n as f64;
    let raw_ms_deg2 = raw
        .iter()
        .map(|r| r.to_degrees().powi(2))
        .sum::<f64>()
        / nf;
    let mean_raw = raw.iter().sum::<f64>() / nf;
    let centered: Vec<f64> = raw.iter().map(|r| wrap_angle(r - mean_raw)).collect();
    let centered_ms_deg2 = centered
        .iter()
        .map(|r| r.to_degrees().powi(2))
        .sum::<f64>()
        / nf;
    let (_, aligned_rmse_deg) = align_and_rmse(&estimate, &truth)?;
    let aligned_ms_deg2 = aligned_rmse_deg * aligned_rmse_deg;

    let residuals_deg: Vec<f64> = match spec.kind {
        ExperimentKind::MlBenchmark => raw.iter().map(|r| r.to_degrees()).collect(),
        _ => centered.iter().map(|r| r.to_degrees()).collect(),
    };

    let mut values = vec![raw_ms_deg2, centered_ms_deg2, aligned_ms_deg2];
    values.extend(extras);
    Ok(TrialOutcome {
        record: TrialRecord {
            trial,
            status: "ok".into(),
            values,
        },
        residuals_deg,
    })
}

fn lr_trial(spec: &ExperimentSpec, ctx: &TrialContext, trial: u64) -> Result<TrialOutcome> {
    let sc = &spec.scenario;
    let mut rng_p = trial_rng(sc.seed, trial, SUBSTREAM_PHASES);
    let truth = draw_phase_errors(sc.phi_max_deg, sc.n, &mut rng_p);
    let r_hat = apply_phase_errors(&sampled_or_exact_base(spec, ctx, trial), &truth);

    let lr_true = lr_stat(&r_hat, &ctx.t_expand)?.log_lr;
    let (t_gs, _) = reconstruct(&r_hat)?;
    let lr_gs = lr_stat(&r_hat, &t_gs.expand())?.log_lr;
    let corrected = modify_matrix(&r_hat, sc.t)?;
    let (t_m, _) = reconstruct(&corrected)?;
    let lr_rmt = lr_stat(&corrected, &t_m.expand())?.log_lr;

    let null = ctx.null.as_ref().expect("lr_pdf context carries a null");
    let test = toeplitz_origin_test(
        &r_hat,
        sc.t,
        spec.options.use_rmt,
        null,
        spec.options.alpha,
    )?;
    let reject = matches!(test.verdict, Verdict::NonToeplitzOrigin) as u8 as f64;

    // Dynamic-range shrinkage: the corrected spectrum should never spread
    // wider than the sample spectrum.
    let range = |m: &CMat| -> Result<f64> {
        let eig = hermitian_eig(m)?;
        let lo = eig.eigenvalues[0];
        let hi = eig.eigenvalues[eig.eigenvalues.len() - 1];
        if lo <= 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(hi / lo)
    };
    let shrink = (range(&corrected)? <= range(&r_hat)? * (1.0 + 1e-12)) as u8 as f64;

    Ok(TrialOutcome {
        record: TrialRecord {
            trial,
            status: "ok".into(),
            values: vec![lr_true, lr_gs, lr_rmt, reject, shrink],
        },
        residuals_deg: Vec::new(),
    })
}

fn oversampled_trial(
    spec: &ExperimentSpec,
    ctx: &TrialContext,
    trial: u64,
) -> Result<TrialOutcome> {
    let sc = &spec.scenario;
    let sector = ctx.sector.as_ref().expect("oversampled context has sector");
    let mut rng_p = trial_rng(sc.seed, trial, SUBSTREAM_PHASES);
    let truth = draw_phase_errors(sc.phi_max_deg, sc.n, &mut rng_p);
    let r0 = sampled_or_exact_base(spec, ctx, trial);

    let b_no = b_from_cov(&r0, sector.r_inv());
    let b_with = b_from_cov(&apply_phase_errors(&r0, &truth), sector.r_inv());
    let psi0 = PhaseVector::zeros(sc.n);
    let opts = OptimizerOptions::default();
    let nf = sc.n as f64;

    let mut run = |b: &CMat| -> Result<(f64, f64, PhaseVector)> {
        let q0 = objective_q(&psi0, b, None)?;
        let res = optimize_phases(b, &psi0, &opts)?;
        Ok((nf / q0, res.final_invisible_power, res.psi))
    };
    let (init_no, fin_no, psi_no) = run(&b_no)?;
    let (init_with, fin_with, psi_with) = run(&b_with)?;

    let neg: Vec<f64> = truth.as_slice().iter().map(|p| -p).collect();
    let injected = PhaseVector::pinned(&neg);
    let rmse = decomposition_residual(&psi_with, &psi_no, &injected)?;

    let gain = |i: f64, f: f64| 10.0 * (i / f).log10();
    Ok(TrialOutcome {
        record: TrialRecord {
            trial,
            status: "ok".into(),
            values: vec![
                init_no,
                fin_no,
                gain(init_no, fin_no),
                init_with,
                fin_with,
                gain(init_with, fin_with),
                rmse,
            ],
        },
        residuals_deg: Vec::new(),
    })
}

fn crb_rows(spec: &ExperimentSpec, ctx: &TrialContext) -> Result<Vec<TrialOutcome>> {
    let profile = crb(&ctx.t_n, spec.scenario.t)?;
    Ok(profile
        .bounds()
        .iter()
        .enumerate()
        .map(|(l, &v)| TrialOutcome {
            record: TrialRecord {
                trial: l as u64,
                status: "ok".into(),
                values: vec![v, v.sqrt().to_degrees()],
            },
            residuals_deg: Vec::new(),
        })
        .collect())
}

/// Rebuilds the summary from per-trial records alone; `run_experiment`
/// uses exactly this, so aggregation is idempotent and order-independent
/// (records are keyed by trial index, and every statistic is a symmetric
/// function of the rows).
pub fn summarize(kind: ExperimentKind, records: &[TrialRecord]) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    let mut ok: Vec<&TrialRecord> = records.iter().filter(|r| r.is_ok()).collect();
    // Accumulate in trial order so the result is bit-identical no matter
    // how the caller ordered the rows.
    ok.sort_by_key(|r| r.trial);
    m.insert("trials".into(), records.len() as f64);
    m.insert("trials_ok".into(), ok.len() as f64);
    m.insert(
        "trials_degenerate".into(),
        (records.len() - ok.len()) as f64,
    );

    let finite_col = |idx: usize| -> Vec<f64> {
        ok.iter()
            .filter_map(|r| r.values.get(idx).copied())
            .filter(|v| v.is_finite())
            .collect()
    };
    let mean = |v: &[f64]| -> Option<f64> {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    let mut put = |m: &mut BTreeMap<String, f64>, key: &str, v: Option<f64>| {
        if let Some(x) = v {
            if x.is_finite() {
                m.insert(key.into(), x);
            }
        }
    };

    match kind {
        ExperimentKind::MlBenchmark | ExperimentKind::Invariant | ExperimentKind::Adhoc => {
            let sqrt_mean = |idx: usize| mean(&finite_col(idx)).map(f64::sqrt);
            let raw = sqrt_mean(0);
            let centered = sqrt_mean(1);
            let aligned = sqrt_mean(2);
            put(&mut m, "raw_sqrt_second_moment_deg", raw);
            put(&mut m, "centered_sqrt_second_moment_deg", centered);
            put(&mut m, "aligned_sqrt_second_moment_deg", aligned);
            let headline = if kind == ExperimentKind::MlBenchmark {
                raw
            } else {
                centered
            };
            put(&mut m, "sqrt_second_moment_deg", headline);
            if kind == ExperimentKind::MlBenchmark {
                put(&mut m, "mean_min_eigenvalue", mean(&finite_col(3)));
                put(&mut m, "mean_form_value", mean(&finite_col(4)));
            }
            if kind == ExperimentKind::Invariant {
                put(&mut m, "mean_ls_residual", mean(&finite_col(3)));
            }
        }
        ExperimentKind::LrPdf => {
            let sorted = |idx: usize| -> Vec<f64> {
                let mut v = finite_col(idx);
                v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                v
            };
            let lr_true = sorted(0);
            let lr_gs = sorted(1);
            let lr_rmt = sorted(2);
            put(&mut m, "mean_lr_true", mean(&lr_true));
            put(&mut m, "mean_lr_gs", mean(&lr_gs));
            put(&mut m, "mean_lr_rmt", mean(&lr_rmt));
            put(&mut m, "rejection_rate", mean(&finite_col(3)));
            put(&mut m, "shrinkage_rate", mean(&finite_col(4)));
            if !lr_true.is_empty() && !lr_rmt.is_empty() {
                m.insert("ks_rmt_vs_true".into(), ks_distance(&lr_rmt, &lr_true));
            }
            if !lr_true.is_empty() && !lr_gs.is_empty() {
                m.insert("ks_gs_vs_true".into(), ks_distance(&lr_gs, &lr_true));
            }
        }
        ExperimentKind::Oversampled => {
            put(
                &mut m,
                "mean_invisible_init_no_errors",
                mean(&finite_col(0)),
            );
            put(
                &mut m,
                "mean_invisible_final_no_errors",
                mean(&finite_col(1)),
            );
            put(&mut m, "mean_gain_no_errors_db", mean(&finite_col(2)));
            put(
                &mut m,
                "mean_invisible_init_with_errors",
                mean(&finite_col(3)),
            );
            put(
                &mut m,
                "mean_invisible_final_with_errors",
                mean(&finite_col(4)),
            );
            put(&mut m, "mean_gain_with_errors_db", mean(&finite_col(5)));
            let rmse = finite_col(6);
            put(&mut m, "mean_decomposition_rmse_deg", mean(&rmse));
            put(
                &mut m,
                "max_decomposition_rmse_deg",
                rmse.iter().copied().fold(None, |acc: Option<f64>, v| {
                    Some(acc.map_or(v, |a| a.max(v)))
                }),
            );
            m.insert(
                "decomposition_within_0p1_deg".into(),
                rmse.iter().filter(|&&v| v <= 0.1).count() as f64,
            );
        }
        ExperimentKind::CrbProfile => {
            let rms = finite_col(1);
            put(&mut m, "mean_crb_rms_deg", mean(&rms));
            put(
                &mut m,
                "min_crb_rms_deg",
                rms.iter().copied().fold(None, |acc: Option<f64>, v| {
                    Some(acc.map_or(v, |a| a.min(v)))
                }),
            );
            put(
                &mut m,
                "max_crb_rms_deg",
                rms.iter().copied().fold(None, |acc: Option<f64>, v| {
                    Some(acc.map_or(v, |a| a.max(v)))
                }),
            );
        }
    }
    m
}

/// Sqrt of the mean squared residual over all elements of all trials;
/// degrees in, degrees out. Empty input yields zero.
pub fn summarize_sqrt_second_moment(residuals: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for trial in residuals {
        for r in trial {
            acc += r * r;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        (acc / count as f64).sqrt()
    }
}

/// Fixed-width histogram over `range`; out-of-range values are clamped
/// into the edge bins so counts always sum to the input length. Empty
/// input yields the empty histogram.
pub fn histogram(values: &[f64], bins: usize, range: (f64, f64)) -> Result<Histogram> {
    if bins < 1 {
        return Err(Error::Domain("bins must be at least 1".into()));
    }
    if values.is_empty() {
        return Ok(Histogram {
            edges: Vec::new(),
            counts: Vec::new(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("histogram values must be finite".into()));
    }
    let (mut lo, mut hi) = range;
    if !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(Error::Domain(format!(
            "histogram range must be finite with lo <= hi, got ({lo}, {hi})"
        )));
    }
    if hi == lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = (((v - lo) / width).floor() as i64).clamp(0, bins as i64 - 1) as usize;
        counts[idx] += 1;
    }
    Ok(Histogram { edges, counts })
}

fn finite_range(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        (0.0, 1.0)
    } else {
        (lo, hi)
    }
}

fn finite_column(outcomes: &[TrialOutcome], idx: usize) -> Vec<f64> {
    outcomes
        .iter()
        .filter(|o| o.record.is_ok())
        .filter_map(|o| o.record.values.get(idx).copied())
        .filter(|v| v.is_finite())
        .collect()
}

fn build_histograms(spec: &ExperimentSpec, outcomes: &[TrialOutcome]) -> Vec<(String, Histogram)> {
    let bins = spec.options.bins;
    let mut out = Vec::new();
    let mut push = |name: &str, values: Vec<f64>, range: (f64, f64)| {
        if let Ok(h) = histogram(&values, bins, range) {
            out.push((name.to_string(), h));
        }
    };
    match spec.kind {
        ExperimentKind::MlBenchmark | ExperimentKind::Invariant | ExperimentKind::Adhoc => {
            let residuals: Vec<f64> = outcomes
                .iter()
                .flat_map(|o| o.residuals_deg.iter().copied())
                .filter(|v| v.is_finite())
                .collect();
            let range = finite_range(&residuals);
            push("residuals_deg", residuals, range);
        }
        ExperimentKind::LrPdf => {
            let cols: Vec<Vec<f64>> = (0..3).map(|i| finite_column(outcomes, i)).collect();
            let all: Vec<f64> = cols.iter().flatten().copied().collect();
            let range = finite_range(&all);
            for (name, col) in ["lr_true", "lr_gs", "lr_rmt"].iter().zip(cols) {
                push(name, col, range);
            }
        }
        ExperimentKind::Oversampled => {
            let gains = finite_column(outcomes, 5);
            let range = finite_range(&gains);
            push("gain_with_errors_db", gains, range);
            let rmse = finite_column(outcomes, 6);
            let range = finite_range(&rmse);
            push("decomposition_rmse_deg", rmse, range);
        }
        ExperimentKind::CrbProfile => {}
    }
    out
}

/// 17-significant-digit decimal rendering used in every CSV artifact.
pub fn fmt_real(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

impl ExperimentReport {
    /// Records file: one row per trial, metric columns per experiment kind.
    pub fn records_csv(&self) -> String {
        let mut s = String::from("trial,status");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!("{}", r.trial));
            s.push(',');
            s.push_str(&r.status);
            for v in &r.values {
                s.push(',');
                s.push_str(&fmt_real(*v));
            }
            s.push('\n');
        }
        s
    }

    /// Flat JSON summary; keys are sorted, values finite.
    pub fn summary_json(&self) -> String {
        let mut map = serde_json::Map::new();
        map.insert(
            "kind".to_string(),
            serde_json::Value::String(self.kind.as_str().to_string()),
        );
        map.insert("seed".to_string(), serde_json::Value::from(self.seed));
        for (k, v) in &self.summary {
            map.insert(k.clone(), serde_json::Value::from(*v));
        }
        let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(map))
            .expect("summary values are finite");
        s.push('\n');
        s
    }

    pub fn histogram_csv(h: &Histogram) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in h.counts.iter().enumerate() {
            s.push_str(&fmt_real(h.edges[i]));
            s.push(',');
            s.push_str(&fmt_real(h.edges[i + 1]));
            s.push(',');
            s.push_str(&format!("{c}\n"));
        }
        s
    }

    pub fn resolved_cfg(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.resolved {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    /// Writes records.csv, summary.json, histogram_*.csv, and resolved.cfg
    /// under `dir`. File contents are byte-identical across reruns of the
    /// same spec; wall time goes to the console, never into artifacts.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("records.csv"), self.records_csv())?;
        fs::write(dir.join("summary.json"), self.summary_json())?;
        for (name, h) in &self.histograms {
            fs::write(
                dir.join(format!("histogram_{name}.csv")),
                Self::histogram_csv(h),
            )?;
        }
        fs::write(dir.join("resolved.cfg"), self.resolved_cfg())?;
        Ok(())
    }
}
