//! Flat key=value configuration with layered precedence.
//!
//! Keys are dotted (`scenario.T`, `test.alpha`); the scenario and the most
//! common option keys also accept bare aliases (`T`, `alpha`) so quick
//! command-line overrides stay short. Values layer as
//! defaults < config file < explicit sets, in application order.
//! Unknown keys are rejected with the full list of valid keys; malformed
//! values are rejected with the key name and the expected type.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::{ArgMode, ExperimentKind, ExperimentOptions, ExperimentSpec};
use crate::oversampled::ElementPattern;
use crate::scenario::{CovarianceKind, ScenarioConfig};

/// Canonical keys, each with the bare alias that maps to it (empty when
/// the key has none) and a short type/meaning note for error messages.
const KEYS: &[(&str, &str, &str)] = &[
    ("scenario.N", "N", "array size (integer >= 2)"),
    ("scenario.T", "T", "snapshot count (integer >= 1)"),
    ("scenario.W1", "W1", "first band half-width (real in (0, 0.5])"),
    ("scenario.W2", "W2", "second band half-width (real in (0, 0.5])"),
    ("scenario.theta0", "theta0", "second-band steering angle, degrees"),
    (
        "scenario.d_over_lambda",
        "d_over_lambda",
        "element spacing over wavelength (real in (0, 0.5])",
    ),
    (
        "scenario.q_inv_sq_db",
        "q_inv_sq_db",
        "white-noise floor in dB (e.g. -40)",
    ),
    (
        "scenario.phi_max_deg",
        "phi_max_deg",
        "phase-error half-range, degrees in [0, 180]",
    ),
    (
        "scenario.covariance_kind",
        "covariance_kind",
        "two_sinc | one_sinc | shifted_symmetric",
    ),
    ("scenario.trials", "trials", "Monte Carlo trial count (integer >= 1)"),
    ("scenario.seed", "seed", "master RNG seed (unsigned integer)"),
    (
        "experiment.kind",
        "kind",
        "lr_pdf | ml_benchmark | invariant | adhoc | oversampled | crb_profile",
    ),
    (
        "estimator.n_diags",
        "n_diags",
        "number of stacked diagonals for the recursion (integer in [1, N-1])",
    ),
    ("estimator.arg_mode", "arg_mode", "true_arg | estimated"),
    ("estimator.refine", "refine", "run the ML descent refinement (true | false)"),
    (
        "estimator.exact_covariance",
        "exact_covariance",
        "feed the exact covariance instead of a sampled one (true | false)",
    ),
    ("test.use_rmt", "use_rmt", "apply the eigenvalue correction (true | false)"),
    ("test.alpha", "alpha", "origin-test significance level in (0, 1)"),
    (
        "test.null_trials",
        "null_trials",
        "reference-distribution sample count (integer >= 2)",
    ),
    (
        "test.null_path",
        "null_path",
        "path to a saved reference distribution (empty = generate inline)",
    ),
    (
        "sector.d_over_lambda",
        "",
        "spacing defining the invisible sector (defaults to scenario spacing)",
    ),
    (
        "sector.element_pattern",
        "element_pattern",
        "cosine | ideal",
    ),
    ("report.bins", "bins", "histogram bin count (integer >= 1)"),
];

fn canonicalize(key: &str) -> Result<&'static str> {
    let k = key.trim();
    for (canon, alias, _) in KEYS {
        if k == *canon || (!alias.is_empty() && k == *alias) {
            return Ok(canon);
        }
    }
    let mut listing = String::new();
    for (canon, alias, note) in KEYS {
        listing.push_str("\n  ");
        listing.push_str(canon);
        if !alias.is_empty() {
            listing.push_str(" (alias: ");
            listing.push_str(alias);
            listing.push(')');
        }
        listing.push_str(" - ");
        listing.push_str(note);
    }
    Err(Error::Config(format!(
        "unknown configuration key '{k}'; valid keys:{listing}"
    )))
}

/// Layered flat configuration; every value is stored as text and parsed
/// into the typed experiment spec on demand.
#[derive(Debug, Clone)]
pub struct ConfigMap {
    values: BTreeMap<&'static str, String>,
}

impl Default for ConfigMap {
    fn default() -> Self {
        let sc = ScenarioConfig::default();
        let o = ExperimentOptions::default();
        let mut values = BTreeMap::new();
        let mut put = |k: &'static str, v: String| {
            values.insert(k, v);
        };
        put("scenario.N", sc.n.to_string());
        put("scenario.T", sc.t.to_string());
        put("scenario.W1", sc.w1.to_string());
        put("scenario.W2", sc.w2.to_string());
        put("scenario.theta0", sc.theta0.to_string());
        put("scenario.d_over_lambda", sc.d_over_lambda.to_string());
        put("scenario.q_inv_sq_db", sc.q_inv_sq_db.to_string());
        put("scenario.phi_max_deg", sc.phi_max_deg.to_string());
        put(
            "scenario.covariance_kind",
            sc.covariance_kind.as_str().to_string(),
        );
        put("scenario.trials", sc.trials.to_string());
        put("scenario.seed", sc.seed.to_string());
        put(
            "experiment.kind",
            ExperimentKind::MlBenchmark.as_str().to_string(),
        );
        put("estimator.n_diags", o.n_diags.to_string());
        put("estimator.arg_mode", o.arg_mode.as_str().to_string());
        put("estimator.refine", o.refine.to_string());
        put("estimator.exact_covariance", o.exact_covariance.to_string());
        put("test.use_rmt", o.use_rmt.to_string());
        put("test.alpha", o.alpha.to_string());
        put("test.null_trials", o.null_trials.to_string());
        put("test.null_path", String::new());
        put("sector.d_over_lambda", String::new());
        put(
            "sector.element_pattern",
            o.element_pattern.as_str().to_string(),
        );
        put("report.bins", o.bins.to_string());
        ConfigMap { values }
    }
}

impl ConfigMap {
    /// Sets one key (canonical or alias) to a textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let canon = canonicalize(key)?;
        self.values.insert(canon, value.trim().to_string());
        Ok(())
    }

    /// Parses a `key=value` assignment as given on the command line.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        match assignment.split_once('=') {
            Some((k, v)) => self.set(k, v),
            None => Err(Error::Config(format!(
                "expected key=value, got '{assignment}'"
            ))),
        }
    }

    /// Applies a config-file body: one `key=value` per line, `#` starts a
    /// comment, blank lines are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            self.set_assignment(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file '{}': {e}", path.display()))
        })?;
        self.apply_text(&text)
            .map_err(|e| Error::Config(format!("in '{}': {e}", path.display())))
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        Ok(self.values[canonicalize(key)?].as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &'static str, want: &str) -> Result<T> {
        let v = &self.values[key];
        v.parse().map_err(|_| {
            Error::Config(format!("key '{key}' expects {want}, got '{v}'"))
        })
    }

    /// Resolves every key into the typed experiment spec and validates it.
    /// The spec carries the resolved key=value echo, with optional keys
    /// spelled out as the values actually used.
    pub fn to_spec(&self) -> Result<ExperimentSpec> {
        let scenario = ScenarioConfig {
            n: self.parse("scenario.N", "an integer >= 2")?,
            t: self.parse("scenario.T", "an integer >= 1")?,
            w1: self.parse("scenario.W1", "a real number")?,
            w2: self.parse("scenario.W2", "a real number")?,
            theta0: self.parse("scenario.theta0", "a real number (degrees)")?,
            d_over_lambda: self.parse("scenario.d_over_lambda", "a real number")?,
            q_inv_sq_db: self.parse("scenario.q_inv_sq_db", "a real number (dB)")?,
            phi_max_deg: self.parse("scenario.phi_max_deg", "a real number (degrees)")?,
            covariance_kind: CovarianceKind::parse(&self.values["scenario.covariance_kind"])?,
            trials: self.parse("scenario.trials", "an integer >= 1")?,
            seed: self.parse("scenario.seed", "an unsigned integer")?,
        };
        let kind = ExperimentKind::parse(&self.values["experiment.kind"])?;
        let null_path = self.values["test.null_path"].clone();
        let sector_spacing = self.values["sector.d_over_lambda"].clone();
        let options = ExperimentOptions {
            n_diags: self.parse("estimator.n_diags", "an integer >= 1")?,
            arg_mode: ArgMode::parse(&self.values["estimator.arg_mode"])?,
            refine: self.parse("estimator.refine", "true or false")?,
            exact_covariance: self.parse("estimator.exact_covariance", "true or false")?,
            use_rmt: self.parse("test.use_rmt", "true or false")?,
            alpha: self.parse("test.alpha", "a real number in (0, 1)")?,
            null_trials: self.parse("test.null_trials", "an integer >= 2")?,
            null_path: if null_path.is_empty() {
                None
            } else {
                Some(null_path)
            },
            element_pattern: ElementPattern::parse(&self.values["sector.element_pattern"])?,
            sector_d_over_lambda: if sector_spacing.is_empty() {
                None
            } else {
                Some(sector_spacing.parse().map_err(|_| {
                    Error::Config(format!(
                        "key 'sector.d_over_lambda' expects a real number, got \
                         '{sector_spacing}'"
                    ))
                })?)
            },
            bins: self.parse("report.bins", "an integer >= 1")?,
        };
        let mut spec = ExperimentSpec::new(scenario, kind, options);
        spec.validate()?;
        spec.resolved = resolved_pairs(&spec);
        Ok(spec)
    }
}

/// Renders the spec back into sorted canonical key=value pairs; optional
/// keys carry the values that were actually used, so replaying the echo
/// reproduces the run exactly.
pub fn resolved_pairs(spec: &ExperimentSpec) -> Vec<(String, String)> {
    let sc = &spec.scenario;
    let o = &spec.options;
    let mut pairs: Vec<(String, String)> = vec![
        ("scenario.N".into(), sc.n.to_string()),
        ("scenario.T".into(), sc.t.to_string()),
        ("scenario.W1".into(), sc.w1.to_string()),
        ("scenario.W2".into(), sc.w2.to_string()),
        ("scenario.theta0".into(), sc.theta0.to_string()),
        ("scenario.d_over_lambda".into(), sc.d_over_lambda.to_string()),
        ("scenario.q_inv_sq_db".into(), sc.q_inv_sq_db.to_string()),
        ("scenario.phi_max_deg".into(), sc.phi_max_deg.to_string()),
        (
            "scenario.covariance_kind".into(),
            sc.covariance_kind.as_str().into(),
        ),
        ("scenario.trials".into(), sc.trials.to_string()),
        ("scenario.seed".into(), sc.seed.to_string()),
        ("experiment.kind".into(), spec.kind.as_str().into()),
        ("estimator.n_diags".into(), o.n_diags.to_string()),
        ("estimator.arg_mode".into(), o.arg_mode.as_str().into()),
        ("estimator.refine".into(), o.refine.to_string()),
        (
            "estimator.exact_covariance".into(),
            o.exact_covariance.to_string(),
        ),
        ("test.use_rmt".into(), o.use_rmt.to_string()),
        ("test.alpha".into(), o.alpha.to_string()),
        ("test.null_trials".into(), o.null_trials.to_string()),
        (
            "test.null_path".into(),
            o.null_path.clone().unwrap_or_default(),
        ),
        (
            "sector.d_over_lambda".into(),
            o.sector_d_over_lambda
                .unwrap_or(sc.d_over_lambda)
                .to_string(),
        ),
        (
            "sector.element_pattern".into(),
            o.element_pattern.as_str().into(),
        ),
        ("report.bins".into(), o.bins.to_string()),
    ];
    pairs.sort();
    pairs
}
