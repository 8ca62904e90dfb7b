//! Scratch probe for Monte Carlo table values. Not part of the library.

use ulacal::calib::{
    adhoc_estimate, align_and_rmse, ml_estimate_from_cov, superdiag_estimate, SuperdiagArg,
};
use ulacal::numerics::wrap_angle;
use ulacal::numerics::hermitian_sqrt;
use ulacal::scenario::{
    apply_phase_errors, build_covariance, draw_phase_errors, streamed_sample_covariance,
    trial_rng, ScenarioConfig, SUBSTREAM_PHASES, SUBSTREAM_SNAPSHOTS,
};

/// Mean squared wrapped residual after removing a pure ramp `beta * l` (no offset).
fn slope_only_msr(residuals: &[f64]) -> f64 {
    let n = residuals.len();
    let obj = |beta: f64| -> f64 {
        residuals
            .iter()
            .enumerate()
            .map(|(l, &r)| wrap_angle(r - beta * l as f64).powi(2))
            .sum::<f64>()
            / n as f64
    };
    let coarse = 40_001usize;
    let mut best_b = 0.0;
    let mut best = obj(0.0);
    for i in 0..coarse {
        let b = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / coarse as f64;
        let v = obj(b);
        if v < best {
            best = v;
            best_b = b;
        }
    }
    // Local polish: least squares on the currently wrapped residuals.
    for _ in 0..60 {
        let (mut num, mut den) = (0.0, 0.0);
        for (l, &r) in residuals.iter().enumerate() {
            let w = wrap_angle(r - best_b * l as f64);
            num += w * l as f64;
            den += (l * l) as f64;
        }
        let step = num / den;
        let cand = best_b + step;
        let v = obj(cand);
        if v < best {
            best = v;
            best_b = cand;
        } else {
            break;
        }
    }
    best
}

fn run_table(n: usize, t: usize, trials: u64, phi_max_deg: f64, which: &str) {
    let sc = ScenarioConfig {
        n,
        ..ScenarioConfig::default()
    };
    let t_n = build_covariance(&sc).unwrap();
    let sqrt = hermitian_sqrt(&t_n.expand()).unwrap();
    let nf = n as f64;
    let (mut sum_raw, mut sum_slope, mut sum_aligned, mut sum_center) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut used = 0u64;
    for trial in 0..trials {
        let mut rng_p = trial_rng(sc.seed, trial, SUBSTREAM_PHASES);
        let truth = draw_phase_errors(phi_max_deg, n, &mut rng_p);
        let mut rng_s = trial_rng(sc.seed, trial, SUBSTREAM_SNAPSHOTS);
        let r0 = streamed_sample_covariance(&sqrt, t, &mut rng_s);
        let r_hat = apply_phase_errors(&r0, &truth);
        let est = match which {
            "ml" => ml_estimate_from_cov(&r_hat, &t_n, false).unwrap().phases,
            "sd_true" => {
                let a1 = t_n.lag(1).arg();
                superdiag_estimate(&r_hat, SuperdiagArg::True(a1), 1)
                    .unwrap()
                    .phases
            }
            "sd_est" => superdiag_estimate(&r_hat, SuperdiagArg::Estimated, 1)
                .unwrap()
                .phases,
            "sd3_est" => superdiag_estimate(&r_hat, SuperdiagArg::Estimated, 3)
                .unwrap()
                .phases,
            "adhoc" => adhoc_estimate(&r_hat, &t_n).unwrap().phases,
            "adhoc4" => {
                // Variant: keep only |j-k| <= 4 in the element-wise ratio.
                use ulacal::numerics::{hermitian_eig, hermitize};
                use ulacal::numerics::C64;
                let te = t_n.expand();
                let mut delta = ulacal::numerics::CMat::zeros(n, n);
                for j in 0..n {
                    for k in 0..n {
                        if j.abs_diff(k) <= 4 {
                            delta[(j, k)] = r_hat[(j, k)] / te[(j, k)];
                        } else {
                            delta[(j, k)] = C64::new(0.0, 0.0);
                        }
                    }
                }
                let eig = hermitian_eig(&hermitize(&delta)).unwrap();
                let u = eig.vector(n - 1);
                let raw: Vec<f64> = (0..n).map(|l| u[l].arg()).collect();
                ulacal::scenario::PhaseVector::pinned(&raw)
            }
            other => panic!("unknown estimator {other}"),
        };
        let raw: Vec<f64> = (0..n)
            .map(|l| wrap_angle(est.as_slice()[l] - truth.as_slice()[l]))
            .collect();
        sum_raw += raw.iter().map(|r| r * r).sum::<f64>() / nf;
        let mean_r = raw.iter().sum::<f64>() / nf;
        sum_center += raw
            .iter()
            .map(|r| wrap_angle(r - mean_r).powi(2))
            .sum::<f64>()
            / nf;
        sum_slope += slope_only_msr(&raw);
        let (_, rmse_deg) = align_and_rmse(&est, &truth).unwrap();
        sum_aligned += rmse_deg.to_radians().powi(2);
        used += 1;
    }
    let to_deg = |s: f64| (s / used as f64).sqrt().to_degrees();
    println!(
        "{which} N={n} T={t} trials={used}: raw={:.3} center={:.3} slope={:.3} aligned={:.3} deg",
        to_deg(sum_raw),
        to_deg(sum_center),
        to_deg(sum_slope),
        to_deg(sum_aligned)
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("ml");
    let trials: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let n: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(17);
    for &t in &[100usize, 300, 3000, 30000] {
        let tr = if t >= 30000 { trials.min(200) } else { trials };
        run_table(n, t, tr, 20.0, which);
    }
}
