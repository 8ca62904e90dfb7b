//! Scratch probe: per-step superdiagonal argument noise vs theory.
use ulacal::numerics::{hermitian_sqrt, wrap_angle};
use ulacal::scenario::{
    build_covariance, streamed_sample_covariance, trial_rng, ScenarioConfig, SUBSTREAM_SNAPSHOTS,
};

fn main() {
    let cfg = ScenarioConfig::default();
    let t_n = build_covariance(&cfg).unwrap();
    let sqrt = hermitian_sqrt(&t_n.expand()).unwrap();
    let n = cfg.n;
    let t = 100usize;
    let trials = 4000u64;
    let expected = t_n.lag(1).conj().arg();
    let mut sum2 = vec![0.0f64; n - 1];
    let mut cross = 0.0f64;
    let mut walk2 = 0.0f64;
    for trial in 0..trials {
        let mut rng = trial_rng(cfg.seed, trial, SUBSTREAM_SNAPSHOTS);
        let r0 = streamed_sample_covariance(&sqrt, t, &mut rng);
        let eps: Vec<f64> = (0..n - 1)
            .map(|p| wrap_angle(r0[(p, p + 1)].arg() - expected))
            .collect();
        for (p, e) in eps.iter().enumerate() {
            sum2[p] += e * e;
        }
        for p in 0..n - 2 {
            cross += eps[p] * eps[p + 1];
        }
        // pinned walk: W_l = sum_{p<l} eps_p  (recursion error accumulates with sign -eps)
        let mut w = 0.0;
        let mut acc = 0.0;
        for e in &eps {
            w += e;
            acc += w * w;
        }
        walk2 += acc / n as f64;
    }
    let tf = trials as f64;
    let rho2 = (t_n.lag(1).norm() / t_n.lag(0).norm()).powi(2);
    let theory = ((1.0 - rho2) / rho2 / (2.0 * t as f64)).sqrt();
    println!("theory sigma = {:.4} deg", theory.to_degrees());
    let mean_s2 = sum2.iter().sum::<f64>() / (n - 1) as f64 / tf;
    println!("empirical per-step rms = {:.4} deg", mean_s2.sqrt().to_degrees());
    println!(
        "consecutive-step corr = {:.4}",
        (cross / ((n - 2) as f64 * tf)) / mean_s2
    );
    println!("walk raw rms = {:.4} deg", (walk2 / tf).sqrt().to_degrees());
}
