// Probe: curvature quantiles and decay horizon vs signal scale for the
// Bernoulli model (scratch).
use lowrank_core::descent::{default_step, run, DescentConfig};
use lowrank_core::diagnostics::fit_contraction_series;
use lowrank_core::loss::{BernoulliLoss, LossModel};
use lowrank_core::matrix::Mode;
use lowrank_core::synth::{gen_bernoulli, gen_truth, oracle_init, TruthSpec};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let sigma_min: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let iters: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let spec = TruthSpec { n, q: Some(n), r: 2, sigma_min, kappa: 1.5, seed: 1 };
    let truth = gen_truth(&spec, Mode::Asymmetric).unwrap();
    let x = truth.x_star();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in x.iter() { lo = lo.min(v); hi = hi.max(v); }
    let data = gen_bernoulli(&truth, 0.0, 2).unwrap();
    println!("entries [{lo:.2}, {hi:.2}], M1 {:.2} M2 {:.2}", data.m1, data.m2);
    let loss = BernoulliLoss::new(data);
    println!("nu {:.3e}, declared alpha {:.3e}", loss.nu(), loss.meta().declared_alpha.unwrap());

    // curvature quantiles over tangent probes
    let (u, v) = truth.point().as_asymmetric().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ratios: Vec<f64> = (0..200).map(|_| {
        let l = lowrank_core::Mat::from_fn(n, 2, |_, _| rng.sample(StandardNormal));
        let rr = lowrank_core::Mat::from_fn(n, 2, |_, _| rng.sample(StandardNormal));
        let p = u * rr.transpose() + l * v.transpose();
        loss.hessian_bilinear(&x, &p, &p) / p.norm_squared()
    }).collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("tangent curvature: q05 {:.3e} q50 {:.3e} max {:.3e} (x nu: {:.3})",
        ratios[10], ratios[100], ratios[199], ratios[199] / loss.nu());

    let beta = ratios[199];
    let (eta, _) = default_step(beta, beta, truth.kappa(), truth.sigma_min()).unwrap();
    println!("eta {eta:.3e}, eta*nu {:.3}", eta * loss.nu());
    let init = oracle_init(&truth, 0.5, f64::INFINITY, 4).unwrap();
    let tau = truth.tau_star().unwrap();
    let cfg = DescentConfig { eta, max_iter: iters, seed: 0, record_alignment: true,
        align_tol: 1e-9 * tau * tau, stop_grad_norm: None };
    let t0 = std::time::Instant::now();
    let traj = run(&loss, init, Some(&truth), &cfg).unwrap();
    let series = traj.dist_inf_series();
    for k in [0, iters/8, iters/4, iters/2, 3*iters/4, iters] {
        if let Some(&(it, d)) = series.get(k) { println!("  iter {it:5} dist_inf {d:.4e} (rel {:.3})", d / truth.omega_star()); }
    }
    match fit_contraction_series(&series) {
        Ok(f) => println!("fit: rho {:.5} floor {:.4e} window {:?}", f.rho_hat, f.floor, f.fit_window),
        Err(e) => println!("fit failed: {e}"),
    }
    println!("run took {:.1}s", t0.elapsed().as_secs_f64());
}
