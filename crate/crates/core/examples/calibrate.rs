// Calibration oracle for the acceptance constants: measures the empirical
// floor constant, the noise-functional ratios, and the Bernoulli floor
// scaling at the reference sizes, over many seeds. Results get frozen into
// the acceptance suite. (Scratch tool; not part of the library surface.)

use lowrank_core::align::procrustes_align;
use lowrank_core::descent::{default_step, run, DescentConfig};
use lowrank_core::diagnostics::{fit_contraction_series, noise_summary};
use lowrank_core::loss::{BernoulliLoss, LossModel, QuadraticLoss};
use lowrank_core::matrix::{fro_norm, Mode};
use lowrank_core::synth::{
    gen_bernoulli, gen_gaussian_noise_sym, gen_truth, oracle_init, TruthSpec,
};

/// Median and max Rayleigh ratios of the Hessian over random tangent
/// probes at the truth.
fn median_max_curvature(
    loss: &dyn LossModel,
    truth: &lowrank_core::GroundTruth,
    n_samples: usize,
    seed: u64,
) -> (f64, f64) {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    let (u, v) = truth.point().as_asymmetric().unwrap();
    let x = truth.x_star();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let l = lowrank_core::Mat::from_fn(u.nrows(), u.ncols(), |_, _| rng.sample(StandardNormal));
        let rr = lowrank_core::Mat::from_fn(v.nrows(), v.ncols(), |_, _| rng.sample(StandardNormal));
        let p = u * rr.transpose() + l * v.transpose();
        ratios.push(loss.hessian_bilinear(&x, &p, &p) / p.norm_squared());
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (ratios[n_samples / 2], ratios[n_samples - 1])
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if v.len() % 2 == 1 {
        v[v.len() / 2]
    } else {
        0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
    }
}

fn quadratic_floor_constant(n: usize, r: usize, kappa: f64, sigma: f64, seeds: u64) -> Vec<f64> {
    let mut consts = Vec::new();
    for seed in 0..seeds {
        let spec = TruthSpec {
            n,
            q: None,
            r,
            sigma_min: 1.0,
            kappa,
            seed: seed * 31 + 1,
        };
        let truth = gen_truth(&spec, Mode::Symmetric).unwrap();
        let e = gen_gaussian_noise_sym(n, sigma, seed * 31 + 2);
        let loss = QuadraticLoss::new(truth.x_star(), e).unwrap();
        let init = oracle_init(&truth, 0.05, f64::INFINITY, seed * 31 + 3).unwrap();
        let (eta, _) = default_step(1.0, 1.0, truth.kappa(), truth.sigma_min()).unwrap();
        let cfg = DescentConfig {
            eta,
            max_iter: 400,
            seed,
            record_alignment: true,
            align_tol: 1e-9,
            stop_grad_norm: None,
        };
        let traj = run(&loss, init, Some(&truth), &cfg).unwrap();
        let fit = fit_contraction_series(&traj.dist2_series()).unwrap();
        let ns = noise_summary(&loss, &truth, 1, 0.0, 1).unwrap();
        let z_star = truth.point().as_symmetric().unwrap();
        let bound_unit = ns.delta2 * fro_norm(z_star) / (1.0 * truth.sigma_min());
        consts.push(fit.floor / bound_unit);
    }
    consts
}

fn quadratic_noise_ratios(n: usize, r: usize, sigma: f64, seeds: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mut r2, mut rinf, mut rbar) = (vec![], vec![], vec![]);
    for seed in 0..seeds {
        let spec = TruthSpec {
            n,
            q: None,
            r,
            sigma_min: 1.0,
            kappa: 2.0,
            seed: seed * 17 + 5,
        };
        let truth = gen_truth(&spec, Mode::Symmetric).unwrap();
        let e = gen_gaussian_noise_sym(n, sigma, seed * 17 + 6);
        let loss = QuadraticLoss::new(truth.x_star(), e).unwrap();
        let ns = noise_summary(&loss, &truth, 1, 0.0, 1).unwrap();
        let nf = n as f64;
        r2.push(ns.delta2 / (sigma * nf.sqrt() / nf));
        rinf.push(ns.delta_inf / (sigma * ((r as f64 + nf.ln()) / nf).sqrt()));
        rbar.push(ns.delta_inf_bar / sigma);
    }
    (r2, rinf, rbar)
}

/// One Bernoulli trajectory with the step size set from the measured
/// curvature band at the truth. Returns the dist_inf series, the noise
/// ratios (delta2 and delta_inf against their predicted scalings), and the
/// worst-direction ratio delta_inf_bar / (alpha sigma_min).
fn bernoulli_run(
    n: usize,
    sigma_min: f64,
    kappa: f64,
    phi: f64,
    seed: u64,
    max_iter: usize,
) -> (Vec<(usize, f64)>, f64, f64, f64, f64) {
    let spec = TruthSpec {
        n,
        q: Some(n),
        r: 2,
        sigma_min,
        kappa,
        seed: seed * 13 + 1,
    };
    let truth = gen_truth(&spec, Mode::Asymmetric).unwrap();
    let data = gen_bernoulli(&truth, 0.0, seed * 13 + 2).unwrap();
    let loss = BernoulliLoss::new(data);
    let alpha_decl = loss.meta().declared_alpha.unwrap();
    // Practical step from the sampled curvature ceiling (the max Rayleigh
    // ratio is concentrated; the min and median have heavy lower tails for
    // saturated logistic entries): eta = 1 / (20 beta_hat kappa sigma_min).
    let (_, beta_max) = median_max_curvature(&loss, &truth, 100, seed * 13 + 7);
    let (eta, _) = default_step(beta_max, beta_max, truth.kappa(), truth.sigma_min()).unwrap();
    let init = oracle_init(&truth, phi, f64::INFINITY, seed * 13 + 3).unwrap();
    let tau = truth.tau_star().unwrap();
    let cfg = DescentConfig {
        eta,
        max_iter,
        seed,
        record_alignment: true,
        align_tol: 1e-9 * tau * tau,
        stop_grad_norm: None,
    };
    let traj = run(&loss, init, Some(&truth), &cfg).unwrap();
    let ns = noise_summary(&loss, &truth, 1, 0.0, 1).unwrap();
    let nu = lowrank_core::loss::BernoulliLoss::new(gen_bernoulli(&truth, 0.0, seed * 13 + 2).unwrap()).nu();
    let nf = n as f64;
    let r2 = ns.delta2 / (nu / nf).sqrt();
    let rinf = ns.delta_inf / ((nu * (2.0 + nf.ln()) / nf).sqrt());
    (
        traj.dist_inf_series(),
        r2,
        rinf,
        ns.delta_inf_bar / (alpha_decl * truth.sigma_min()),
        eta,
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let what = args.get(1).map(String::as_str).unwrap_or("all");

    if what == "floor" || what == "all" {
        // Criterion 5 constant: floor vs Delta2 ||Z*||_F / (alpha sigma_min).
        for sigma in [0.01, 0.02] {
            let consts = quadratic_floor_constant(100, 3, 2.0, sigma, 200);
            let max = consts.iter().cloned().fold(0.0f64, f64::max);
            println!(
                "quadratic floor constant (sigma={sigma}): median {:.3}, max {:.3} over {} seeds",
                median(consts.clone()),
                max,
                consts.len()
            );
        }
        // Floor ratio between sigma = 0.02 and 0.01 runs, paired by seed.
        let f1 = quadratic_floor_constant(100, 3, 2.0, 0.01, 20);
        let f2 = quadratic_floor_constant(100, 3, 2.0, 0.02, 20);
        // Constants are floor / (Delta2 ...) with Delta2 proportional to
        // sigma; recover the raw ratio via 2 * c2/c1 per seed.
        let ratios: Vec<f64> = f1
            .iter()
            .zip(&f2)
            .map(|(a, b)| 2.0 * b / a)
            .collect();
        println!("floor(2s)/floor(s): median {:.3}", median(ratios));
    }

    if what == "noise" || what == "all" {
        let (r2, rinf, rbar) = quadratic_noise_ratios(100, 3, 0.01, 50);
        println!(
            "quadratic noise ratios (n=100): delta2 {:.3}, delta_inf {:.3}, delta_inf_bar {:.3}",
            median(r2),
            median(rinf),
            median(rbar)
        );
    }

    if what == "bern" || what == "all" {
        let t0 = std::time::Instant::now();
        for n in [200usize, 800] {
            let mut floors = Vec::new();
            let mut barratio = Vec::new();
            let (mut r2s, mut rinfs) = (vec![], vec![]);
            for seed in 0..5u64 {
                let (series, r2, rinf, bar, eta) = bernoulli_run(n, 0.8, 1.5, 0.5, seed, 500);
                let fit = fit_contraction_series(&series);
                let first = series.first().unwrap().1;
                let minv = series.iter().map(|&(_, d)| d).fold(f64::INFINITY, f64::min);
                match fit {
                    Ok(f) => {
                        floors.push(f.floor);
                        println!(
                            "  bern n={n} seed={seed}: start {first:.3e} min {minv:.3e} floor {:.3e} rho {:.4} eta {eta:.2}",
                            f.floor, f.rho_hat
                        );
                    }
                    Err(e) => println!(
                        "  bern n={n} seed={seed}: start {first:.3e} min {minv:.3e} eta {eta:.2} fit failed: {e}"
                    ),
                }
                barratio.push(bar);
                r2s.push(r2);
                rinfs.push(rinf);
            }
            println!(
                "bern n={n}: median floor {}, bar-ratio {:.3}, r2-ratio {:.3}, rinf-ratio {:.3}",
                if floors.is_empty() {
                    "n/a".to_string()
                } else {
                    format!("{:.4e}", median(floors.clone()))
                },
                median(barratio),
                median(r2s),
                median(rinfs)
            );
        }
        println!("bern calibration took {:.1}s", t0.elapsed().as_secs_f64());
    }

    if what == "quadcheck" || what == "all" {
        // Criterion 4 check: per-step ratio <= theorem rho until 1e-10.
        let spec = TruthSpec {
            n: 100,
            q: None,
            r: 3,
            sigma_min: 1.0,
            kappa: 2.0,
            seed: 77,
        };
        let truth = gen_truth(&spec, Mode::Symmetric).unwrap();
        let loss = QuadraticLoss::new(truth.x_star(), lowrank_core::Mat::zeros(100, 100)).unwrap();
        let (eta, rho) = default_step(1.0, 1.0, truth.kappa(), truth.sigma_min()).unwrap();
        let init = oracle_init(&truth, 0.05, f64::INFINITY, 78).unwrap();
        let cfg = DescentConfig {
            eta,
            max_iter: 700,
            seed: 0,
            record_alignment: true,
            align_tol: 1e-9,
            stop_grad_norm: None,
        };
        let traj = run(&loss, init, Some(&truth), &cfg).unwrap();
        let series = traj.dist2_series();
        let mut worst: f64 = 0.0;
        let mut crossed = 0usize;
        for w in series.windows(2) {
            if w[0].1 < 1e-10 {
                crossed = w[0].0;
                break;
            }
            worst = worst.max(w[1].1 / w[0].1);
        }
        println!("noiseless sym: worst per-step ratio {:.6} vs rho {:.6}; crossed 1e-10 at iter {}", worst, rho, crossed);
        let fit = fit_contraction_series(&series).unwrap();
        println!("fitted rho_hat {:.6}", fit.rho_hat);

        // init alignment check of procrustes radius
        let z0 = oracle_init(&truth, 0.05, f64::INFINITY, 79).unwrap();
        let res = procrustes_align(
            z0.as_symmetric().unwrap(),
            truth.point().as_symmetric().unwrap(),
        )
        .unwrap();
        println!(
            "oracle radius check: {:.6e} vs {:.6e}",
            res.dist2,
            0.05 * fro_norm(truth.point().as_symmetric().unwrap())
        );
    }
}
