//! Numeric certificates for the landscape analysis: sampled curvature
//! bounds, augmented-Hessian assembly with eigenvalue checks, noise
//! functionals, contraction-rate fitting, and finite-difference gradient
//! checks.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::descent::Trajectory;
use crate::error::{Error, Result};
use crate::loss::{noise_gradient, LossModel};
use crate::matrix::{fro_norm, inf_to_one, op_norm, two_to_inf, FactorPoint, GroundTruth, Mat};
use crate::penalty::{augmented_value_grad, PenaltyConfig};
use crate::synth::oracle_init;

/// Sampled two-sided curvature bounds of the loss Hessian on tangent
/// directions. These certify a sampled bound, not a supremum.
#[derive(Debug, Clone)]
pub struct CurvatureEstimate {
    /// Smallest sampled Rayleigh ratio.
    pub alpha_hat: f64,
    /// Largest sampled Rayleigh ratio.
    pub beta_hat: f64,
    pub n_samples: usize,
    /// Radius used to scatter anchor points (0 = probe the anchor only).
    pub region_radius: f64,
    /// Tightest sampled constant for the row-restricted cross-curvature
    /// inequality, when requested.
    pub rowwise_beta_hat: Option<f64>,
}

fn gauss_mat(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Mat {
    Mat::from_fn(n, m, |_, _| rng.sample(StandardNormal))
}

/// Tangent-space perturbation at a factor point:
/// P_Z(W) = Z W^T + W Z^T (symmetric) or U R^T + L V^T (asymmetric).
fn tangent(point: &FactorPoint, rng: &mut ChaCha8Rng) -> Mat {
    match point {
        FactorPoint::Symmetric { z } => {
            let w = gauss_mat(rng, z.nrows(), z.ncols());
            z * w.transpose() + &w * z.transpose()
        }
        FactorPoint::Asymmetric { u, v } => {
            let l = gauss_mat(rng, u.nrows(), u.ncols());
            let r = gauss_mat(rng, v.nrows(), v.ncols());
            u * r.transpose() + l * v.transpose()
        }
    }
}

/// Samples Rayleigh ratios of the Hessian bilinear form over random tangent
/// directions at (perturbations of) the anchor, returning the observed
/// [alpha_hat, beta_hat] band and optionally the row-wise cross-curvature
/// constant.
pub fn estimate_curvature(
    loss: &dyn LossModel,
    anchor: &FactorPoint,
    n_samples: usize,
    rowwise: bool,
    region_eps: f64,
    seed: u64,
) -> Result<CurvatureEstimate> {
    if n_samples < 10 {
        return Err(Error::InvalidArgument(
            "need at least 10 curvature samples".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alpha_hat = f64::INFINITY;
    let mut beta_hat = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        let point = if region_eps > 0.0 {
            perturb_factors(anchor, region_eps * rng.random::<f64>(), &mut rng)
        } else {
            anchor.clone()
        };
        let x = point.product();
        let p = tangent(&point, &mut rng);
        let ratio = loss.hessian_bilinear(&x, &p, &p) / p.norm_squared();
        alpha_hat = alpha_hat.min(ratio);
        beta_hat = beta_hat.max(ratio);
    }

    let rowwise_beta_hat = if rowwise {
        let mut worst: f64 = 0.0;
        for _ in 0..n_samples {
            let x = anchor.product();
            match anchor {
                FactorPoint::Symmetric { z } => {
                    let (n, r) = z.shape();
                    let i = rng.random_range(0..n);
                    let h = gauss_mat(&mut rng, r, 1);
                    let mut w = gauss_mat(&mut rng, n, r);
                    for j in 0..r {
                        w[(i, j)] = 0.0;
                    }
                    let mut wi = Mat::zeros(n, r);
                    for j in 0..r {
                        wi[(i, j)] = h[(j, 0)];
                    }
                    let p1 = z * wi.transpose() + &wi * z.transpose();
                    let p2 = z * w.transpose() + &w * z.transpose();
                    let denom = z.row(i).norm() * h.norm() * op_norm(z) * fro_norm(&w);
                    if denom > 0.0 {
                        let val = loss.hessian_bilinear(&x, &p1, &p2).abs() / denom;
                        worst = worst.max(val);
                    }
                }
                FactorPoint::Asymmetric { u, v } => {
                    let (n, r) = u.shape();
                    let q = v.nrows();
                    // First form: left-row perturbation e_i h^T against a
                    // mixed direction with that row zeroed.
                    let i = rng.random_range(0..n);
                    let h = gauss_mat(&mut rng, r, 1);
                    let hv = v * &h; // V h
                    let mut p1 = Mat::zeros(n, q);
                    for j in 0..q {
                        p1[(i, j)] = hv[(j, 0)];
                    }
                    let rr = gauss_mat(&mut rng, q, r);
                    let mut l = gauss_mat(&mut rng, n, r);
                    for j in 0..r {
                        l[(i, j)] = 0.0;
                    }
                    let p2 = u * rr.transpose() + &l * v.transpose();
                    let ui_r = u.row(i) * rr.transpose();
                    let denom = hv.norm() * ui_r.norm();
                    if denom > 0.0 {
                        let val = loss.hessian_bilinear(&x, &p1, &p2).abs() / denom;
                        worst = worst.max(val);
                    }
                    // Second form: right-row perturbation.
                    let j = rng.random_range(0..q);
                    let h = gauss_mat(&mut rng, r, 1);
                    let hu = u * &h;
                    let mut p1 = Mat::zeros(n, q);
                    for i2 in 0..n {
                        p1[(i2, j)] = hu[(i2, 0)];
                    }
                    let ll = gauss_mat(&mut rng, n, r);
                    let mut rr = gauss_mat(&mut rng, q, r);
                    for k in 0..r {
                        rr[(j, k)] = 0.0;
                    }
                    let p2 = u * rr.transpose() + &ll * v.transpose();
                    let lvj = &ll * v.row(j).transpose();
                    let denom = hu.norm() * lvj.norm();
                    if denom > 0.0 {
                        let val = loss.hessian_bilinear(&x, &p1, &p2).abs() / denom;
                        worst = worst.max(val);
                    }
                }
            }
        }
        Some(worst)
    } else {
        None
    };

    Ok(CurvatureEstimate {
        alpha_hat,
        beta_hat,
        n_samples,
        region_radius: region_eps,
        rowwise_beta_hat,
    })
}

/// Gaussian perturbation of the factor blocks with relative weighted size
/// `eps` (used to scatter curvature anchors).
fn perturb_factors(point: &FactorPoint, eps: f64, rng: &mut ChaCha8Rng) -> FactorPoint {
    match point {
        FactorPoint::Symmetric { z } => {
            let d = gauss_mat(rng, z.nrows(), z.ncols());
            let scale = eps * fro_norm(z) / fro_norm(&d).max(1e-300);
            FactorPoint::Symmetric { z: z + d * scale }
        }
        FactorPoint::Asymmetric { u, v } => {
            let du = gauss_mat(rng, u.nrows(), u.ncols());
            let dv = gauss_mat(rng, v.nrows(), v.ncols());
            let scale = eps * (fro_norm(u).powi(2) + fro_norm(v).powi(2)).sqrt()
                / (du.norm_squared() + dv.norm_squared()).sqrt().max(1e-300);
            FactorPoint::Asymmetric {
                u: u + du * scale,
                v: v + dv * scale,
            }
        }
    }
}

/// Monte-Carlo restricted-isometry probe for a sensing ensemble: the worst
/// deviation of m^-1 ||A(H)||^2 / ||H||_F^2 from 1 over random rank-`rank`
/// probes H = A B^T.
pub fn estimate_rip_constant(
    data: &crate::loss::SensingData,
    rank: usize,
    n_probes: usize,
    seed: u64,
) -> f64 {
    let (n, q) = data.shape();
    let m = data.m() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_probes.max(1) {
        let a = gauss_mat(&mut rng, n, rank);
        let b = gauss_mat(&mut rng, q, rank);
        let h = a * b.transpose();
        let energy: f64 = data.operators.iter().map(|op| op.dot(&h).powi(2)).sum();
        let ratio = energy / (m * h.norm_squared());
        worst = worst.max((ratio - 1.0).abs());
    }
    worst
}

/// Dense-eigendecomposition cap for the assembled Hessian.
pub const HESSIAN_DIM_LIMIT: usize = 4000;

fn flatten_point(point: &FactorPoint) -> Vec<f64> {
    match point {
        FactorPoint::Symmetric { z } => crate::matrix::vec_row_major(z),
        FactorPoint::Asymmetric { u, v } => {
            let mut out = crate::matrix::vec_row_major(u);
            out.extend(crate::matrix::vec_row_major(v));
            out
        }
    }
}

fn unflatten_point(template: &FactorPoint, coords: &[f64]) -> FactorPoint {
    match template {
        FactorPoint::Symmetric { z } => {
            let (n, r) = z.shape();
            FactorPoint::Symmetric {
                z: Mat::from_row_slice(n, r, coords),
            }
        }
        FactorPoint::Asymmetric { u, v } => {
            let (n, r) = u.shape();
            let q = v.nrows();
            FactorPoint::Asymmetric {
                u: Mat::from_row_slice(n, r, &coords[..n * r]),
                v: Mat::from_row_slice(q, r, &coords[n * r..n * r + q * r]),
            }
        }
    }
}

pub(crate) fn assemble_augmented_hessian_raw(
    loss: &dyn LossModel,
    point: &FactorPoint,
    cfg: &PenaltyConfig,
) -> Result<(Mat, f64)> {
    let coords = flatten_point(point);
    let dim = coords.len();
    if dim > HESSIAN_DIM_LIMIT {
        return Err(Error::DimensionTooLarge {
            dim,
            limit: HESSIAN_DIM_LIMIT,
        });
    }
    // Central differences of the analytic augmented gradient, one column
    // per coordinate; step scaled to the factor magnitude.
    let rms = (coords.iter().map(|v| v * v).sum::<f64>() / dim as f64).sqrt();
    let h = 1e-5 * rms.max(1.0);
    let mut hess = Mat::zeros(dim, dim);
    let mut work = coords.clone();
    for k in 0..dim {
        work[k] = coords[k] + h;
        let plus = augmented_value_grad(loss, &unflatten_point(point, &work), cfg)?.1;
        work[k] = coords[k] - h;
        let minus = augmented_value_grad(loss, &unflatten_point(point, &work), cfg)?.1;
        work[k] = coords[k];
        let gp = flatten_point(&plus);
        let gm = flatten_point(&minus);
        for i in 0..dim {
            hess[(i, k)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let defect = fro_norm(&(&hess - hess.transpose())) / fro_norm(&hess).max(1e-300);
    let mut sym = (&hess + hess.transpose()) * 0.5;

    // Asymmetric Hessians are returned in the scaled metric
    // S H S, S = diag(q^-1/2 I_nr, n^-1/2 I_qr).
    if let FactorPoint::Asymmetric { u, v } = point {
        let (n, r) = u.shape();
        let q = v.nrows();
        let su = 1.0 / (q as f64).sqrt();
        let sv = 1.0 / (n as f64).sqrt();
        let scale = |k: usize| if k < n * r { su } else { sv };
        for i in 0..dim {
            for j in 0..dim {
                sym[(i, j)] *= scale(i) * scale(j);
            }
        }
    }
    Ok((sym, defect))
}

/// Assembles the Hessian of the augmented objective at a point by central
/// finite differences of the analytic gradient, symmetrized. For asymmetric
/// points the result is pre/post-multiplied by the block scaling
/// diag(q^-1/2 I_nr, n^-1/2 I_qr).
pub fn assemble_augmented_hessian(
    loss: &dyn LossModel,
    point: &FactorPoint,
    cfg: &PenaltyConfig,
) -> Result<Mat> {
    Ok(assemble_augmented_hessian_raw(loss, point, cfg)?.0)
}

/// Extreme eigenvalues (min, max) of a symmetric matrix.
pub fn eigen_range(m: &Mat) -> (f64, f64) {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    (lo, hi)
}

/// Scale-normalized bounds on the stochastic gradient perturbation.
#[derive(Debug, Clone)]
pub struct NoiseSummary {
    /// Operator-norm bound: sup over the region of n^-1 ||G~|| (symmetric)
    /// or (n q)^-1/2 ||G~|| (asymmetric).
    pub delta2: f64,
    /// Row-wise bound along the true factor directions, at the truth.
    pub delta_inf: f64,
    /// Worst-direction row-wise bound: scaled max l1 row-sums over the
    /// region.
    pub delta_inf_bar: f64,
    pub n_region_samples: usize,
}

/// Evaluates the three noise functionals by sampling points in a radius-eps
/// neighborhood of the truth (plus the truth itself). For losses whose
/// noise gradient is constant in the point, one sample is exact.
pub fn noise_summary(
    loss: &dyn LossModel,
    truth: &GroundTruth,
    n_region_samples: usize,
    region_eps: f64,
    seed: u64,
) -> Result<NoiseSummary> {
    let mut points = vec![truth.point().clone()];
    for k in 0..n_region_samples.saturating_sub(1) {
        let phi = region_eps * (k + 1) as f64 / n_region_samples as f64;
        points.push(oracle_init(truth, phi, f64::INFINITY, seed.wrapping_add(k as u64 + 1))?);
    }

    let mut delta2: f64 = 0.0;
    let mut delta_inf_bar: f64 = 0.0;
    for point in &points {
        let g = noise_gradient(loss, &point.product())?;
        match truth.point() {
            FactorPoint::Symmetric { .. } => {
                let n = g.nrows() as f64;
                delta2 = delta2.max(op_norm(&g) / n);
                delta_inf_bar = delta_inf_bar.max(inf_to_one(&g) / n);
            }
            FactorPoint::Asymmetric { .. } => {
                let n = g.nrows() as f64;
                let q = g.ncols() as f64;
                delta2 = delta2.max(op_norm(&g) / (n * q).sqrt());
                delta_inf_bar = delta_inf_bar
                    .max(inf_to_one(&g) / q)
                    .max(inf_to_one(&g.transpose()) / n);
            }
        }
    }

    // Row-wise functional along the truth directions, evaluated at the
    // truth.
    let g_star = noise_gradient(loss, &truth.x_star())?;
    let delta_inf = match truth.point() {
        FactorPoint::Symmetric { z } => {
            let n = z.nrows() as f64;
            two_to_inf(&(&g_star * z)) / (n.sqrt() * op_norm(z))
        }
        FactorPoint::Asymmetric { u, v } => {
            let n = u.nrows() as f64;
            let q = v.nrows() as f64;
            let left = two_to_inf(&(&g_star * v)) / (q.sqrt() * op_norm(v));
            let right = two_to_inf(&(g_star.transpose() * u)) / (n.sqrt() * op_norm(u));
            left.max(right)
        }
    };

    Ok(NoiseSummary {
        delta2,
        delta_inf,
        delta_inf_bar,
        n_region_samples: points.len(),
    })
}

/// Least-squares fit of the decay rate and plateau floor of an error
/// trajectory.
#[derive(Debug, Clone)]
pub struct RateFit {
    pub rho_hat: f64,
    pub floor: f64,
    /// First and last iteration indices used for the decay fit.
    pub fit_window: (usize, usize),
    pub r_squared: f64,
}

/// Fits the decay phase of a positive series: the floor is the median of
/// the last 10% of values, and the rate is exp(slope) of a least-squares
/// line through log(values) restricted to entries above 3x the floor.
pub fn fit_contraction_series(series: &[(usize, f64)]) -> Result<RateFit> {
    if series.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "rate fitting needs at least 10 points, got {}",
            series.len()
        )));
    }
    let tail_len = (series.len() as f64 * 0.1).ceil() as usize;
    let mut tail: Vec<f64> = series[series.len() - tail_len..]
        .iter()
        .map(|&(_, d)| d)
        .collect();
    tail.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let floor = if tail.len() % 2 == 1 {
        tail[tail.len() / 2]
    } else {
        0.5 * (tail[tail.len() / 2 - 1] + tail[tail.len() / 2])
    };

    let window: Vec<(usize, f64)> = series
        .iter()
        .copied()
        .filter(|&(_, d)| d > 3.0 * floor && d > 0.0)
        .collect();
    if window.len() < 5 {
        return Err(Error::InsufficientDecay {
            have: window.len(),
            need: 5,
        });
    }

    let m = window.len() as f64;
    let xs: Vec<f64> = window.iter().map(|&(t, _)| t as f64).collect();
    let ys: Vec<f64> = window.iter().map(|&(_, d)| d.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / m;
    let y_mean = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientDecay { have: 1, need: 5 });
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    Ok(RateFit {
        rho_hat: slope.exp(),
        floor,
        fit_window: (window[0].0, window[window.len() - 1].0),
        r_squared,
    })
}

/// Rate fit of a trajectory's dist2 series.
pub fn fit_contraction(traj: &Trajectory) -> Result<RateFit> {
    fit_contraction_series(&traj.dist2_series())
}

/// Compares the analytic gradient against central finite differences along
/// random unit directions; returns the worst relative deviation.
pub fn gradient_fd_check(loss: &dyn LossModel, x: &Mat, n_probes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = loss.gradient(x);
    let scale = (x.norm_squared() / (x.nrows() * x.ncols()) as f64).sqrt();
    let h = 1e-5 * scale.max(1.0);
    let mut worst: f64 = 0.0;
    for _ in 0..n_probes.max(1) {
        let d = gauss_mat(&mut rng, x.nrows(), x.ncols()).normalize();
        let fd = (loss.value(&(x + &d * h)) - loss.value(&(x - &d * h))) / (2.0 * h);
        let an = g.dot(&d);
        // Relative to the gradient magnitude: a unit direction's exact
        // directional derivative is at most ||g||_F, so deviations are
        // measured against that scale.
        let denom = fd.abs().max(an.abs()).max(fro_norm(&g)).max(1e-12);
        worst = worst.max((fd - an).abs() / denom);
    }
    worst
}
