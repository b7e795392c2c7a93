//! The factored gradient-descent engine: single-step updates, the theorem
//! step size, and fully instrumented trajectory runs.
//!
//! Updates (constant step size eta):
//!
//! ```text
//! symmetric:   Z   <- Z - (2 eta / n) G(Z Z^T) Z
//! asymmetric:  U   <- U - (eta / q) G(U V^T) V
//!              V   <- V - (eta / n) G(U V^T)^T U
//! ```
//!
//! Runs are deterministic functions of their inputs; all randomness lives in
//! the instance generators.

use crate::align::{gl_align_from, procrustes_align, stacked_rotation_warm_start};
use crate::error::{Error, Result};
use crate::loss::LossModel;
use crate::matrix::{balance_residual, ensure_finite, fro_norm, FactorPoint, GroundTruth, Mat};
use crate::penalty::{penalty_asym_grad, penalty_sym_grad, PenaltyConfig};

#[derive(Debug, Clone)]
pub struct DescentConfig {
    /// Step size; `default_step` gives the theorem value.
    pub eta: f64,
    pub max_iter: usize,
    /// Instance seed, carried for bookkeeping; the run itself draws no
    /// randomness.
    pub seed: u64,
    /// Whether to solve the alignment problem at every recorded step.
    pub record_alignment: bool,
    /// First-order tolerance for the per-step GL(r) alignment.
    pub align_tol: f64,
    /// Optional early stop once the factor gradient norm falls below this.
    pub stop_grad_norm: Option<f64>,
}

impl DescentConfig {
    pub fn new(eta: f64, max_iter: usize) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {eta}"
            )));
        }
        if max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
        }
        Ok(DescentConfig {
            eta,
            max_iter,
            seed: 0,
            record_alignment: true,
            align_tol: 1e-9,
            stop_grad_norm: None,
        })
    }
}

/// One recorded step of a trajectory. Distance fields are absent when no
/// truth was supplied or the per-step alignment failed to certify.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub iter: usize,
    pub loss_value: f64,
    pub dist2: Option<f64>,
    pub dist_inf: Option<f64>,
    /// Operator norm of n^-1 U^T U - q^-1 V^T V; asymmetric runs only.
    pub balance_residual: Option<f64>,
    /// Norm of the penalty gradient at the aligned iterate (the benignity
    /// diagnostic); absent when alignment was skipped or failed.
    pub penalty_grad_norm: Option<f64>,
    /// Frobenius norm of the factor-space loss gradient.
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub final_point: FactorPoint,
}

impl Trajectory {
    /// The dist2 series, skipping records where alignment was unavailable.
    pub fn dist2_series(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.dist2.map(|d| (r.iter, d)))
            .collect()
    }

    pub fn dist_inf_series(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.dist_inf.map(|d| (r.iter, d)))
            .collect()
    }
}

/// Theorem step size and contraction factor:
/// eta = 1 / (10 (alpha + beta) kappa sigma_min), rho = 1 - eta alpha sigma_min / 4.
pub fn default_step(alpha: f64, beta: f64, kappa: f64, sigma_min: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && beta > 0.0 && kappa >= 1.0 && sigma_min > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "default_step requires alpha, beta, sigma_min > 0 and kappa >= 1; got \
             alpha={alpha}, beta={beta}, kappa={kappa}, sigma_min={sigma_min}"
        )));
    }
    if beta < alpha {
        return Err(Error::InvalidCurvature { alpha, beta });
    }
    let eta = 1.0 / (10.0 * (alpha + beta) * kappa * sigma_min);
    let rho = 1.0 - eta * alpha * sigma_min / 4.0;
    Ok((eta, rho))
}

/// One symmetric update Z - (2 eta / n) G(Z Z^T) Z.
pub fn step_sym(loss: &dyn LossModel, z: &Mat, eta: f64) -> Result<Mat> {
    let g = loss.gradient(&(z * z.transpose()));
    let point = FactorPoint::Symmetric { z: z.clone() };
    match apply_step(&g, &point, eta)? {
        FactorPoint::Symmetric { z } => Ok(z),
        _ => unreachable!("symmetric step keeps the symmetric shape"),
    }
}

/// One asymmetric update; both blocks move simultaneously from the same
/// gradient G(U V^T).
pub fn step_asym(loss: &dyn LossModel, pair: &FactorPoint, eta: f64) -> Result<FactorPoint> {
    let (u, v) = pair
        .as_asymmetric()
        .ok_or_else(|| Error::InvalidArgument("step_asym requires an asymmetric pair".into()))?;
    let g = loss.gradient(&(u * v.transpose()));
    apply_step(&g, pair, eta)
}

fn factor_grad_norm(g: &Mat, point: &FactorPoint) -> f64 {
    match point {
        FactorPoint::Symmetric { z } => fro_norm(&(g * z * 2.0)),
        FactorPoint::Asymmetric { u, v } => {
            let gu = g * v;
            let gv = g.transpose() * u;
            (gu.norm_squared() + gv.norm_squared()).sqrt()
        }
    }
}

/// One update from a precomputed gradient at the current product; shares
/// the evaluation with the per-step instrumentation.
fn apply_step(g: &Mat, point: &FactorPoint, eta: f64) -> Result<FactorPoint> {
    match point {
        FactorPoint::Symmetric { z } => {
            let n = z.nrows() as f64;
            let next = z - g * z * (2.0 * eta / n);
            ensure_finite(&next).map_err(|_| Error::NonFiniteUpdate { iter: 0 })?;
            Ok(FactorPoint::Symmetric { z: next })
        }
        FactorPoint::Asymmetric { u, v } => {
            let n = u.nrows() as f64;
            let q = v.nrows() as f64;
            let u_next = u - g * v * (eta / q);
            let v_next = v - g.transpose() * u * (eta / n);
            ensure_finite(&u_next).map_err(|_| Error::NonFiniteUpdate { iter: 0 })?;
            ensure_finite(&v_next).map_err(|_| Error::NonFiniteUpdate { iter: 0 })?;
            Ok(FactorPoint::Asymmetric {
                u: u_next,
                v: v_next,
            })
        }
    }
}

/// Runs gradient descent for `cfg.max_iter` steps, recording distances and
/// the benignity diagnostics at every step when a truth is supplied.
///
/// A per-step GL(r) alignment failure is recorded (distance fields absent)
/// without aborting the run; a non-finite update aborts with its iteration
/// index.
pub fn run(
    loss: &dyn LossModel,
    init: FactorPoint,
    truth: Option<&GroundTruth>,
    cfg: &DescentConfig,
) -> Result<Trajectory> {
    let mut point = init;
    let mut records = Vec::with_capacity(cfg.max_iter + 1);
    // Penalty scale for the benignity diagnostic: the loss's declared lower
    // curvature bound when it has one, else unit.
    let pen_alpha = loss.meta().declared_alpha.unwrap_or(1.0);
    let mut warm: Option<Mat> = None;

    for iter in 0..=cfg.max_iter {
        let x = point.product();
        let g = loss.gradient(&x);
        let grad_norm = factor_grad_norm(&g, &point);
        let mut record = StepRecord {
            iter,
            loss_value: loss.value(&x),
            dist2: None,
            dist_inf: None,
            balance_residual: None,
            penalty_grad_norm: None,
            grad_norm,
        };
        if let FactorPoint::Asymmetric { u, v } = &point {
            record.balance_residual = Some(balance_residual(u, v));
        }
        if let Some(truth) = truth {
            if cfg.record_alignment {
                let cfg_pen = PenaltyConfig::new(pen_alpha, truth)?;
                match &point {
                    FactorPoint::Symmetric { z } => {
                        let z_star = truth.point().as_symmetric().ok_or_else(|| {
                            Error::InvalidArgument("truth mode differs from iterate mode".into())
                        })?;
                        let res = procrustes_align(z, z_star)?;
                        record.dist2 = Some(res.dist2);
                        record.dist_inf = Some(res.dist_inf);
                        let aligned = z * &res.transform;
                        record.penalty_grad_norm =
                            Some(fro_norm(&penalty_sym_grad(&aligned, &cfg_pen)?));
                    }
                    FactorPoint::Asymmetric { u, v } => {
                        let start = match &warm {
                            Some(g) => g.clone(),
                            None => stacked_rotation_warm_start(&point, truth.point())?,
                        };
                        match gl_align_from(&point, truth.point(), cfg.align_tol, 200, &start) {
                            Ok(res) => {
                                record.dist2 = Some(res.dist2);
                                record.dist_inf = Some(res.dist_inf);
                                let gi = res.transform.clone().try_inverse().ok_or_else(|| {
                                    Error::InvalidArgument("singular alignment transform".into())
                                })?;
                                let aligned = FactorPoint::Asymmetric {
                                    u: u * &res.transform,
                                    v: v * gi.transpose(),
                                };
                                let (pu, pv) = penalty_asym_grad(&aligned, &cfg_pen)?;
                                record.penalty_grad_norm =
                                    Some((pu.norm_squared() + pv.norm_squared()).sqrt());
                                warm = Some(res.transform);
                            }
                            Err(Error::AlignmentDiverged { .. }) => {
                                // Leave the distance fields absent; reset the
                                // warm start so the next step tries fresh.
                                warm = None;
                            }
                            Err(e) => return Err(e),
                        }
                    }
                }
            }
        }
        records.push(record);

        if let Some(threshold) = cfg.stop_grad_norm {
            if grad_norm <= threshold {
                break;
            }
        }
        if iter < cfg.max_iter {
            point = apply_step(&g, &point, cfg.eta).map_err(|e| match e {
                Error::NonFiniteUpdate { .. } => Error::NonFiniteUpdate { iter: iter + 1 },
                other => other,
            })?;
        }
    }

    Ok(Trajectory {
        records,
        final_point: point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::balanced_factorization;
    use crate::loss::QuadraticLoss;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gauss(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Mat {
        Mat::from_fn(n, m, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn default_step_theorem_values() {
        let (eta, rho) = default_step(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(eta, 0.05);
        assert_abs_diff_eq!(rho, 0.9875);

        // Sensing constants: alpha = 1 - d0, beta = 1 + d0 gives
        // rho = 1 - (1 - d0) / (80 kappa).
        let d0 = 0.3;
        let kappa = 2.0;
        let (_, rho) = default_step(1.0 - d0, 1.0 + d0, kappa, 0.7).unwrap();
        assert_abs_diff_eq!(rho, 1.0 - (1.0 - d0) / (80.0 * kappa), epsilon = 1e-15);

        // Doubling sigma_min halves eta and leaves rho unchanged.
        let (eta1, rho1) = default_step(1.0, 2.0, 3.0, 0.5).unwrap();
        let (eta2, rho2) = default_step(1.0, 2.0, 3.0, 1.0).unwrap();
        assert_abs_diff_eq!(eta1, 2.0 * eta2);
        assert_abs_diff_eq!(rho1, rho2);

        assert!(matches!(
            default_step(2.0, 1.0, 1.0, 1.0),
            Err(Error::InvalidCurvature { .. })
        ));
    }

    #[test]
    fn step_sym_fixed_point_at_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z_star = gauss(&mut rng, 5, 2);
        let loss = QuadraticLoss::new(&z_star * z_star.transpose(), Mat::zeros(5, 5)).unwrap();
        let next = step_sym(&loss, &z_star, 0.05).unwrap();
        assert!((next - &z_star).norm() < 1e-14);
    }

    #[test]
    fn step_sym_matches_scalar_recurrence() {
        // n = r = 1: z' = z - 2 eta (z^2 - z*^2) z.
        let z_star = 1.3f64;
        let loss =
            QuadraticLoss::new(Mat::from_row_slice(1, 1, &[z_star * z_star]), Mat::zeros(1, 1))
                .unwrap();
        let eta = 0.04;
        let mut z = 0.7f64;
        let mut zm = Mat::from_row_slice(1, 1, &[z]);
        for _ in 0..25 {
            z = z - 2.0 * eta * (z * z - z_star * z_star) * z;
            zm = step_sym(&loss, &zm, eta).unwrap();
            assert_abs_diff_eq!(zm[(0, 0)], z, epsilon = 1e-13);
        }
    }

    #[test]
    fn step_asym_matches_scalar_recurrence() {
        // n = q = r = 1: u' = u - eta (uv - x*) v, v' = v - eta (uv - x*) u.
        let x_star = 0.9f64;
        let loss =
            QuadraticLoss::new(Mat::from_row_slice(1, 1, &[x_star]), Mat::zeros(1, 1)).unwrap();
        let eta = 0.05;
        let (mut u, mut v) = (1.2f64, 0.5f64);
        let mut pair = FactorPoint::asymmetric(
            Mat::from_row_slice(1, 1, &[u]),
            Mat::from_row_slice(1, 1, &[v]),
        )
        .unwrap();
        for _ in 0..25 {
            let g = u * v - x_star;
            let (nu, nv) = (u - eta * g * v, v - eta * g * u);
            u = nu;
            v = nv;
            pair = step_asym(&loss, &pair, eta).unwrap();
            let (um, vm) = pair.as_asymmetric().unwrap();
            assert_abs_diff_eq!(um[(0, 0)], u, epsilon = 1e-13);
            assert_abs_diff_eq!(vm[(0, 0)], v, epsilon = 1e-13);
        }
    }

    #[test]
    fn one_step_decreases_loss_for_small_eta() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..10 {
            let z_star = gauss(&mut rng, 6, 2);
            let loss =
                QuadraticLoss::new(&z_star * z_star.transpose(), Mat::zeros(6, 6)).unwrap();
            let z = &z_star + gauss(&mut rng, 6, 2) * 0.3;
            let before = loss.value(&(&z * z.transpose()));
            let next = step_sym(&loss, &z, 1e-3).unwrap();
            let after = loss.value(&(&next * next.transpose()));
            assert!(after < before, "trial {trial}: {after} >= {before}");
        }
    }

    #[test]
    fn non_finite_update_detected() {
        let z_star = Mat::from_row_slice(1, 1, &[1.0]);
        let loss = QuadraticLoss::new(z_star.clone(), Mat::zeros(1, 1)).unwrap();
        let init = FactorPoint::symmetric(Mat::from_row_slice(1, 1, &[10.0])).unwrap();
        let cfg = DescentConfig {
            eta: 10.0,
            max_iter: 100,
            seed: 0,
            record_alignment: false,
            align_tol: 1e-9,
            stop_grad_norm: None,
        };
        match run(&loss, init, None, &cfg) {
            Err(Error::NonFiniteUpdate { iter }) => assert!(iter > 0),
            other => panic!("expected NonFiniteUpdate, got {other:?}"),
        }
    }

    #[test]
    fn run_from_truth_stays_at_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = gauss(&mut rng, 8, 2);
        let q = a.qr().q();
        let z_star = q * (8.0f64).sqrt();
        let truth =
            crate::matrix::GroundTruth::new(FactorPoint::symmetric(z_star.clone()).unwrap())
                .unwrap();
        let loss = QuadraticLoss::new(truth.x_star(), Mat::zeros(8, 8)).unwrap();
        let cfg = DescentConfig {
            eta: 0.05,
            max_iter: 20,
            seed: 0,
            record_alignment: true,
            align_tol: 1e-9,
            stop_grad_norm: None,
        };
        let traj = run(&loss, truth.point().clone(), Some(&truth), &cfg).unwrap();
        assert_eq!(traj.records.len(), 21);
        for rec in &traj.records {
            assert!(rec.dist2.unwrap() < 1e-10);
        }
    }

    #[test]
    fn gauge_equivariance_symmetric() {
        // Starting from Z0 Q gives identical metric sequences.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = gauss(&mut rng, 8, 2);
        let z_star = a.qr().q() * (8.0f64).sqrt();
        let truth =
            crate::matrix::GroundTruth::new(FactorPoint::symmetric(z_star.clone()).unwrap())
                .unwrap();
        let loss = QuadraticLoss::new(truth.x_star(), Mat::zeros(8, 8)).unwrap();
        let z0 = &z_star + gauss(&mut rng, 8, 2) * 0.1;
        let q = gauss(&mut rng, 2, 2).qr().q();
        let cfg = DescentConfig {
            eta: 0.05,
            max_iter: 30,
            seed: 0,
            record_alignment: true,
            align_tol: 1e-9,
            stop_grad_norm: None,
        };
        let t1 = run(
            &loss,
            FactorPoint::symmetric(z0.clone()).unwrap(),
            Some(&truth),
            &cfg,
        )
        .unwrap();
        let t2 = run(
            &loss,
            FactorPoint::symmetric(&z0 * q).unwrap(),
            Some(&truth),
            &cfg,
        )
        .unwrap();
        for (a, b) in t1.records.iter().zip(&t2.records) {
            assert_abs_diff_eq!(a.loss_value, b.loss_value, epsilon = 1e-9);
            assert_abs_diff_eq!(a.dist2.unwrap(), b.dist2.unwrap(), epsilon = 1e-9);
            assert_abs_diff_eq!(a.dist_inf.unwrap(), b.dist_inf.unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn gauge_equivariance_asymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gauss(&mut rng, 7, 6);
        let truth =
            crate::matrix::GroundTruth::new(balanced_factorization(&x, 2).unwrap()).unwrap();
        let loss = QuadraticLoss::new(truth.x_star(), Mat::zeros(7, 6)).unwrap();
        let (u_star, v_star) = truth.point().as_asymmetric().unwrap();
        let u0 = u_star + gauss(&mut rng, 7, 2) * 0.05;
        let v0 = v_star + gauss(&mut rng, 6, 2) * 0.05;
        let r0 = gauss(&mut rng, 2, 2).qr().q();
        let tau2 = truth.tau_star().unwrap().powi(2);
        let cfg = DescentConfig {
            eta: 0.05,
            max_iter: 30,
            seed: 0,
            record_alignment: true,
            align_tol: 1e-9 * tau2,
            stop_grad_norm: None,
        };
        let t1 = run(
            &loss,
            FactorPoint::asymmetric(u0.clone(), v0.clone()).unwrap(),
            Some(&truth),
            &cfg,
        )
        .unwrap();
        let t2 = run(
            &loss,
            FactorPoint::asymmetric(&u0 * &r0, &v0 * &r0).unwrap(),
            Some(&truth),
            &cfg,
        )
        .unwrap();
        for (a, b) in t1.records.iter().zip(&t2.records) {
            assert_abs_diff_eq!(a.loss_value, b.loss_value, epsilon = 1e-9);
            assert_abs_diff_eq!(a.dist2.unwrap(), b.dist2.unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn early_stop_on_gradient_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z_star = gauss(&mut rng, 5, 2);
        let loss = QuadraticLoss::new(&z_star * z_star.transpose(), Mat::zeros(5, 5)).unwrap();
        let z0 = &z_star + gauss(&mut rng, 5, 2) * 0.05;
        let cfg = DescentConfig {
            eta: 0.02,
            max_iter: 10_000,
            seed: 0,
            record_alignment: false,
            align_tol: 1e-9,
            stop_grad_norm: Some(1e-8),
        };
        let traj = run(&loss, FactorPoint::symmetric(z0).unwrap(), None, &cfg).unwrap();
        assert!(traj.records.len() < 10_001);
        assert!(traj.records.last().unwrap().grad_norm <= 1e-8);
    }
}
