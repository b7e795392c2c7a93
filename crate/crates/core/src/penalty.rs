//! The benign penalties and the augmented objectives they induce.
//!
//! Both penalties square a residual that vanishes exactly at optimally
//! aligned points, so their gradients are zero along aligned iterates while
//! still convexifying the landscape:
//!
//! ```text
//! symmetric:   p(Z)    = (alpha n^2 / 4) ||n^-1 {(Z*)^T Z - Z^T Z*}||_F^2
//! asymmetric:  p(U, V) = (alpha n q / 4) ||M*(U, V)||_F^2
//! ```
//!
//! with closed-form gradients (the symmetric one exploits antisymmetry of
//! the residual):
//!
//! ```text
//! grad_Z p = alpha n Z* M,         M = n^-1 {(Z*)^T Z - Z^T Z*}
//! grad_U p = (alpha q / 2) {U M^T + (U - U*) M}
//! grad_V p = -(alpha n / 2) {(V - V*) M^T + V M}
//! ```

use crate::align::m_star;
use crate::error::{Error, Result};
use crate::loss::LossModel;
use crate::matrix::{FactorPoint, GroundTruth, Mat};

/// Penalty curvature scale and the truth it is anchored to.
#[derive(Clone, Copy)]
pub struct PenaltyConfig<'a> {
    pub alpha: f64,
    pub reference: &'a GroundTruth,
}

impl<'a> PenaltyConfig<'a> {
    pub fn new(alpha: f64, reference: &'a GroundTruth) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "penalty scale must be positive, got {alpha}"
            )));
        }
        Ok(PenaltyConfig { alpha, reference })
    }
}

fn sym_reference<'a>(cfg: &PenaltyConfig<'a>) -> Result<&'a Mat> {
    cfg.reference
        .point()
        .as_symmetric()
        .ok_or_else(|| Error::InvalidArgument("penalty reference must be symmetric".into()))
}

/// The antisymmetric residual M = n^-1 {(Z*)^T Z - Z^T Z*}.
fn sym_residual(z: &Mat, z_star: &Mat) -> Mat {
    let n = z.nrows() as f64;
    let cross = z_star.transpose() * z;
    (&cross - cross.transpose()) / n
}

pub fn penalty_sym(z: &Mat, cfg: &PenaltyConfig) -> Result<f64> {
    let z_star = sym_reference(cfg)?;
    if z.shape() != z_star.shape() {
        return Err(Error::ShapeMismatch("penalty_sym operand".into()));
    }
    let n = z.nrows() as f64;
    let m = sym_residual(z, z_star);
    Ok(cfg.alpha * n * n / 4.0 * m.norm_squared())
}

pub fn penalty_sym_grad(z: &Mat, cfg: &PenaltyConfig) -> Result<Mat> {
    let z_star = sym_reference(cfg)?;
    if z.shape() != z_star.shape() {
        return Err(Error::ShapeMismatch("penalty_sym_grad operand".into()));
    }
    let n = z.nrows() as f64;
    let m = sym_residual(z, z_star);
    Ok(z_star * m * (cfg.alpha * n))
}

fn asym_parts<'a>(
    pair: &'a FactorPoint,
    cfg: &PenaltyConfig<'a>,
) -> Result<(&'a Mat, &'a Mat, &'a Mat, &'a Mat)> {
    let (u, v) = pair
        .as_asymmetric()
        .ok_or_else(|| Error::InvalidArgument("penalty_asym requires an asymmetric pair".into()))?;
    let (u_star, v_star) = cfg
        .reference
        .point()
        .as_asymmetric()
        .ok_or_else(|| Error::InvalidArgument("penalty reference must be asymmetric".into()))?;
    if u.shape() != u_star.shape() || v.shape() != v_star.shape() {
        return Err(Error::ShapeMismatch("penalty_asym operand".into()));
    }
    Ok((u, v, u_star, v_star))
}

pub fn penalty_asym(pair: &FactorPoint, cfg: &PenaltyConfig) -> Result<f64> {
    let (u, v, _, _) = asym_parts(pair, cfg)?;
    let n = u.nrows() as f64;
    let q = v.nrows() as f64;
    let m = m_star(pair, cfg.reference.point())?;
    Ok(cfg.alpha * n * q / 4.0 * m.norm_squared())
}

pub fn penalty_asym_grad(pair: &FactorPoint, cfg: &PenaltyConfig) -> Result<(Mat, Mat)> {
    let (u, v, u_star, v_star) = asym_parts(pair, cfg)?;
    let n = u.nrows() as f64;
    let q = v.nrows() as f64;
    let m = m_star(pair, cfg.reference.point())?;
    let grad_u = (u * m.transpose() + (u - u_star) * &m) * (cfg.alpha * q / 2.0);
    let grad_v = ((v - v_star) * m.transpose() + v * &m) * (-cfg.alpha * n / 2.0);
    Ok((grad_u, grad_v))
}

/// Value and factor-space gradient of the augmented objective
/// h(point) = L(product) + penalty(point).
///
/// The loss part is the chain-rule factor gradient: 2 G(Z) Z for the
/// symmetric model (whose gradients G are symmetric matrices by
/// construction), and (G V, G^T U) for the asymmetric model.
pub fn augmented_value_grad(
    loss: &dyn LossModel,
    point: &FactorPoint,
    cfg: &PenaltyConfig,
) -> Result<(f64, FactorPoint)> {
    let x = point.product();
    if (x.nrows(), x.ncols()) != loss.meta().shape {
        return Err(Error::ShapeMismatch(
            "loss shape differs from the point's product shape".into(),
        ));
    }
    let g = loss.gradient(&x);
    match point {
        FactorPoint::Symmetric { z } => {
            let value = loss.value(&x) + penalty_sym(z, cfg)?;
            let grad = &g * z * 2.0 + penalty_sym_grad(z, cfg)?;
            Ok((value, FactorPoint::Symmetric { z: grad }))
        }
        FactorPoint::Asymmetric { u, v } => {
            let value = loss.value(&x) + penalty_asym(point, cfg)?;
            let (pu, pv) = penalty_asym_grad(point, cfg)?;
            let grad_u = &g * v + pu;
            let grad_v = g.transpose() * u + pv;
            Ok((
                value,
                FactorPoint::Asymmetric {
                    u: grad_u,
                    v: grad_v,
                },
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{balanced_factorization, gl_align, procrustes_align};
    use crate::loss::QuadraticLoss;
    use crate::matrix::fro_norm;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gauss(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Mat {
        Mat::from_fn(n, m, |_, _| rng.sample(StandardNormal))
    }

    fn sym_truth(rng: &mut ChaCha8Rng, n: usize, r: usize) -> GroundTruth {
        let a = gauss(rng, n, r);
        let q = a.qr().q();
        GroundTruth::new(FactorPoint::symmetric(q * (n as f64).sqrt()).unwrap()).unwrap()
    }

    fn asym_truth(rng: &mut ChaCha8Rng, n: usize, q: usize, r: usize) -> GroundTruth {
        let x = gauss(rng, n, q);
        GroundTruth::new(balanced_factorization(&x, r).unwrap()).unwrap()
    }

    #[test]
    fn penalty_sym_zero_at_truth_and_aligned_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = sym_truth(&mut rng, 8, 2);
        let cfg = PenaltyConfig::new(1.0, &truth).unwrap();
        let z_star = truth.point().as_symmetric().unwrap();
        assert_abs_diff_eq!(penalty_sym(z_star, &cfg).unwrap(), 0.0);

        // Any optimally aligned point has zero penalty and zero gradient.
        let z0 = gauss(&mut rng, 8, 2);
        let res = procrustes_align(&z0, z_star).unwrap();
        let aligned = &z0 * &res.transform;
        let p = penalty_sym(&aligned, &cfg).unwrap();
        assert!(p <= 1e-16 * fro_norm(&aligned).powi(4).max(1.0));
        let g = penalty_sym_grad(&aligned, &cfg).unwrap();
        assert!(fro_norm(&g) <= 1e-10 * fro_norm(&aligned));
    }

    #[test]
    fn penalty_sym_direct_two_by_two() {
        // n = 2, r = 2 instance evaluated against the formula by hand.
        let z_star = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let truth = GroundTruth::new(FactorPoint::symmetric(z_star.clone()).unwrap()).unwrap();
        let cfg = PenaltyConfig::new(1.0, &truth).unwrap();
        let z = Mat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        // (Z*)^T Z - Z^T Z* = Z - Z^T = [[0,-2],[2,0]], M = that / 2,
        // p = (1*4/4) * ||M||_F^2 = 2.
        assert_abs_diff_eq!(penalty_sym(&z, &cfg).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn penalty_sym_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = sym_truth(&mut rng, 6, 2);
        let cfg = PenaltyConfig::new(0.7, &truth).unwrap();
        let z = gauss(&mut rng, 6, 2);
        let g = penalty_sym_grad(&z, &cfg).unwrap();
        let h = 1e-6;
        for _ in 0..10 {
            let d = gauss(&mut rng, 6, 2).normalize();
            let fd = (penalty_sym(&(&z + &d * h), &cfg).unwrap()
                - penalty_sym(&(&z - &d * h), &cfg).unwrap())
                / (2.0 * h);
            let an = g.dot(&d);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "fd {fd} vs {an}");
        }
    }

    #[test]
    fn penalty_asym_zero_at_reference_and_hand_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = asym_truth(&mut rng, 6, 5, 2);
        let cfg = PenaltyConfig::new(1.3, &truth).unwrap();
        assert_abs_diff_eq!(penalty_asym(truth.point(), &cfg).unwrap(), 0.0);
        let (gu, gv) = penalty_asym_grad(truth.point(), &cfg).unwrap();
        assert_abs_diff_eq!(fro_norm(&gu), 0.0);
        assert_abs_diff_eq!(fro_norm(&gv), 0.0);

        // n = q = 2, r = 1 hand instance: U = (1,0)^T, V = (0,1)^T as truth
        // (balanced), U' = (2,0)^T, V' = (0,1)^T.
        // M = 2^-1 (U'-U)^T U' - 2^-1 V'^T (V'-V) = (1/2)(1)(2) - 0 = 1.
        // p = alpha*4/4 * 1 = alpha.
        let u_star = Mat::from_row_slice(2, 1, &[1.0, 0.0]);
        let v_star = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
        let t2 = GroundTruth::new(FactorPoint::asymmetric(u_star, v_star).unwrap()).unwrap();
        let cfg2 = PenaltyConfig::new(2.0, &t2).unwrap();
        let pair = FactorPoint::asymmetric(
            Mat::from_row_slice(2, 1, &[2.0, 0.0]),
            Mat::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        assert_abs_diff_eq!(penalty_asym(&pair, &cfg2).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn penalty_asym_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = asym_truth(&mut rng, 5, 4, 2);
        let cfg = PenaltyConfig::new(0.9, &truth).unwrap();
        let u = gauss(&mut rng, 5, 2);
        let v = gauss(&mut rng, 4, 2);
        let pair = FactorPoint::asymmetric(u.clone(), v.clone()).unwrap();
        let (gu, gv) = penalty_asym_grad(&pair, &cfg).unwrap();
        let h = 1e-6;
        for _ in 0..10 {
            let du = gauss(&mut rng, 5, 2);
            let dv = gauss(&mut rng, 4, 2);
            let scale = (du.norm_squared() + dv.norm_squared()).sqrt();
            let du = du / scale;
            let dv = dv / scale;
            let plus = FactorPoint::asymmetric(&u + &du * h, &v + &dv * h).unwrap();
            let minus = FactorPoint::asymmetric(&u - &du * h, &v - &dv * h).unwrap();
            let fd = (penalty_asym(&plus, &cfg).unwrap() - penalty_asym(&minus, &cfg).unwrap())
                / (2.0 * h);
            let an = gu.dot(&du) + gv.dot(&dv);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "fd {fd} vs {an}");
        }
    }

    #[test]
    fn penalty_asym_vanishes_at_gl_aligned_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = asym_truth(&mut rng, 8, 6, 2);
        let (u_star, v_star) = truth.point().as_asymmetric().unwrap();
        let pert = FactorPoint::asymmetric(
            u_star + gauss(&mut rng, 8, 2) * 0.05,
            v_star + gauss(&mut rng, 6, 2) * 0.05,
        )
        .unwrap();
        let tau2 = truth.tau_star().unwrap().powi(2);
        let tol = 1e-9 * tau2;
        let res = gl_align(&pert, truth.point(), tol, 500).unwrap();
        let gi = res.transform.clone().try_inverse().unwrap();
        let (pu, pv) = pert.as_asymmetric().unwrap();
        let aligned = FactorPoint::asymmetric(pu * &res.transform, pv * gi.transpose()).unwrap();

        let alpha = 1.0;
        let cfg = PenaltyConfig::new(alpha, &truth).unwrap();
        let p = penalty_asym(&aligned, &cfg).unwrap();
        let (n, q) = (8.0, 6.0);
        assert!(p <= alpha * n * q / 4.0 * tol * tol * 1.01);

        let (gu, gv) = penalty_asym_grad(&aligned, &cfg).unwrap();
        let factor_scale = [
            fro_norm(pu),
            fro_norm(pv),
            fro_norm(u_star),
            fro_norm(v_star),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        let bound = alpha * n.max(q) * factor_scale * tol;
        assert!(fro_norm(&gu) <= bound, "{} > {}", fro_norm(&gu), bound);
        assert!(fro_norm(&gv) <= bound);
    }

    #[test]
    fn penalty_sym_is_not_gauge_invariant() {
        // The penalty vanishes only at the optimal gauge; some rotation Q
        // must inflate it by a large factor.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = sym_truth(&mut rng, 6, 2);
        let cfg = PenaltyConfig::new(1.0, &truth).unwrap();
        let z_star = truth.point().as_symmetric().unwrap();
        let z = z_star + gauss(&mut rng, 6, 2) * 0.1;
        let res = procrustes_align(&z, z_star).unwrap();
        let aligned = &z * &res.transform;
        let p_aligned = penalty_sym(&aligned, &cfg).unwrap().max(1e-300);
        let mut found = false;
        for _ in 0..50 {
            let q = gauss(&mut rng, 2, 2).qr().q();
            let p_rot = penalty_sym(&(&aligned * q), &cfg).unwrap();
            if p_rot > 10.0 * p_aligned {
                found = true;
                break;
            }
        }
        assert!(found, "no rotation inflated the penalty by 10x");
    }

    #[test]
    fn augmented_gradient_matches_finite_differences_sym() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = sym_truth(&mut rng, 5, 2);
        let x_star = truth.x_star();
        // Symmetric-model losses carry symmetric gradients; symmetrize E.
        let e0 = gauss(&mut rng, 5, 5);
        let e = (&e0 + e0.transpose()) / 2.0f64.sqrt();
        let loss = QuadraticLoss::new(x_star, e).unwrap();
        let cfg = PenaltyConfig::new(1.0, &truth).unwrap();
        let z = gauss(&mut rng, 5, 2);
        let point = FactorPoint::symmetric(z.clone()).unwrap();
        let (_, grad) = augmented_value_grad(&loss, &point, &cfg).unwrap();
        let g = grad.as_symmetric().unwrap();
        let h = 1e-6;
        for _ in 0..8 {
            let d = gauss(&mut rng, 5, 2).normalize();
            let vp = augmented_value_grad(
                &loss,
                &FactorPoint::symmetric(&z + &d * h).unwrap(),
                &cfg,
            )
            .unwrap()
            .0;
            let vm = augmented_value_grad(
                &loss,
                &FactorPoint::symmetric(&z - &d * h).unwrap(),
                &cfg,
            )
            .unwrap()
            .0;
            let fd = (vp - vm) / (2.0 * h);
            let an = g.dot(&d);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "fd {fd} vs {an}");
        }
    }

    #[test]
    fn augmented_gradient_matches_finite_differences_asym() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = asym_truth(&mut rng, 5, 4, 2);
        let loss = QuadraticLoss::new(truth.x_star(), gauss(&mut rng, 5, 4)).unwrap();
        let cfg = PenaltyConfig::new(1.0, &truth).unwrap();
        let u = gauss(&mut rng, 5, 2);
        let v = gauss(&mut rng, 4, 2);
        let point = FactorPoint::asymmetric(u.clone(), v.clone()).unwrap();
        let (_, grad) = augmented_value_grad(&loss, &point, &cfg).unwrap();
        let (gu, gv) = grad.as_asymmetric().unwrap();
        let h = 1e-6;
        for _ in 0..8 {
            let du = gauss(&mut rng, 5, 2);
            let dv = gauss(&mut rng, 4, 2);
            let scale = (du.norm_squared() + dv.norm_squared()).sqrt();
            let du = du / scale;
            let dv = dv / scale;
            let vp = augmented_value_grad(
                &loss,
                &FactorPoint::asymmetric(&u + &du * h, &v + &dv * h).unwrap(),
                &cfg,
            )
            .unwrap()
            .0;
            let vm = augmented_value_grad(
                &loss,
                &FactorPoint::asymmetric(&u - &du * h, &v - &dv * h).unwrap(),
                &cfg,
            )
            .unwrap()
            .0;
            let fd = (vp - vm) / (2.0 * h);
            let an = gu.dot(&du) + gv.dot(&dv);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "fd {fd} vs {an}");
        }
    }

    #[test]
    fn augmented_stationary_at_truth_with_noiseless_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = sym_truth(&mut rng, 6, 2);
        let loss = QuadraticLoss::new(truth.x_star(), Mat::zeros(6, 6)).unwrap();
        let cfg = PenaltyConfig::new(1.0, &truth).unwrap();
        let (value, grad) = augmented_value_grad(&loss, truth.point(), &cfg).unwrap();
        assert!(value.abs() < 1e-20);
        assert!(fro_norm(grad.as_symmetric().unwrap()) < 1e-12);
    }
}
