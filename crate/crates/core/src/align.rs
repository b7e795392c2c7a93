//! Optimal alignment of factor points: the orthogonal Procrustes problem for
//! symmetric factors, and the invertible GL(r) alignment for asymmetric
//! pairs, together with the error metrics and the balance residual M*.
//!
//! The GL(r) problem minimizes
//!
//! ```text
//! Phi(G) = n^-1 ||U G - U*||_F^2 + q^-1 ||V G^-T - V*||_F^2
//! ```
//!
//! over invertible G. Its first-order condition is exactly M*(UG, VG^-T) = 0,
//! where M* is the balance residual below, so the solver certifies
//! convergence by driving ||M*||_F under the caller's tolerance.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{fro_norm, two_to_inf, FactorPoint, Mat};

/// Outcome of an alignment solve: the transform, the aligned error metrics,
/// and the first-order certificate.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    /// r x r transform: orthogonal R* (symmetric) or invertible G (asymmetric).
    pub transform: Mat,
    /// Frobenius error after alignment (weighted for asymmetric pairs).
    pub dist2: f64,
    /// Largest aligned row error across factors.
    pub dist_inf: f64,
    /// ||M*||_F for asymmetric; Procrustes asymmetry defect for symmetric.
    pub residual: f64,
    /// Whether the first-order certificate held at return.
    pub converged: bool,
}

/// Solves min over orthogonal R of ||Z R - Z_ref||_F via the SVD of
/// Z^T Z_ref, and reports the aligned distances.
pub fn procrustes_align(z: &Mat, z_ref: &Mat) -> Result<AlignmentResult> {
    if z.shape() != z_ref.shape() {
        return Err(Error::ShapeMismatch(format!(
            "procrustes operands {}x{} vs {}x{}",
            z.nrows(),
            z.ncols(),
            z_ref.nrows(),
            z_ref.ncols()
        )));
    }
    let m = z.transpose() * z_ref;
    let svd = m.svd(true, true);
    let u = svd.u.expect("SVD with u requested");
    let v_t = svd.v_t.expect("SVD with v_t requested");
    let transform = u * v_t;

    let aligned = z * &transform;
    let diff = &aligned - z_ref;
    let dist2 = fro_norm(&diff);
    let dist_inf = two_to_inf(&diff);
    // Optimality certificate: Z_ref^T (Z R*) is symmetric (and PSD).
    let cert = z_ref.transpose() * aligned;
    let residual = fro_norm(&(&cert - cert.transpose()));
    Ok(AlignmentResult {
        transform,
        dist2,
        dist_inf,
        residual,
        converged: true,
    })
}

/// The balance residual M*(U, V) = n^-1 (U - U*)^T U - q^-1 V^T (V - V*),
/// measured against the reference pair. Zero exactly at optimal alignment.
pub fn m_star(pair: &FactorPoint, reference: &FactorPoint) -> Result<Mat> {
    let (u, v) = pair
        .as_asymmetric()
        .ok_or_else(|| Error::InvalidArgument("m_star requires an asymmetric pair".into()))?;
    let (u_ref, v_ref) = reference
        .as_asymmetric()
        .ok_or_else(|| Error::InvalidArgument("m_star requires an asymmetric reference".into()))?;
    if u.shape() != u_ref.shape() || v.shape() != v_ref.shape() {
        return Err(Error::ShapeMismatch("m_star operands".into()));
    }
    let n = u.nrows() as f64;
    let q = v.nrows() as f64;
    Ok((u - u_ref).transpose() * u / n - v.transpose() * (v - v_ref) / q)
}

/// Weighted objective Phi(G); returns None when G is not invertible.
fn gl_objective(u: &Mat, v: &Mat, u_ref: &Mat, v_ref: &Mat, g: &Mat) -> Option<(f64, Mat)> {
    let g_inv = g.clone().try_inverse()?;
    let n = u.nrows() as f64;
    let q = v.nrows() as f64;
    let du = u * g - u_ref;
    let w = v * g_inv.transpose();
    let dv = &w - v_ref;
    let value = fro_norm(&du).powi(2) / n + fro_norm(&dv).powi(2) / q;
    // grad Phi = (2/n) U^T (UG - U*) - (2/q) G^-T (W - V*)^T W
    let grad = u.transpose() * du * (2.0 / n) - g_inv.transpose() * dv.transpose() * w * (2.0 / q);
    Some((value, grad))
}

fn vec_of(m: &Mat) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(m.as_slice())
}

fn mat_of(v: &nalgebra::DVector<f64>, r: usize) -> Mat {
    Mat::from_column_slice(r, r, v.as_slice())
}

/// GL(r) alignment of `pair` against `reference`, warm-started from the
/// Procrustes rotation of the stacked scale-weighted factors.
///
/// Both sign branches of the warm start are tried (the objective has a
/// mirror basin at -G); the converged solve with the smaller error wins.
pub fn gl_align(
    pair: &FactorPoint,
    reference: &FactorPoint,
    tol: f64,
    max_iter: usize,
) -> Result<AlignmentResult> {
    let warm = stacked_rotation_warm_start(pair, reference)?;
    let mut starts = vec![warm.clone(), -&warm];
    if pair.rank() == 1 {
        // The scalar objective can be multimodal within a sign branch; a
        // coarse log-scale scan locates the global basin cheaply.
        let (u, v) = pair.as_asymmetric().expect("checked by warm start");
        let (u_ref, v_ref) = reference.as_asymmetric().expect("checked by warm start");
        let mut best: Option<(f64, f64)> = None;
        for sign in [1.0f64, -1.0] {
            for k in -60..=60 {
                let g = sign * 10f64.powf(k as f64 / 15.0);
                let gm = Mat::from_row_slice(1, 1, &[g]);
                if let Some((val, _)) = gl_objective(u, v, u_ref, v_ref, &gm) {
                    if best.map_or(true, |(b, _)| val < b) {
                        best = Some((val, g));
                    }
                }
            }
        }
        if let Some((_, g)) = best {
            starts.push(Mat::from_row_slice(1, 1, &[g]));
        }
    }
    let mut best: Option<AlignmentResult> = None;
    let mut last_err = None;
    for start in &starts {
        match gl_align_from(pair, reference, tol, max_iter, start) {
            Ok(res) => {
                if best.as_ref().map_or(true, |b| res.dist2 < b.dist2) {
                    best = Some(res);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one start attempted"))
}

/// The default warm start: align (U/sqrt(n); V/sqrt(q)) to the reference
/// stack by an orthogonal Procrustes rotation. Near-balanced pairs sit close
/// to a rotation, so this lands inside the solver's basin.
pub fn stacked_rotation_warm_start(
    pair: &FactorPoint,
    reference: &FactorPoint,
) -> Result<Mat> {
    let (u, v) = pair
        .as_asymmetric()
        .ok_or_else(|| Error::InvalidArgument("gl_align requires an asymmetric pair".into()))?;
    let (u_ref, v_ref) = reference.as_asymmetric().ok_or_else(|| {
        Error::InvalidArgument("gl_align requires an asymmetric reference".into())
    })?;
    let (n, r) = u.shape();
    let q = v.nrows();
    let mut stack = Mat::zeros(n + q, r);
    let mut stack_ref = Mat::zeros(n + q, r);
    let sn = (n as f64).sqrt();
    let sq = (q as f64).sqrt();
    stack.view_mut((0, 0), (n, r)).copy_from(&(u / sn));
    stack.view_mut((n, 0), (q, r)).copy_from(&(v / sq));
    stack_ref.view_mut((0, 0), (n, r)).copy_from(&(u_ref / sn));
    stack_ref.view_mut((n, 0), (q, r)).copy_from(&(v_ref / sq));
    Ok(procrustes_align(&stack, &stack_ref)?.transform)
}

/// GL(r) alignment from an explicit starting transform (used by trajectory
/// recording to warm-start from the previous step's alignment).
pub fn gl_align_from(
    pair: &FactorPoint,
    reference: &FactorPoint,
    tol: f64,
    max_iter: usize,
    warm: &Mat,
) -> Result<AlignmentResult> {
    let (u, v) = pair
        .as_asymmetric()
        .ok_or_else(|| Error::InvalidArgument("gl_align requires an asymmetric pair".into()))?;
    let (u_ref, v_ref) = reference.as_asymmetric().ok_or_else(|| {
        Error::InvalidArgument("gl_align requires an asymmetric reference".into())
    })?;
    if u.shape() != u_ref.shape() || v.shape() != v_ref.shape() {
        return Err(Error::ShapeMismatch("gl_align operands".into()));
    }
    let r = u.ncols();
    let dim = r * r;

    let mut g = warm.clone();
    let (mut value, mut grad) = gl_objective(u, v, u_ref, v_ref, &g)
        .ok_or_else(|| Error::InvalidArgument("gl_align warm start is singular".into()))?;
    let mut x = vec_of(&g);
    let mut grad_v = vec_of(&grad);
    let mut h_inv = DMatrix::<f64>::identity(dim, dim);
    let mut last_step_norm = f64::INFINITY;

    let certificate = |g: &Mat| -> Result<f64> {
        let gi = g
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("gl_align produced a singular transform".into()))?;
        let aligned = FactorPoint::Asymmetric {
            u: u * g,
            v: v * gi.transpose(),
        };
        Ok(fro_norm(&m_star(&aligned, reference)?))
    };

    let mut iters = 0;
    for it in 0..max_iter {
        iters = it + 1;
        let residual = certificate(&g)?;
        if residual <= tol && last_step_norm <= 1e-12 {
            break;
        }
        // Value-based line searches stall once objective differences fall
        // under rounding noise; hand off to the Newton polish below.
        if grad_v.norm() <= 1e-7 * (1.0 + value) {
            break;
        }
        // BFGS direction with Armijo backtracking.
        let dir = -&h_inv * &grad_v;
        let slope = grad_v.dot(&dir);
        let dir = if slope < 0.0 { dir } else { -grad_v.clone() };
        let slope = grad_v.dot(&dir).min(-f64::MIN_POSITIVE);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let x_new = &x + &dir * t;
            let g_new = mat_of(&x_new, r);
            if let Some((v_new, gr_new)) = gl_objective(u, v, u_ref, v_ref, &g_new) {
                if v_new <= value + 1e-4 * t * slope {
                    accepted = Some((x_new, g_new, v_new, gr_new));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((x_new, g_new, v_new, gr_new)) = accepted else {
            // Line search stalled; the current point is as good as it gets.
            let residual = certificate(&g)?;
            if residual <= tol {
                break;
            }
            return Err(Error::AlignmentDiverged {
                residual,
                tol,
                iters,
            });
        };
        let s = &x_new - &x;
        let y = vec_of(&gr_new) - &grad_v;
        last_step_norm = s.norm();
        let sy = s.dot(&y);
        if sy > 1e-300 {
            // Standard BFGS inverse-Hessian update.
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            h_inv = &h_inv - (&hy * s.transpose() + &s * hy.transpose()) * rho
                + &s * s.transpose() * (rho * rho * yhy + rho);
        }
        x = x_new;
        g = g_new;
        value = v_new;
        grad = gr_new;
        grad_v = vec_of(&grad);
    }

    // Newton polish on the stationarity system grad Phi(G) = 0: quadratic
    // convergence to machine precision, independent of objective rounding.
    let mut best_g = g.clone();
    let mut best_res = certificate(&g)?;
    for _ in 0..30 {
        let Some((_, grad)) = gl_objective(u, v, u_ref, v_ref, &g) else {
            break;
        };
        let gnorm = grad.norm();
        if gnorm == 0.0 {
            break;
        }
        // Finite-difference Jacobian of vec(grad Phi), column by column.
        let h = 1e-7 * (1.0 + fro_norm(&g));
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        let mut ok = true;
        for k in 0..dim {
            let mut gp = g.clone();
            let mut gm = g.clone();
            // vec_of flattens column-major: slot k is entry (k % r, k / r).
            gp[(k % r, k / r)] += h;
            gm[(k % r, k / r)] -= h;
            let (Some((_, grp)), Some((_, grm))) = (
                gl_objective(u, v, u_ref, v_ref, &gp),
                gl_objective(u, v, u_ref, v_ref, &gm),
            ) else {
                ok = false;
                break;
            };
            let col = (vec_of(&grp) - vec_of(&grm)) / (2.0 * h);
            jac.set_column(k, &col);
        }
        if !ok {
            break;
        }
        let Some(delta) = jac.lu().solve(&(-vec_of(&grad))) else {
            break;
        };
        let mut g_next = g.clone();
        for k in 0..dim {
            g_next[(k % r, k / r)] += delta[k];
        }
        if gl_objective(u, v, u_ref, v_ref, &g_next).is_none() {
            break;
        }
        g = g_next;
        let res = certificate(&g)?;
        if res < best_res {
            best_res = res;
            best_g = g.clone();
        }
        if delta.norm() <= 1e-14 * (1.0 + fro_norm(&g)) {
            break;
        }
    }
    let g = best_g;
    let residual = best_res;
    let converged = residual <= tol;
    if !converged {
        return Err(Error::AlignmentDiverged {
            residual,
            tol,
            iters,
        });
    }
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("gl_align produced a singular transform".into()))?;
    let du = u * &g - u_ref;
    let dv = v * g_inv.transpose() - v_ref;
    let n = u.nrows() as f64;
    let q = v.nrows() as f64;
    let dist2 = (fro_norm(&du).powi(2) / n + fro_norm(&dv).powi(2) / q).sqrt();
    let dist_inf = two_to_inf(&du).max(two_to_inf(&dv));
    Ok(AlignmentResult {
        transform: g,
        dist2,
        dist_inf,
        residual,
        converged,
    })
}

/// Default first-order tolerance for the GL(r) alignment, scaled by the
/// squared weighted Frobenius scale of the reference.
pub fn default_gl_tol(tau_star: f64) -> f64 {
    1e-9 * tau_star * tau_star
}

/// Splits the best rank-r approximation of X into a balanced pair:
/// U = sqrt(n) L Lambda^(1/2), V = sqrt(q) R Lambda^(1/2) with
/// Lambda = Sigma_r / sqrt(n q), so n^-1 U^T U = q^-1 V^T V exactly.
pub fn balanced_factorization(x: &Mat, r: usize) -> Result<FactorPoint> {
    let (n, q) = (x.nrows(), x.ncols());
    if r == 0 || r > n.min(q) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} out of range for a {n}x{q} matrix"
        )));
    }
    let svd = x.clone().svd(true, true);
    let u_full = svd.u.expect("SVD with u requested");
    let v_t = svd.v_t.expect("SVD with v_t requested");
    let sv = &svd.singular_values;

    let sigma_1 = sv[0];
    let sigma_r = sv[r - 1];
    let threshold = crate::matrix::RANK_TOL * sigma_1;
    if sigma_r < threshold || sigma_r == 0.0 {
        return Err(Error::DegenerateRank {
            rank: r,
            sigma_r,
            threshold,
        });
    }

    let nq_root = ((n as f64) * (q as f64)).sqrt();
    let mut u = Mat::zeros(n, r);
    let mut v = Mat::zeros(q, r);
    for k in 0..r {
        let lambda_sqrt = (sv[k] / nq_root).sqrt();
        let cu = (n as f64).sqrt() * lambda_sqrt;
        let cv = (q as f64).sqrt() * lambda_sqrt;
        for i in 0..n {
            u[(i, k)] = cu * u_full[(i, k)];
        }
        for j in 0..q {
            v[(j, k)] = cv * v_t[(k, j)];
        }
    }
    FactorPoint::asymmetric(u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{balance_residual, op_norm};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gauss(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Mat {
        Mat::from_fn(n, m, |_, _| rng.sample(StandardNormal))
    }

    fn random_rotation(rng: &mut ChaCha8Rng, r: usize) -> Mat {
        let a = gauss(rng, r, r);
        let qr = a.qr();
        qr.q()
    }

    #[test]
    fn procrustes_identity_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = gauss(&mut rng, 5, 2);
        let res = procrustes_align(&z, &z).unwrap();
        assert!(res.dist2 < 1e-12);
        assert_abs_diff_eq!(
            fro_norm(&(&res.transform - Mat::identity(2, 2))),
            0.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn procrustes_gauge_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z_ref = gauss(&mut rng, 6, 3);
        let q = random_rotation(&mut rng, 3);
        let z = &z_ref * &q;
        let res = procrustes_align(&z, &z_ref).unwrap();
        assert!(res.dist2 < 1e-10);
        assert_abs_diff_eq!(
            fro_norm(&(&res.transform - q.transpose())),
            0.0,
            epsilon = 1e-8
        );
    }

    #[test]
    fn procrustes_transform_is_orthogonal_and_cert_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let z = gauss(&mut rng, 7, 2);
            let z_ref = gauss(&mut rng, 7, 2);
            let res = procrustes_align(&z, &z_ref).unwrap();
            let rtr = res.transform.transpose() * &res.transform;
            assert!(fro_norm(&(rtr - Mat::identity(2, 2))) <= 1e-10);
            // Certificate: Z_ref^T Z R* symmetric PSD.
            let cert = z_ref.transpose() * z * &res.transform;
            assert!(fro_norm(&(&cert - cert.transpose())) <= 1e-8);
            let eig = nalgebra::SymmetricEigen::new(
                (&cert + cert.transpose()) * 0.5,
            );
            assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-8));
        }
    }

    /// r = 1 brute force: the orthogonal group is {-1, +1}.
    #[test]
    fn procrustes_rank_one_matches_sign_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let z = gauss(&mut rng, 4, 1);
            let z_ref = gauss(&mut rng, 4, 1);
            let res = procrustes_align(&z, &z_ref).unwrap();
            let best = [-1.0f64, 1.0]
                .iter()
                .map(|&s| fro_norm(&(&z * s - &z_ref)))
                .fold(f64::INFINITY, f64::min);
            assert_abs_diff_eq!(res.dist2, best, epsilon = 1e-12);
        }
    }

    #[test]
    fn m_star_zero_at_reference_and_hand_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = gauss(&mut rng, 5, 2);
        let v = gauss(&mut rng, 4, 2);
        let p = FactorPoint::asymmetric(u.clone(), v.clone()).unwrap();
        let m = m_star(&p, &p).unwrap();
        assert!(fro_norm(&m) < 1e-14);

        // U = 2 U*, V = V*, balanced reference with n^-1 U*^T U* = Lambda:
        // M* = n^-1 (U*)^T (2 U*) * ... = 2 Lambda by direct expansion.
        let bal = balanced_factorization(&gauss(&mut rng, 6, 5), 2).unwrap();
        let (u_s, v_s) = bal.as_asymmetric().unwrap();
        let lambda = u_s.transpose() * u_s / 6.0;
        let doubled = FactorPoint::asymmetric(u_s * 2.0, v_s.clone()).unwrap();
        let m = m_star(&doubled, &bal).unwrap();
        assert!(fro_norm(&(&m - &lambda * 2.0)) < 1e-12);
    }

    #[test]
    fn gl_align_identity_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bal = balanced_factorization(&gauss(&mut rng, 6, 5), 2).unwrap();
        let res = gl_align(&bal, &bal, 1e-10, 200).unwrap();
        assert!(res.dist2 < 1e-9);
        assert!(res.residual <= 1e-10);
        assert!(fro_norm(&(&res.transform - Mat::identity(2, 2))) < 1e-6);
    }

    #[test]
    fn gl_align_gauge_invariance_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bal = balanced_factorization(&gauss(&mut rng, 8, 6), 2).unwrap();
        let (u, v) = bal.as_asymmetric().unwrap();
        let q = random_rotation(&mut rng, 2);
        let rotated = FactorPoint::asymmetric(u * &q, v * &q).unwrap();
        let res = gl_align(&rotated, &bal, 1e-10, 200).unwrap();
        assert!(res.dist2 < 1e-8, "dist2 = {}", res.dist2);
        assert!(fro_norm(&(&res.transform - q.transpose())) < 1e-6);
    }

    /// r = 1, n = q = 3: the objective is a scalar function of g; compare
    /// against a fine grid over [-5, 5] refined by golden-section search.
    #[test]
    fn gl_align_rank_one_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..10 {
            let u = gauss(&mut rng, 3, 1);
            let v = gauss(&mut rng, 3, 1);
            let u_ref = gauss(&mut rng, 3, 1);
            let v_ref = gauss(&mut rng, 3, 1);
            let phi = |g: f64| -> f64 {
                fro_norm(&(&u * g - &u_ref)).powi(2) / 3.0
                    + fro_norm(&(&v / g - &v_ref)).powi(2) / 3.0
            };
            // Grid search excluding a neighborhood of 0.
            let mut best_g = f64::NAN;
            let mut best_val = f64::INFINITY;
            for k in 0..=10_000 {
                let g = -5.0 + 10.0 * (k as f64) / 10_000.0;
                if g.abs() < 1e-3 {
                    continue;
                }
                let val = phi(g);
                if val < best_val {
                    best_val = val;
                    best_g = g;
                }
            }
            // Golden-section refinement around the grid winner.
            let (mut lo, mut hi) = (best_g - 2e-3, best_g + 2e-3);
            let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let a = hi - inv_phi * (hi - lo);
                let b = lo + inv_phi * (hi - lo);
                if phi(a) < phi(b) {
                    hi = b;
                } else {
                    lo = a;
                }
            }
            let oracle_val = phi((lo + hi) / 2.0);

            let pair = FactorPoint::asymmetric(u.clone(), v.clone()).unwrap();
            let reference = FactorPoint::asymmetric(u_ref.clone(), v_ref.clone()).unwrap();
            match gl_align(&pair, &reference, 1e-9, 500) {
                Ok(res) => {
                    assert!(
                        (res.dist2.powi(2) - oracle_val).abs() <= 1e-8 * oracle_val.max(1.0),
                        "trial {trial}: solver {} vs oracle {}",
                        res.dist2.powi(2),
                        oracle_val
                    );
                }
                Err(e) => {
                    // Random unrelated pairs may sit outside the basin where
                    // the first-order certificate is reachable; the solver
                    // must say so rather than return a bogus transform.
                    assert!(matches!(e, Error::AlignmentDiverged { .. }), "{e}");
                }
            }
        }
    }

    #[test]
    fn gl_align_zeroes_balance_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bal = balanced_factorization(&gauss(&mut rng, 10, 8), 3).unwrap();
        let (u, v) = bal.as_asymmetric().unwrap();
        let pert = FactorPoint::asymmetric(
            u + gauss(&mut rng, 10, 3) * 0.05,
            v + gauss(&mut rng, 8, 3) * 0.05,
        )
        .unwrap();
        let tol = 1e-10;
        let res = gl_align(&pert, &bal, tol, 500).unwrap();
        assert!(res.converged);
        assert!(res.residual <= tol);
        // The aligned copy has vanishing M*.
        let gi = res.transform.clone().try_inverse().unwrap();
        let (pu, pv) = pert.as_asymmetric().unwrap();
        let aligned =
            FactorPoint::asymmetric(pu * &res.transform, pv * gi.transpose()).unwrap();
        assert!(fro_norm(&m_star(&aligned, &bal).unwrap()) <= tol);
    }

    #[test]
    fn balanced_factorization_identity() {
        let res = balanced_factorization(&Mat::identity(2, 2), 2).unwrap();
        let (u, v) = res.as_asymmetric().unwrap();
        // n^-1 U^T U = Lambda = I/2.
        let gram = u.transpose() * u / 2.0;
        assert!(fro_norm(&(&gram - Mat::identity(2, 2) * 0.5)) < 1e-12);
        assert!(fro_norm(&(u * v.transpose() - Mat::identity(2, 2))) < 1e-12);
    }

    #[test]
    fn balanced_factorization_rank_one_outer_product() {
        let a = nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let b = nalgebra::DVector::from_vec(vec![3.0, 1.0]);
        let x = &a * b.transpose();
        let res = balanced_factorization(&x, 1).unwrap();
        let (u, v) = res.as_asymmetric().unwrap();
        assert!(fro_norm(&(u * v.transpose() - &x)) < 1e-12);
        assert!(balance_residual(u, v) <= 1e-12);
    }

    #[test]
    fn balanced_factorization_output_passes_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = gauss(&mut rng, 7, 5);
        let point = balanced_factorization(&x, 3).unwrap();
        assert!(crate::matrix::GroundTruth::new(point).is_ok());
    }

    #[test]
    fn balanced_factorization_degenerate() {
        let x = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            balanced_factorization(&x, 2),
            Err(Error::DegenerateRank { .. })
        ));
    }

    #[test]
    fn gl_align_gauge_consistency_under_invertible_transform() {
        // gl_align((U H, V H^-T), ref) should return ~ H^-1 G_hat with the
        // same dist2, for well-conditioned H.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bal = balanced_factorization(&gauss(&mut rng, 9, 7), 2).unwrap();
        let (u, v) = bal.as_asymmetric().unwrap();
        let pert = FactorPoint::asymmetric(
            u + gauss(&mut rng, 9, 2) * 0.03,
            v + gauss(&mut rng, 7, 2) * 0.03,
        )
        .unwrap();
        let base = gl_align(&pert, &bal, 1e-11, 500).unwrap();

        // Condition number <= 3 transform.
        let h = random_rotation(&mut rng, 2)
            * Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.5, 0.7]))
            * random_rotation(&mut rng, 2);
        let h_it = h.clone().try_inverse().unwrap().transpose();
        let (pu, pv) = pert.as_asymmetric().unwrap();
        let moved = FactorPoint::asymmetric(pu * &h, pv * h_it).unwrap();
        let res = gl_align(&moved, &bal, 1e-11, 500).unwrap();
        assert_abs_diff_eq!(res.dist2, base.dist2, epsilon = 1e-8);
        let expected = h.clone().try_inverse().unwrap() * &base.transform;
        assert!(
            fro_norm(&(&res.transform - &expected)) <= 1e-6 * op_norm(&expected).max(1.0),
            "transform mismatch"
        );
    }
}
