//! Deterministic, seeded generation of ground truths, noise, sensing
//! ensembles, Bernoulli data, and initializers. Every generator is a pure
//! function of (spec, seed): repeated calls are bit-identical.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::align::{balanced_factorization, procrustes_align};
use crate::error::{Error, Result};
use crate::loss::{sigmoid, BernoulliData, SensingData};
use crate::matrix::{fro_norm, FactorPoint, GroundTruth, Mat, Mode};

/// Experiment knobs for a synthetic ground truth.
#[derive(Debug, Clone)]
pub struct TruthSpec {
    pub n: usize,
    /// Column dimension; ignored for the symmetric model.
    pub q: Option<usize>,
    pub r: usize,
    /// Target scaled sigma_min: sigma_r(X*)/n or sigma_r(X*)/sqrt(n q).
    pub sigma_min: f64,
    /// Target condition number; must be 1 when r = 1.
    pub kappa: f64,
    pub seed: u64,
}

fn gauss_mat(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Mat {
    Mat::from_fn(n, m, |_, _| rng.sample(StandardNormal))
}

/// Random orthonormal n x r frame from the seeded stream.
fn random_frame(rng: &mut ChaCha8Rng, n: usize, r: usize) -> Mat {
    gauss_mat(rng, n, r).qr().q()
}

/// Linear ramp of the scaled spectrum from kappa*sigma_min down to
/// sigma_min, exercising distinct singular values (no SVD gauge ties).
fn spectrum_ramp(r: usize, sigma_min: f64, kappa: f64) -> Vec<f64> {
    if r == 1 {
        return vec![sigma_min];
    }
    (0..r)
        .map(|i| sigma_min * (kappa - (kappa - 1.0) * i as f64 / (r as f64 - 1.0)))
        .collect()
}

/// Generates a ground truth with the requested (sigma_min, kappa) exactly:
/// Z* = sqrt(n) L Lambda^(1/2) for the symmetric model, and the balanced
/// pair U* = sqrt(n) L Lambda^(1/2), V* = sqrt(q) R Lambda^(1/2) for the
/// asymmetric one.
pub fn gen_truth(spec: &TruthSpec, mode: Mode) -> Result<GroundTruth> {
    let q = match mode {
        Mode::Symmetric => spec.n,
        Mode::Asymmetric => spec.q.unwrap_or(spec.n),
    };
    if spec.r == 0 || spec.r > spec.n.min(q) {
        return Err(Error::InvalidArgument(format!(
            "rank {} out of range for {}x{q}",
            spec.r, spec.n
        )));
    }
    if !(spec.sigma_min > 0.0) || spec.kappa < 1.0 {
        return Err(Error::InvalidArgument(
            "need sigma_min > 0 and kappa >= 1".into(),
        ));
    }
    if spec.r == 1 && spec.kappa != 1.0 {
        return Err(Error::InvalidArgument(
            "kappa must be 1 when r = 1 (a rank-1 matrix has kappa = 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ramp = spectrum_ramp(spec.r, spec.sigma_min, spec.kappa);
    let point = match mode {
        Mode::Symmetric => {
            let l = random_frame(&mut rng, spec.n, spec.r);
            let mut z = l;
            for (k, lam) in ramp.iter().enumerate() {
                let c = (spec.n as f64).sqrt() * lam.sqrt();
                for i in 0..spec.n {
                    z[(i, k)] *= c;
                }
            }
            FactorPoint::symmetric(z)?
        }
        Mode::Asymmetric => {
            let l = random_frame(&mut rng, spec.n, spec.r);
            let r_frame = random_frame(&mut rng, q, spec.r);
            let mut u = l;
            let mut v = r_frame;
            for (k, lam) in ramp.iter().enumerate() {
                let cu = (spec.n as f64).sqrt() * lam.sqrt();
                let cv = (q as f64).sqrt() * lam.sqrt();
                for i in 0..spec.n {
                    u[(i, k)] *= cu;
                }
                for j in 0..q {
                    v[(j, k)] *= cv;
                }
            }
            FactorPoint::asymmetric(u, v)?
        }
    };
    GroundTruth::new(point)
}

/// iid N(0, sigma^2) matrix from the seeded stream.
pub fn gen_gaussian_noise(n: usize, q: usize, sigma: f64, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_fn(n, q, |_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Symmetrized Gaussian noise (E + E^T)/sqrt(2); off-diagonal entries keep
/// variance sigma^2. The symmetric model requires a symmetric gradient, so
/// its additive noise must be symmetric.
pub fn gen_gaussian_noise_sym(n: usize, sigma: f64, seed: u64) -> Mat {
    let e = gen_gaussian_noise(n, n, sigma, seed);
    (&e + e.transpose()) / 2.0f64.sqrt()
}

/// Gaussian sensing ensemble: A_i with iid N(0,1) entries (so
/// E <A_i, X>^2 = ||X||_F^2 exactly), observations y_i = <A_i, X*> + xi_i.
pub fn gen_sensing(truth: &GroundTruth, m: usize, sigma_xi: f64, seed: u64) -> Result<SensingData> {
    if m == 0 {
        return Err(Error::InvalidArgument("need m >= 1 measurements".into()));
    }
    let x_star = truth.x_star();
    let (n, q) = (x_star.nrows(), x_star.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut operators = Vec::with_capacity(m);
    let mut observations = Vec::with_capacity(m);
    for _ in 0..m {
        let a = gauss_mat(&mut rng, n, q);
        let xi: f64 = sigma_xi * rng.sample::<f64, _>(StandardNormal);
        observations.push(a.dot(&x_star) + xi);
        operators.push(a);
    }
    SensingData::new(operators, observations)
}

/// Bernoulli observations from P* = sigmoid(alpha0 + X*); the range bounds
/// (M1, M2) are set from the true entries with 10% headroom and P* is kept
/// for population gradients.
pub fn gen_bernoulli(truth: &GroundTruth, alpha0: f64, seed: u64) -> Result<BernoulliData> {
    if truth.point().as_asymmetric().is_none() {
        return Err(Error::InvalidArgument(
            "the Bernoulli model is asymmetric; pass an asymmetric truth".into(),
        ));
    }
    let x_star = truth.x_star();
    let (min_x, max_x) = x_star
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let m1 = 1.1 * (-min_x).max(0.0);
    let m2 = 1.1 * max_x.max(0.0);
    let p_star = x_star.map(|v| sigmoid(alpha0 + v));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Mat::zeros(x_star.nrows(), x_star.ncols());
    // Row-major draw order so the stream is independent of storage layout.
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            y[(i, j)] = if rng.random::<f64>() < p_star[(i, j)] {
                1.0
            } else {
                0.0
            };
        }
    }
    BernoulliData::new(y, alpha0, m1, m2, Some(p_star))
}

/// Clips each row of `d` to norm at most `cap` (no-op when cap is infinite).
fn clip_rows(d: &mut Mat, cap: f64) {
    if !cap.is_finite() {
        return;
    }
    for i in 0..d.nrows() {
        let norm = d.row(i).norm();
        if norm > cap {
            let s = cap / norm;
            for j in 0..d.ncols() {
                d[(i, j)] *= s;
            }
        }
    }
}

/// Scales `d` by s and clips rows to cap; returns the Frobenius norm of the
/// result. Monotone nondecreasing in s.
fn clipped_fro(d: &Mat, s: f64, cap: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..d.nrows() {
        let norm = s * d.row(i).norm();
        let norm = if cap.is_finite() { norm.min(cap) } else { norm };
        total += norm * norm;
    }
    total.sqrt()
}

/// Finds s such that the row-clipped scaling of `d` has Frobenius norm
/// `target`, by bisection.
fn solve_scale(d: &Mat, cap: f64, target: f64) -> Result<f64> {
    let base = fro_norm(d);
    if base == 0.0 {
        return Err(Error::InvalidArgument("zero perturbation draw".into()));
    }
    let mut lo = 0.0;
    let mut hi = 2.0 * target / base;
    while clipped_fro(d, hi, cap) < target {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::InvalidArgument(
                "row cap too small to reach the requested perturbation size".into(),
            ));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clipped_fro(d, mid, cap) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Oracle initializer: a seeded perturbation of the true factors with the
/// aligned l2 radius hit exactly and the row-wise radius respected.
///
/// Symmetric: dist2(init, truth) = phi * ||Z*||_F exactly (the perturbation
/// is constructed in the optimally aligned gauge) and, when psi is finite,
/// dist_inf <= psi * ||Z*||_{2->inf}.
///
/// Asymmetric: both blocks are perturbed in the gauge of a common reference
/// rotation R0 = I, with the weighted error
/// (n^-1 ||U0 - U*||_F^2 + q^-1 ||V0 - V*||_F^2)^(1/2) = phi * tau_star
/// exactly and row norms capped at psi * omega_star.
pub fn oracle_init(truth: &GroundTruth, phi: f64, psi: f64, seed: u64) -> Result<FactorPoint> {
    if phi < 0.0 || psi <= 0.0 {
        return Err(Error::InvalidArgument("need phi >= 0 and psi > 0".into()));
    }
    if phi == 0.0 {
        return Ok(truth.point().clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = psi * truth.omega_star();
    match truth.point() {
        FactorPoint::Symmetric { z: z_star } => {
            let (n, r) = z_star.shape();
            let target = phi * fro_norm(z_star);
            if cap.is_finite() && target > 0.95 * cap * (n as f64).sqrt() {
                return Err(Error::InvalidArgument(format!(
                    "phi = {phi} unreachable under row cap psi = {psi}"
                )));
            }
            let d0 = gauss_mat(&mut rng, n, r);
            // Build the perturbation in the aligned gauge, then rescale to
            // hit the target distance exactly; headroom shrinks until the
            // row cap survives the alignment rotation.
            let mut headroom = 1.5;
            for _ in 0..60 {
                let budget = if cap.is_finite() {
                    (headroom * target).min(0.98 * cap * (n as f64).sqrt())
                } else {
                    headroom * target
                };
                if budget < 1.02 * target {
                    break;
                }
                let s = solve_scale(&d0, cap, budget)?;
                let mut d = &d0 * s;
                clip_rows(&mut d, cap);
                let res = procrustes_align(&(z_star + &d), z_star)?;
                let aligned_err = (z_star + &d) * &res.transform - z_star;
                let err_norm = fro_norm(&aligned_err);
                if err_norm >= target {
                    let z0 = z_star + &aligned_err * (target / err_norm);
                    // Confirm the gauge stayed optimal and the caps held.
                    let check = procrustes_align(&z0, z_star)?;
                    let inf_ok = !cap.is_finite()
                        || crate::matrix::two_to_inf(&(&z0 - z_star)) <= cap * (1.0 + 1e-9);
                    if (check.dist2 - target).abs() <= 1e-9 * target && inf_ok {
                        return Ok(FactorPoint::Symmetric { z: z0 });
                    }
                }
                headroom *= 0.95;
            }
            Err(Error::InvalidArgument(
                "oracle_init could not satisfy both radii; relax phi or psi".into(),
            ))
        }
        FactorPoint::Asymmetric { u: u_star, v: v_star } => {
            let (n, r) = u_star.shape();
            let q = v_star.nrows();
            let tau = truth.tau_star().expect("asymmetric truth has tau_star");
            let target = phi * tau;
            // Weighted stack (U/sqrt(n); V/sqrt(q)): its Frobenius norm is
            // the weighted error, and row caps translate per block.
            let du0 = gauss_mat(&mut rng, n, r);
            let dv0 = gauss_mat(&mut rng, q, r);
            let sn = (n as f64).sqrt();
            let sq = (q as f64).sqrt();
            let mut stack = Mat::zeros(n + q, r);
            stack.view_mut((0, 0), (n, r)).copy_from(&(&du0 / sn));
            stack.view_mut((n, 0), (q, r)).copy_from(&(&dv0 / sq));
            // Row i of the stack has cap (psi omega*) / sqrt(n or q).
            // Handle the two cap scales by clipping blocks separately.
            let solve_joint = |target: f64| -> Result<(Mat, Mat)> {
                // Bisection on the common scale s applied to both blocks
                // before per-block clipping.
                let weighted = |s: f64| -> f64 {
                    let mut total = 0.0;
                    for i in 0..n {
                        let norm = (s * du0.row(i).norm()).min(cap);
                        total += norm * norm / n as f64;
                    }
                    for j in 0..q {
                        let norm = (s * dv0.row(j).norm()).min(cap);
                        total += norm * norm / q as f64;
                    }
                    total.sqrt()
                };
                let mut lo = 0.0;
                let mut hi = 1.0;
                while weighted(hi) < target {
                    hi *= 2.0;
                    if hi > 1e300 {
                        return Err(Error::InvalidArgument(format!(
                            "phi = {phi} unreachable under row cap psi = {psi}"
                        )));
                    }
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if weighted(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let s = 0.5 * (lo + hi);
                let mut du = &du0 * s;
                let mut dv = &dv0 * s;
                clip_rows(&mut du, cap);
                clip_rows(&mut dv, cap);
                Ok((du, dv))
            };
            let (du, dv) = solve_joint(target)?;
            FactorPoint::asymmetric(u_star + du, v_star + dv)
        }
    }
}

/// Spectral initializer for sensing data: balanced factorization of the
/// back-projection m^-1 sum_i y_i A_i.
pub fn spectral_init_sensing(data: &SensingData, r: usize) -> Result<FactorPoint> {
    let (n, q) = data.shape();
    let m = data.m() as f64;
    let mut b = Mat::zeros(n, q);
    for (a, y) in data.operators.iter().zip(&data.observations) {
        b += a * (y / m);
    }
    balanced_factorization(&b, r)
}

/// Spectral initializer for Bernoulli data: rank-r truncation of Y, entries
/// clipped to [tau, 1 - tau] with tau = min(mean(Y), 1 - mean(Y))/2, mapped
/// through the logit, then balanced.
pub fn spectral_init_bernoulli(data: &BernoulliData, r: usize) -> Result<FactorPoint> {
    let y = &data.y;
    let (n, q) = y.shape();
    let mean = y.iter().sum::<f64>() / (n * q) as f64;
    let tau = 0.5 * mean.min(1.0 - mean);
    if !(tau > 0.0) {
        return Err(Error::DegenerateRank {
            rank: r,
            sigma_r: 0.0,
            threshold: 0.0,
        });
    }
    let svd = y.clone().svd(true, true);
    let u = svd.u.as_ref().expect("SVD with u");
    let v_t = svd.v_t.as_ref().expect("SVD with v_t");
    let mut p_hat = Mat::zeros(n, q);
    for k in 0..r.min(svd.singular_values.len()) {
        let s = svd.singular_values[k];
        for i in 0..n {
            for j in 0..q {
                p_hat[(i, j)] += s * u[(i, k)] * v_t[(k, j)];
            }
        }
    }
    let x_hat = p_hat.map(|p| {
        let p = p.clamp(tau, 1.0 - tau);
        (p / (1.0 - p)).ln() - data.alpha0
    });
    balanced_factorization(&x_hat, r)
}

/// Reads a binary observation matrix from a CSV file: a `rows,cols` header
/// line, then rows*cols 0/1 values in row-major order (any comma/newline
/// separation).
pub fn read_binary_matrix_csv(path: &Path) -> Result<Mat> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty file".into()))?;
    let dims: Vec<&str> = header.split(',').map(str::trim).collect();
    if dims.len() != 2 {
        return Err(Error::Parse(format!(
            "header must be `rows,cols`, got `{header}`"
        )));
    }
    let rows: usize = dims[0]
        .parse()
        .map_err(|_| Error::Parse(format!("bad row count `{}`", dims[0])))?;
    let cols: usize = dims[1]
        .parse()
        .map_err(|_| Error::Parse(format!("bad column count `{}`", dims[1])))?;
    let mut values = Vec::with_capacity(rows * cols);
    for line in lines {
        for tok in line.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Parse(format!("bad value `{tok}`")))?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::Parse(format!("value `{tok}` is not 0 or 1")));
            }
            values.push(v);
        }
    }
    if values.len() != rows * cols {
        return Err(Error::Parse(format!(
            "expected {} values, found {}",
            rows * cols,
            values.len()
        )));
    }
    Ok(Mat::from_row_slice(rows, cols, &values))
}
