//! The pluggable loss contract and its three concrete models: quadratic
//! denoising, matrix sensing, and scaled Bernoulli logistic.
//!
//! A loss exposes its value, the gradient G(X) = grad_X L(X), the population
//! gradient (its expectation over the noise, available once the truth is
//! registered), and the Hessian bilinear form on the product space. The
//! noise gradient is the difference G - E[G]; for all three bundled losses it
//! is constant in X.

use crate::error::{Error, Result};
use crate::matrix::{ensure_finite, Mat};

/// Static facts a loss knows about itself: problem shape, curvature bounds
/// when they are known in closed form, and gradient Lipschitz constants.
#[derive(Debug, Clone)]
pub struct LossMeta {
    pub shape: (usize, usize),
    pub declared_alpha: Option<f64>,
    pub declared_beta: Option<f64>,
    /// Operator-norm Lipschitz constant of G with respect to the product.
    pub lipschitz_l2: Option<f64>,
    /// Row-wise (two-to-infinity) Lipschitz constant of G.
    pub lipschitz_linf: Option<f64>,
}

pub trait LossModel: Send + Sync {
    fn meta(&self) -> &LossMeta;

    fn value(&self, x: &Mat) -> f64;

    /// G(X) = grad_X L(X); same shape as X.
    fn gradient(&self, x: &Mat) -> Mat;

    /// Value and gradient together; losses with shared sub-expressions
    /// override this with a fused pass.
    fn value_and_gradient(&self, x: &Mat) -> (f64, Mat) {
        (self.value(x), self.gradient(x))
    }

    /// E[G(X)] over the noise; requires the truth to have been registered at
    /// construction.
    fn population_gradient(&self, x: &Mat) -> Result<Mat>;

    /// The bilinear form grad^2_X L(X)[H1, H2]; symmetric in (H1, H2).
    fn hessian_bilinear(&self, x: &Mat, h1: &Mat, h2: &Mat) -> f64;
}

/// The stochastic gradient perturbation G(X) - E[G(X)].
pub fn noise_gradient(loss: &dyn LossModel, x: &Mat) -> Result<Mat> {
    Ok(loss.gradient(x) - loss.population_gradient(x)?)
}

fn check_shape(meta: &LossMeta, x: &Mat) -> () {
    debug_assert_eq!(
        (x.nrows(), x.ncols()),
        meta.shape,
        "loss evaluated at a matrix of the wrong shape"
    );
}

// ---------------------------------------------------------------------------
// Quadratic denoising: L(X) = 1/2 ||X - X* + E||_F^2
// ---------------------------------------------------------------------------

/// Quadratic benchmark loss with additive noise matrix E. The Hessian is the
/// identity, so alpha = beta = 1 exactly and the noise gradient is E itself.
pub struct QuadraticLoss {
    x_star: Mat,
    e: Mat,
    meta: LossMeta,
}

impl QuadraticLoss {
    pub fn new(x_star: Mat, e: Mat) -> Result<Self> {
        if x_star.shape() != e.shape() {
            return Err(Error::ShapeMismatch(format!(
                "X* is {}x{} but E is {}x{}",
                x_star.nrows(),
                x_star.ncols(),
                e.nrows(),
                e.ncols()
            )));
        }
        ensure_finite(&x_star)?;
        ensure_finite(&e)?;
        let meta = LossMeta {
            shape: x_star.shape(),
            declared_alpha: Some(1.0),
            declared_beta: Some(1.0),
            lipschitz_l2: Some(1.0),
            lipschitz_linf: Some(1.0),
        };
        Ok(QuadraticLoss { x_star, e, meta })
    }
}

impl LossModel for QuadraticLoss {
    fn meta(&self) -> &LossMeta {
        &self.meta
    }

    fn value(&self, x: &Mat) -> f64 {
        check_shape(&self.meta, x);
        0.5 * (x - &self.x_star + &self.e).norm_squared()
    }

    fn gradient(&self, x: &Mat) -> Mat {
        check_shape(&self.meta, x);
        x - &self.x_star + &self.e
    }

    fn population_gradient(&self, x: &Mat) -> Result<Mat> {
        Ok(x - &self.x_star)
    }

    fn hessian_bilinear(&self, _x: &Mat, h1: &Mat, h2: &Mat) -> f64 {
        h1.dot(h2)
    }
}

// ---------------------------------------------------------------------------
// Matrix sensing: L(X) = (2m)^-1 sum_i (<A_i, X> - y_i)^2
// ---------------------------------------------------------------------------

/// Linear measurements y_i = <A_i, X*> + xi_i.
#[derive(Debug, Clone)]
pub struct SensingData {
    pub operators: Vec<Mat>,
    pub observations: Vec<f64>,
}

impl SensingData {
    pub fn new(operators: Vec<Mat>, observations: Vec<f64>) -> Result<Self> {
        if operators.is_empty() || operators.len() != observations.len() {
            return Err(Error::InvalidArgument(format!(
                "sensing data needs matching non-empty operators/observations, got {}/{}",
                operators.len(),
                observations.len()
            )));
        }
        let shape = operators[0].shape();
        for (i, a) in operators.iter().enumerate() {
            if a.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "operator {i} is {:?}, expected {:?}",
                    a.shape(),
                    shape
                )));
            }
        }
        Ok(SensingData {
            operators,
            observations,
        })
    }

    pub fn m(&self) -> usize {
        self.operators.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.operators[0].shape()
    }
}

pub struct SensingLoss {
    data: SensingData,
    x_star: Option<Mat>,
    meta: LossMeta,
}

impl SensingLoss {
    pub fn new(data: SensingData) -> Self {
        let meta = LossMeta {
            shape: data.shape(),
            // Curvature is an empirical property of the drawn ensemble
            // (its restricted isometry constant); estimated, not declared.
            declared_alpha: None,
            declared_beta: None,
            lipschitz_l2: None,
            lipschitz_linf: None,
        };
        SensingLoss {
            data,
            x_star: None,
            meta,
        }
    }

    /// Registers the truth so the population gradient (the noiseless
    /// residual part) is available.
    pub fn with_truth(mut self, x_star: Mat) -> Result<Self> {
        if x_star.shape() != self.meta.shape {
            return Err(Error::ShapeMismatch("sensing truth shape".into()));
        }
        self.x_star = Some(x_star);
        Ok(self)
    }

    pub fn data(&self) -> &SensingData {
        &self.data
    }

    fn residuals(&self, x: &Mat) -> Vec<f64> {
        self.data
            .operators
            .iter()
            .zip(&self.data.observations)
            .map(|(a, y)| a.dot(x) - y)
            .collect()
    }
}

impl LossModel for SensingLoss {
    fn meta(&self) -> &LossMeta {
        &self.meta
    }

    fn value(&self, x: &Mat) -> f64 {
        check_shape(&self.meta, x);
        let m = self.data.m() as f64;
        self.residuals(x).iter().map(|r| r * r).sum::<f64>() / (2.0 * m)
    }

    fn gradient(&self, x: &Mat) -> Mat {
        check_shape(&self.meta, x);
        let m = self.data.m() as f64;
        let mut g = Mat::zeros(x.nrows(), x.ncols());
        for (a, r) in self.data.operators.iter().zip(self.residuals(x)) {
            g += a * (r / m);
        }
        g
    }

    fn population_gradient(&self, x: &Mat) -> Result<Mat> {
        let x_star = self.x_star.as_ref().ok_or(Error::PopulationUnavailable)?;
        let m = self.data.m() as f64;
        let diff = x - x_star;
        let mut g = Mat::zeros(x.nrows(), x.ncols());
        for a in &self.data.operators {
            g += a * (a.dot(&diff) / m);
        }
        Ok(g)
    }

    fn hessian_bilinear(&self, _x: &Mat, h1: &Mat, h2: &Mat) -> f64 {
        let m = self.data.m() as f64;
        self.data
            .operators
            .iter()
            .map(|a| a.dot(h1) * a.dot(h2))
            .sum::<f64>()
            / m
    }
}

// ---------------------------------------------------------------------------
// Scaled Bernoulli logistic
// ---------------------------------------------------------------------------

/// Binary observations Y_ij ~ Bernoulli(P*_ij) with
/// P*_ij = sigmoid(alpha0 + X*_ij), plus the entry range bounds (M1, M2)
/// that set the loss scaling nu = exp(-(alpha0 + M2)).
#[derive(Debug, Clone)]
pub struct BernoulliData {
    pub y: Mat,
    pub alpha0: f64,
    pub m1: f64,
    pub m2: f64,
    pub p_star: Option<Mat>,
}

impl BernoulliData {
    pub fn new(y: Mat, alpha0: f64, m1: f64, m2: f64, p_star: Option<Mat>) -> Result<Self> {
        for j in 0..y.ncols() {
            for i in 0..y.nrows() {
                let v = y[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "Y[{i},{j}] = {v}; observations must be 0 or 1"
                    )));
                }
            }
        }
        if let Some(p) = &p_star {
            if p.shape() != y.shape() {
                return Err(Error::ShapeMismatch("P* shape differs from Y".into()));
            }
            for j in 0..p.ncols() {
                for i in 0..p.nrows() {
                    let v = p[(i, j)];
                    if !(v > 0.0 && v < 1.0) {
                        return Err(Error::InvalidArgument(format!(
                            "P*[{i},{j}] = {v}; probabilities must lie in (0, 1)"
                        )));
                    }
                }
            }
        }
        Ok(BernoulliData {
            y,
            alpha0,
            m1,
            m2,
            p_star,
        })
    }
}

/// Numerically stable sigmoid.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log(1 + exp(t)).
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub struct BernoulliLoss {
    data: BernoulliData,
    nu: f64,
    meta: LossMeta,
}

impl BernoulliLoss {
    pub fn new(data: BernoulliData) -> Self {
        let nu = (-(data.alpha0 + data.m2)).exp();
        let meta = LossMeta {
            shape: data.y.shape(),
            declared_alpha: Some(0.25 * (-(data.m1 + data.m2)).exp()),
            declared_beta: Some(1.0),
            lipschitz_l2: Some(1.0),
            lipschitz_linf: Some(1.0),
        };
        BernoulliLoss { data, nu, meta }
    }

    /// The loss scaling nu = exp(-(alpha0 + M2)).
    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn data(&self) -> &BernoulliData {
        &self.data
    }
}

impl LossModel for BernoulliLoss {
    fn meta(&self) -> &LossMeta {
        &self.meta
    }

    fn value(&self, x: &Mat) -> f64 {
        check_shape(&self.meta, x);
        let a0 = self.data.alpha0;
        let mut total = 0.0;
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                let t = a0 + x[(i, j)];
                total += softplus(t) - self.data.y[(i, j)] * t;
            }
        }
        self.nu * total
    }

    fn gradient(&self, x: &Mat) -> Mat {
        check_shape(&self.meta, x);
        let a0 = self.data.alpha0;
        Mat::from_fn(x.nrows(), x.ncols(), |i, j| {
            self.nu * (sigmoid(a0 + x[(i, j)]) - self.data.y[(i, j)])
        })
    }

    fn population_gradient(&self, x: &Mat) -> Result<Mat> {
        let p_star = self.data.p_star.as_ref().ok_or(Error::PopulationUnavailable)?;
        let a0 = self.data.alpha0;
        Ok(Mat::from_fn(x.nrows(), x.ncols(), |i, j| {
            self.nu * (sigmoid(a0 + x[(i, j)]) - p_star[(i, j)])
        }))
    }

    fn hessian_bilinear(&self, x: &Mat, h1: &Mat, h2: &Mat) -> f64 {
        let a0 = self.data.alpha0;
        let mut total = 0.0;
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                let s = sigmoid(a0 + x[(i, j)]);
                total += s * (1.0 - s) * h1[(i, j)] * h2[(i, j)];
            }
        }
        self.nu * total
    }
}
