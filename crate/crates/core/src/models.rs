//! Link functions for pairwise comparisons and the Plackett-Luce m-wise choice model.
//!
//! Links are stored in standardized form: callers evaluate `F(<x, w> / sigma)`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FD_STEP: f64 = 1e-6;
const CURVATURE_FD_STEP: f64 = 1e-5;
const ZETA_GRID_STEP: f64 = 1e-4;
const GAMMA_GRID_STEP: f64 = 1e-3;
const SCREEN_TOLERANCE: f64 = 1e-10;

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / SQRT_2)
}

pub fn normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// `log Phi(t)`, accurate in both tails.
pub fn normal_log_cdf(t: f64) -> f64 {
    if t > 0.0 {
        (-0.5 * libm::erfc(t / SQRT_2)).ln_1p()
    } else if t > -30.0 {
        (0.5 * libm::erfc(-t / SQRT_2)).ln()
    } else {
        // asymptotic Mills-ratio expansion
        let t2 = t * t;
        let series = 1.0 - 1.0 / t2 + 3.0 / (t2 * t2) - 15.0 / t2.powi(3) + 105.0 / t2.powi(4)
            - 945.0 / t2.powi(5);
        -0.5 * t2 - 0.5 * (2.0 * PI).ln() - (-t).ln() + series.ln()
    }
}

fn log_logistic(t: f64) -> f64 {
    // log(1 / (1 + e^{-t})) = -softplus(-t)
    if t > 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// A user-supplied CDF. Derivatives are taken numerically.
#[derive(Clone)]
pub struct CustomCdf {
    pub name: String,
    cdf: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for CustomCdf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomCdf").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone)]
pub enum LinkFamily {
    Thurstone,
    Btl,
    Custom(CustomCdf),
}

impl LinkFamily {
    pub fn name(&self) -> &str {
        match self {
            LinkFamily::Thurstone => "thurstone",
            LinkFamily::Btl => "btl",
            LinkFamily::Custom(c) => &c.name,
        }
    }
}

/// Pairwise link `F` with noise scale `sigma`.
#[derive(Debug, Clone)]
pub struct LinkFunction {
    family: LinkFamily,
    sigma: f64,
}

/// Builds one of the built-in links by name (`thurstone` or `btl`).
pub fn make_link(family: &str, sigma: f64) -> Result<LinkFunction> {
    let family = match family.to_ascii_lowercase().as_str() {
        "thurstone" | "probit" | "gaussian" => LinkFamily::Thurstone,
        "btl" | "logit" | "logistic" => LinkFamily::Btl,
        other => return Err(Error::InvalidParameter(format!("unknown link family {other:?}"))),
    };
    LinkFunction::new(family, sigma)
}

impl LinkFunction {
    pub fn new(family: LinkFamily, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        let link = LinkFunction { family, sigma };
        if matches!(link.family, LinkFamily::Custom(_)) {
            link.screen()?;
        }
        Ok(link)
    }

    pub fn thurstone(sigma: f64) -> Result<Self> {
        Self::new(LinkFamily::Thurstone, sigma)
    }

    pub fn btl(sigma: f64) -> Result<Self> {
        Self::new(LinkFamily::Btl, sigma)
    }

    /// A custom CDF, accepted only if it passes the symmetry, monotonicity and
    /// range screens on `[-10, 10]`.
    pub fn custom(
        name: impl Into<String>,
        cdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma: f64,
    ) -> Result<Self> {
        let family = LinkFamily::Custom(CustomCdf { name: name.into(), cdf: Arc::new(cdf) });
        Self::new(family, sigma)
    }

    fn screen(&self) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for i in -1000..=1000 {
            let x = i as f64 * 0.01;
            let f = self.cdf(x);
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidParameter(format!("F({x}) = {f} is not in (0, 1)")));
            }
            if (f + self.cdf(-x) - 1.0).abs() > SCREEN_TOLERANCE {
                return Err(Error::InvalidParameter(format!("F is not symmetric at {x}")));
            }
            if f < prev {
                return Err(Error::InvalidParameter(format!("F decreases at {x}")));
            }
            prev = f;
        }
        Ok(())
    }

    pub fn family(&self) -> &LinkFamily {
        &self.family
    }

    pub fn name(&self) -> &str {
        self.family.name()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match &self.family {
            LinkFamily::Thurstone => normal_cdf(t),
            LinkFamily::Btl => logistic(t),
            LinkFamily::Custom(c) => (c.cdf)(t),
        }
    }

    pub fn log_cdf(&self, t: f64) -> f64 {
        match &self.family {
            LinkFamily::Thurstone => normal_log_cdf(t),
            LinkFamily::Btl => log_logistic(t),
            LinkFamily::Custom(c) => (c.cdf)(t).ln(),
        }
    }

    /// `F'(t)`.
    pub fn pdf(&self, t: f64) -> f64 {
        match &self.family {
            LinkFamily::Thurstone => normal_pdf(t),
            LinkFamily::Btl => logistic(t) * logistic(-t),
            LinkFamily::Custom(c) => ((c.cdf)(t + FD_STEP) - (c.cdf)(t - FD_STEP)) / (2.0 * FD_STEP),
        }
    }

    /// `F'(t) / F(t)`, the derivative of `log F`.
    pub fn hazard(&self, t: f64) -> f64 {
        match &self.family {
            LinkFamily::Thurstone => {
                (-0.5 * t * t - 0.5 * (2.0 * PI).ln() - normal_log_cdf(t)).exp()
            }
            LinkFamily::Btl => logistic(-t),
            LinkFamily::Custom(_) => self.pdf(t) / self.cdf(t),
        }
    }

    /// `d^2/dt^2 (-log F(t))`.
    pub fn curvature(&self, t: f64) -> f64 {
        match &self.family {
            LinkFamily::Thurstone => {
                let r = self.hazard(t);
                r * (t + r)
            }
            LinkFamily::Btl => logistic(t) * logistic(-t),
            LinkFamily::Custom(_) => {
                let h = CURVATURE_FD_STEP;
                -(self.hazard(t + h) - self.hazard(t - h)) / (2.0 * h)
            }
        }
    }
}

/// `zeta = max_{x in [0, 2B/sigma]} F'(x) / (F(2B/sigma) (1 - F(2B/sigma)))`.
pub fn compute_zeta(link: &LinkFunction, bound: f64) -> Result<f64> {
    check_bound(bound)?;
    let x_max = 2.0 * bound / link.sigma();
    let peak = match link.family() {
        // symmetric unimodal densities peak at the origin
        LinkFamily::Thurstone | LinkFamily::Btl => link.pdf(0.0),
        LinkFamily::Custom(_) => -grid_minimize(|x| -link.pdf(x), 0.0, x_max, ZETA_GRID_STEP).1,
    };
    let tail = link.cdf(x_max) * link.cdf(-x_max);
    Ok(peak / tail)
}

/// Minimum of `d^2/dt^2 (-log F)` over `[-2B/sigma, 2B/sigma]`.
pub fn compute_gamma(link: &LinkFunction, bound: f64) -> Result<f64> {
    check_bound(bound)?;
    let x_max = 2.0 * bound / link.sigma();
    let gamma = match link.family() {
        LinkFamily::Btl => link.cdf(x_max) * link.cdf(-x_max),
        _ => grid_minimize(|t| link.curvature(t), -x_max, x_max, GAMMA_GRID_STEP).1,
    };
    if gamma > 0.0 {
        Ok(gamma)
    } else {
        Err(Error::NotLogConcave(gamma))
    }
}

fn check_bound(bound: f64) -> Result<()> {
    if bound >= 0.0 && bound.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("bound must be nonnegative, got {bound}")))
    }
}

/// Dense grid scan followed by golden-section refinement around the best cell.
/// Returns `(argmin, min)`.
fn grid_minimize(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> (f64, f64) {
    if hi <= lo {
        return (lo, f(lo));
    }
    let cells = (((hi - lo) / step).ceil() as usize).max(1);
    let h = (hi - lo) / cells as f64;
    let (mut best_i, mut best) = (0, f(lo));
    for i in 1..=cells {
        let v = f(lo + i as f64 * h);
        if v < best {
            best = v;
            best_i = i;
        }
    }
    let mut a = (lo + (best_i as f64 - 1.0) * h).max(lo);
    let mut b = (lo + (best_i as f64 + 1.0) * h).min(hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut e = a + g * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    for _ in 0..80 {
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = f(e);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    if fx < best {
        (x, fx)
    } else {
        (lo + best_i as f64 * h, best)
    }
}

/// Curvature and flatness parameters of a link on `W_B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub family: String,
    pub sigma: f64,
    #[serde(rename = "B")]
    pub bound: f64,
    pub gamma: f64,
    pub zeta: f64,
}

impl ModelParams {
    pub fn new(link: &LinkFunction, bound: f64) -> Result<Self> {
        Ok(ModelParams {
            family: link.name().to_string(),
            sigma: link.sigma(),
            bound,
            gamma: compute_gamma(link, bound)?,
            zeta: compute_zeta(link, bound)?,
        })
    }
}

/// Serialized model description, echoed into experiment outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: String,
    pub sigma: f64,
    #[serde(rename = "B")]
    pub bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

/// Plackett-Luce choice among `m` items: the first listed item is chosen with
/// probability `e^{x_1} / sum_j e^{x_j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlackettLuce {
    pub m: usize,
    pub bound: f64,
    /// Smallest nonzero Hessian eigenvalue of `-log F` over `[-B, B]^m`.
    pub beta: f64,
    /// Grid resolution used when computing `beta`.
    pub grid_points_per_axis: usize,
}

/// Points per axis for scans over `[-B, B]^m`: the `2B/50` resolution up to
/// `m = 3`, coarser above so the grid stays near 10^5 points.
pub(crate) fn grid_points_per_axis(m: usize) -> usize {
    if m <= 3 {
        51
    } else {
        ((1.5e5f64).powf(1.0 / m as f64).floor() as usize).max(3)
    }
}

/// Calls `visit` on every point of the regular grid over `[-B, B]^m`.
pub(crate) fn for_each_grid_point(m: usize, bound: f64, per_axis: usize, mut visit: impl FnMut(&[f64])) {
    let per_axis = if bound == 0.0 { 1 } else { per_axis.max(2) };
    let coord = |i: usize| {
        if per_axis == 1 {
            0.0
        } else {
            -bound + 2.0 * bound * i as f64 / (per_axis - 1) as f64
        }
    };
    let mut idx = vec![0usize; m];
    let mut x = vec![coord(0); m];
    loop {
        visit(&x);
        let mut a = 0;
        while a < m {
            idx[a] += 1;
            if idx[a] < per_axis {
                x[a] = coord(idx[a]);
                break;
            }
            idx[a] = 0;
            x[a] = coord(0);
            a += 1;
        }
        if a == m {
            break;
        }
    }
}

/// Plackett-Luce link for subsets of size `m`, with its curvature computed on `[-B, B]^m`.
pub fn plackett_luce(m: usize, bound: f64) -> Result<PlackettLuce> {
    if m < 2 {
        return Err(Error::InvalidDimension(format!("m-wise link needs m >= 2, got {m}")));
    }
    check_bound(bound)?;
    let per_axis = grid_points_per_axis(m);
    let mut beta = f64::INFINITY;
    for_each_grid_point(m, bound, per_axis, |x| {
        let l2 = second_eigenvalue(&softmax_covariance(x));
        beta = beta.min(l2);
    });
    if !(beta > 0.0) {
        return Err(Error::NotLogConcave(beta));
    }
    Ok(PlackettLuce { m, bound, beta, grid_points_per_axis: per_axis })
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn log_sum_exp(x: &[f64]) -> f64 {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + x.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// `diag(p) - p p^T`, the Hessian of `-log F` for the softmax.
fn softmax_covariance(x: &[f64]) -> DMatrix<f64> {
    let p = softmax(x);
    let m = p.len();
    DMatrix::from_fn(m, m, |i, k| if i == k { p[i] - p[i] * p[i] } else { -p[i] * p[k] })
}

fn second_eigenvalue(h: &DMatrix<f64>) -> f64 {
    let mut ev: Vec<f64> = SymmetricEigen::new(h.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev[1]
}

impl PlackettLuce {
    /// Probability that the first listed item is chosen.
    pub fn choice_prob(&self, x: &[f64]) -> f64 {
        softmax(x)[0]
    }

    pub fn log_choice_prob(&self, x: &[f64]) -> f64 {
        x[0] - log_sum_exp(x)
    }

    /// `grad log F(x) = e_1 - softmax(x)`.
    pub fn grad_log(&self, x: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = softmax(x).into_iter().map(|p| -p).collect();
        g[0] += 1.0;
        g
    }

    /// `grad F(x) = F(x) (e_1 - softmax(x))`.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let f = self.choice_prob(x);
        self.grad_log(x).into_iter().map(|g| f * g).collect()
    }

    /// Exact Hessian of `-log F` at `x`.
    pub fn hessian_neg_log(&self, x: &[f64]) -> DMatrix<f64> {
        softmax_covariance(x)
    }

    /// Curvature lower bound `H = beta (I - 1 1^T / m)`.
    pub fn curvature_matrix(&self) -> DMatrix<f64> {
        let m = self.m;
        let inv = 1.0 / m as f64;
        DMatrix::from_fn(m, m, |i, k| self.beta * (if i == k { 1.0 } else { 0.0 } - inv))
    }

    /// `x^T R_j`: the cyclic shift that lists item `j` first.
    pub fn shift(&self, x: &[f64], j: usize) -> Vec<f64> {
        let m = x.len();
        (0..m).map(|a| x[(j + a) % m]).collect()
    }

    /// `||v||^2_{H^dagger}` for `H = beta (I - 1 1^T / m)`.
    pub fn h_pinv_norm_sq(&self, v: &[f64]) -> f64 {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / self.beta
    }
}
