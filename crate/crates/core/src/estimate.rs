//! Estimators: constrained maximum likelihood for ordinal pairwise and m-wise
//! data, closed-form least squares for paired cardinal data, and per-item means
//! for cardinal data.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::graph::{spectrum_of_matrix, ComparisonDesign, HyperDesign, Laplacian, SpectralSummary};
use crate::models::{log_sum_exp, softmax, LinkFunction, ModelSpec, PlackettLuce};
use crate::synth::{inf_norm, BatchKind, ObservationBatch, QualityVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once the unit-step projected-gradient norm falls below this.
    pub grad_tolerance: f64,
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub projection_tolerance: f64,
    /// Keep the objective value of every iterate.
    #[serde(default)]
    pub record_history: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 5000,
            grad_tolerance: 1e-8,
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            projection_tolerance: 1e-10,
            record_history: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.grad_tolerance, self.initial_step, self.sufficient_decrease, self.projection_tolerance];
        if self.max_iters == 0 || positive.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidParameter("solver tolerances must be positive and max_iters >= 1".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) || self.sufficient_decrease >= 1.0 {
            return Err(Error::InvalidParameter("shrink and sufficient_decrease must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub w_hat: QualityVector,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<f64>,
}

/// Serialized estimate with the model and design it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub w_hat: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub model: ModelSpec,
    pub design_digest: String,
}

impl EstimateReport {
    pub fn new(result: &EstimateResult, model: ModelSpec, design_digest: impl Into<String>) -> Self {
        EstimateReport {
            w_hat: result.w_hat.values().to_vec(),
            converged: result.converged,
            iterations: result.iterations,
            objective: result.objective,
            grad_norm: result.grad_norm,
            model,
            design_digest: design_digest.into(),
        }
    }
}

/// A smooth objective on `R^d`.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64]) -> f64;
    fn gradient(&self, w: &[f64]) -> Vec<f64>;
}

/// Negative mean log-likelihood of ordinal pairwise data, aggregated per edge.
#[derive(Debug, Clone)]
pub struct OrdinalObjective {
    d: usize,
    link: LinkFunction,
    /// `(j, k, wins of j, wins of k)` per observed edge.
    tallies: Vec<(usize, usize, f64, f64)>,
    n: f64,
}

impl OrdinalObjective {
    pub fn new(batch: &ObservationBatch, design: &ComparisonDesign, link: &LinkFunction) -> Result<Self> {
        expect_kind(batch, BatchKind::OrdinalPair)?;
        check_len(design.d(), batch.d)?;
        let edges = design.edges();
        let mut counts = vec![(0.0, 0.0); edges.len()];
        for r in &batch.records {
            let c = counts
                .get_mut(r.entry)
                .ok_or_else(|| Error::InvalidParameter(format!("edge index {} out of range", r.entry)))?;
            if r.outcome > 0.0 {
                c.0 += 1.0;
            } else {
                c.1 += 1.0;
            }
        }
        let tallies = edges
            .iter()
            .zip(counts)
            .filter(|(_, (a, b))| a + b > 0.0)
            .map(|(e, (a, b))| (e.j, e.k, a, b))
            .collect();
        Ok(OrdinalObjective { d: design.d(), link: link.clone(), tallies, n: batch.n().max(1) as f64 })
    }
}

impl Objective for OrdinalObjective {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, w: &[f64]) -> f64 {
        let s = self.link.sigma();
        let total: f64 = self
            .tallies
            .iter()
            .map(|&(j, k, a, b)| {
                let t = (w[j] - w[k]) / s;
                let mut acc = 0.0;
                if a > 0.0 {
                    acc += a * self.link.log_cdf(t);
                }
                if b > 0.0 {
                    acc += b * self.link.log_cdf(-t);
                }
                acc
            })
            .sum();
        -total / self.n
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let s = self.link.sigma();
        let mut g = vec![0.0; self.d];
        for &(j, k, a, b) in &self.tallies {
            let t = (w[j] - w[k]) / s;
            let mut dt = 0.0;
            if a > 0.0 {
                dt -= a * self.link.hazard(t);
            }
            if b > 0.0 {
                dt += b * self.link.hazard(-t);
            }
            let dt = dt / (self.n * s);
            g[j] += dt;
            g[k] -= dt;
        }
        g
    }
}

/// Negative mean log-likelihood of Plackett-Luce winner data, aggregated per
/// (subset, winner) pair.
#[derive(Debug, Clone)]
pub struct MwiseObjective {
    d: usize,
    /// `(subset, winner position, count)`.
    tallies: Vec<(Vec<usize>, usize, f64)>,
    n: f64,
}

impl MwiseObjective {
    pub fn new(batch: &ObservationBatch, design: &HyperDesign, link: &PlackettLuce) -> Result<Self> {
        expect_kind(batch, BatchKind::Mwise)?;
        check_len(design.d(), batch.d)?;
        let m = design.m();
        if link.m != m {
            return Err(Error::KindMismatch(format!("link has m = {}, design has m = {m}", link.m)));
        }
        let subsets = design.subsets();
        let mut counts = vec![0.0; subsets.len() * m];
        for r in &batch.records {
            let pos = r.outcome as usize;
            if r.entry >= subsets.len() || pos >= m {
                return Err(Error::InvalidParameter(format!(
                    "record (entry {}, winner {pos}) out of range",
                    r.entry
                )));
            }
            counts[r.entry * m + pos] += 1.0;
        }
        let tallies = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0.0)
            .map(|(i, &c)| (subsets[i / m].clone(), i % m, c))
            .collect();
        Ok(MwiseObjective { d: design.d(), tallies, n: batch.n().max(1) as f64 })
    }
}

impl Objective for MwiseObjective {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, w: &[f64]) -> f64 {
        let total: f64 = self
            .tallies
            .iter()
            .map(|(subset, pos, c)| {
                let x: Vec<f64> = subset.iter().map(|&i| w[i]).collect();
                c * (x[*pos] - log_sum_exp(&x))
            })
            .sum();
        -total / self.n
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        for (subset, pos, c) in &self.tallies {
            let x: Vec<f64> = subset.iter().map(|&i| w[i]).collect();
            let p = softmax(&x);
            for (a, &i) in subset.iter().enumerate() {
                let indicator = if a == *pos { 1.0 } else { 0.0 };
                g[i] -= c * (indicator - p[a]) / self.n;
            }
        }
        g
    }
}

fn expect_kind(batch: &ObservationBatch, kind: BatchKind) -> Result<()> {
    if batch.kind == kind {
        Ok(())
    } else {
        Err(Error::KindMismatch(format!("expected a {} batch, got {}", kind.name(), batch.kind.name())))
    }
}

fn project_hyperplane(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Euclidean projection onto `{ <1, w> = 0, ||w||_inf <= B }` by Dykstra's
/// alternating projections. The hyperplane step is affine and needs no
/// correction term; the box step carries one.
pub fn project_feasible(v: &[f64], bound: f64, tolerance: f64) -> Vec<f64> {
    let mut x = v.to_vec();
    project_hyperplane(&mut x);
    if inf_norm(&x) <= bound {
        return x;
    }
    let d = x.len();
    let mut correction = vec![0.0; d];
    let mut y = vec![0.0; d];
    for _ in 0..100_000 {
        let mut change = 0.0f64;
        for i in 0..d {
            let before = x[i] + correction[i];
            let clipped = before.clamp(-bound, bound);
            correction[i] = before - clipped;
            change = change.max((clipped - y[i]).abs());
            y[i] = clipped;
        }
        x.copy_from_slice(&y);
        project_hyperplane(&mut x);
        let gap = x.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if gap <= tolerance && change <= tolerance {
            break;
        }
    }
    polish(v, &y, bound).unwrap_or(y)
}

/// Dykstra converges linearly, so its output can sit well above the tolerance
/// from the true projection. Its active set is usually already exact, in which
/// case the projection has a closed form: clipped coordinates stay at `+-B` and
/// the free ones share one shift. Returns `None` if the KKT conditions fail.
fn polish(v: &[f64], y: &[f64], bound: f64) -> Option<Vec<f64>> {
    let edge = bound * (1.0 - 1e-9);
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let mut clipped_sum = 0.0;
    for (&vi, &yi) in v.iter().zip(y) {
        if yi >= edge {
            clipped_sum += bound;
        } else if yi <= -edge {
            clipped_sum -= bound;
        } else {
            free_sum += vi;
            free += 1;
        }
    }
    if free == 0 {
        return None;
    }
    let tau = (free_sum + clipped_sum) / free as f64;
    let mut out = Vec::with_capacity(v.len());
    for (&vi, &yi) in v.iter().zip(y) {
        let shifted = vi - tau;
        let wi = if yi >= edge {
            if shifted < bound {
                return None;
            }
            bound
        } else if yi <= -edge {
            if shifted > -bound {
                return None;
            }
            -bound
        } else {
            if shifted.abs() > bound {
                return None;
            }
            shifted
        };
        out.push(wi);
    }
    Some(out)
}

/// Projected gradient descent with Armijo backtracking from `w = 0`. The first
/// trial step is `initial_step`; later trial steps use the Barzilai-Borwein
/// estimate of the local curvature.
pub fn minimize_projected<O: Objective + ?Sized>(obj: &O, bound: f64, opts: &SolverOptions) -> Result<EstimateResult> {
    opts.validate()?;
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::InvalidParameter(format!("bound must be positive, got {bound}")));
    }
    let d = obj.dim();
    let project = |v: &[f64]| project_feasible(v, bound, opts.projection_tolerance);
    let pg_norm = |w: &[f64], g: &[f64]| {
        let trial: Vec<f64> = w.iter().zip(g).map(|(a, b)| a - b).collect();
        let p = project(&trial);
        w.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };

    let mut w = vec![0.0; d];
    let mut f = obj.value(&w);
    let mut g = obj.gradient(&w);
    let mut grad_norm = pg_norm(&w, &g);
    let mut history = if opts.record_history { vec![f] } else { Vec::new() };
    let mut step = opts.initial_step;
    let mut iterations = 0;
    let mut converged = grad_norm <= opts.grad_tolerance;

    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let mut t = step;
        let (w_new, f_new) = loop {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let cand = project(&trial);
            let moved: f64 = cand.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum();
            let f_cand = obj.value(&cand);
            if f_cand <= f - opts.sufficient_decrease / t * moved || moved == 0.0 {
                break (cand, f_cand);
            }
            t *= opts.shrink;
            if t < 1e-20 {
                break (w.clone(), f);
            }
        };
        let g_new = obj.gradient(&w_new);
        let s: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
        let yk: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yk).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy > 0.0 && ss > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { opts.initial_step };

        let stalled = f_new >= f && s.iter().all(|&x| x == 0.0);
        w = w_new;
        f = f_new;
        g = g_new;
        grad_norm = pg_norm(&w, &g);
        if opts.record_history {
            history.push(f);
        }
        converged = grad_norm <= opts.grad_tolerance;
        if stalled {
            break;
        }
    }

    if !f.is_finite() {
        return Err(Error::InvalidParameter("objective is not finite".into()));
    }
    Ok(EstimateResult {
        w_hat: QualityVector::new(w, bound)?,
        converged,
        iterations,
        objective: f,
        grad_norm,
        history,
    })
}

/// Constrained maximum-likelihood estimate for ordinal pairwise data.
pub fn mle_ordinal(
    batch: &ObservationBatch,
    design: &ComparisonDesign,
    link: &LinkFunction,
    bound: f64,
    opts: &SolverOptions,
) -> Result<EstimateResult> {
    if !design.is_connected() {
        return Err(Error::Disconnected);
    }
    minimize_projected(&OrdinalObjective::new(batch, design, link)?, bound, opts)
}

/// Constrained maximum-likelihood estimate for Plackett-Luce winner data.
pub fn mle_mwise(
    batch: &ObservationBatch,
    design: &HyperDesign,
    link: &PlackettLuce,
    bound: f64,
    opts: &SolverOptions,
) -> Result<EstimateResult> {
    if !design.is_connected() {
        return Err(Error::Disconnected);
    }
    minimize_projected(&MwiseObjective::new(batch, design, link)?, bound, opts)
}

fn unconstrained_result(mut w: Vec<f64>, objective: f64) -> Result<EstimateResult> {
    project_hyperplane(&mut w);
    let bound = inf_norm(&w);
    Ok(EstimateResult {
        w_hat: QualityVector::new(w, bound)?,
        converged: true,
        iterations: 0,
        objective,
        grad_norm: 0.0,
        history: Vec::new(),
    })
}

/// Least squares `w = (1/n) L^dagger X^T y`, with `L = X^T X / n` the empirical
/// Laplacian of the observed comparisons.
pub fn ls_paired_cardinal(batch: &ObservationBatch, design: &ComparisonDesign) -> Result<EstimateResult> {
    expect_kind(batch, BatchKind::CardinalPair)?;
    check_len(design.d(), batch.d)?;
    let d = design.d();
    let edges = design.edges();
    let n = batch.n();
    if n == 0 {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let mut laplacian = DMatrix::zeros(d, d);
    let mut xty = vec![0.0; d];
    for r in &batch.records {
        let e = edges
            .get(r.entry)
            .ok_or_else(|| Error::InvalidParameter(format!("edge index {} out of range", r.entry)))?;
        laplacian[(e.j, e.j)] += 1.0;
        laplacian[(e.k, e.k)] += 1.0;
        laplacian[(e.j, e.k)] -= 1.0;
        laplacian[(e.k, e.j)] -= 1.0;
        xty[e.j] += r.outcome;
        xty[e.k] -= r.outcome;
    }
    let nf = n as f64;
    laplacian /= nf;
    let summary = spectrum_of_matrix(&laplacian)?;
    if !summary.is_connected() {
        return Err(Error::Disconnected);
    }
    let rhs: Vec<f64> = xty.iter().map(|v| v / nf).collect();
    let w = summary.pinv_apply(&rhs);
    let residual: f64 = batch
        .records
        .iter()
        .map(|r| {
            let e = edges[r.entry];
            (r.outcome - (w[e.j] - w[e.k])).powi(2)
        })
        .sum::<f64>()
        / nf;
    unconstrained_result(w, residual)
}

/// Per-item sample means, recentred to sum zero.
pub fn mean_cardinal(batch: &ObservationBatch, d: usize) -> Result<EstimateResult> {
    expect_kind(batch, BatchKind::CardinalItem)?;
    check_len(d, batch.d)?;
    let mut sums = vec![0.0; d];
    let mut counts = vec![0usize; d];
    for r in &batch.records {
        sums[r.entry] += r.outcome;
        counts[r.entry] += 1;
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidParameter(format!("item {i} is never observed")));
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let residual = batch.records.iter().map(|r| (r.outcome - means[r.entry]).powi(2)).sum::<f64>() / batch.n() as f64;
    unconstrained_result(means, residual)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub sq_l2: f64,
    pub sq_lap: f64,
}

/// Squared Euclidean and squared Laplacian semi-norm errors.
pub fn error_metrics(w_hat: &[f64], w_star: &[f64], summary: &SpectralSummary) -> Result<ErrorMetrics> {
    check_len(w_star.len(), w_hat.len())?;
    check_len(summary.d(), w_hat.len())?;
    let diff: Vec<f64> = w_hat.iter().zip(w_star).map(|(a, b)| a - b).collect();
    let sq_l2 = diff.iter().map(|x| x * x).sum();
    let mean = diff.iter().sum::<f64>() / diff.len() as f64;
    let centered: Vec<f64> = diff.iter().map(|x| x - mean).collect();
    Ok(ErrorMetrics { sq_l2, sq_lap: summary.quad_form(&centered) })
}
