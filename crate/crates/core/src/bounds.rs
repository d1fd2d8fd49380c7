//! Minimax bound evaluation, KL divergences between comparison models, greedy
//! Gilbert-Varshamov packings and the constructive Fano lower bound.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::graph::{lower_bound_statistic, spectrum, ComparisonDesign, HyperDesign, Laplacian, SpectralSummary};
use crate::models::{compute_gamma, compute_zeta, for_each_grid_point, softmax, LinkFunction, ModelParams, PlackettLuce};
use crate::seeds::rng_from_seed;
use crate::synth::{inf_norm, packing_map, PackingVariant};

const FEASIBILITY_SLACK: f64 = 1e-12;

fn bernoulli_kl(p: f64, p_c: f64, q: f64, q_c: f64) -> f64 {
    let term = |a: f64, b: f64| if a > 0.0 { a * (a / b).ln() } else { 0.0 };
    (term(p, q) + term(p_c, q_c)).max(0.0)
}

/// KL divergence between the laws of `n` pairwise observations under `w1` and
/// `w2`, with edges drawn in proportion to their design weights.
pub fn kl_exact(w1: &[f64], w2: &[f64], design: &ComparisonDesign, link: &LinkFunction, n: f64) -> Result<f64> {
    check_len(design.d(), w1.len())?;
    check_len(design.d(), w2.len())?;
    let s = link.sigma();
    let total: f64 = design
        .edges()
        .iter()
        .map(|e| {
            let t1 = (w1[e.j] - w1[e.k]) / s;
            let t2 = (w2[e.j] - w2[e.k]) / s;
            e.weight * bernoulli_kl(link.cdf(t1), link.cdf(-t1), link.cdf(t2), link.cdf(-t2))
        })
        .sum();
    Ok(n * total)
}

/// Categorical counterpart of [`kl_exact`] for Plackett-Luce winners, with
/// subsets drawn uniformly from the design.
pub fn kl_exact_mwise(w1: &[f64], w2: &[f64], design: &HyperDesign, n: f64) -> Result<f64> {
    check_len(design.d(), w1.len())?;
    check_len(design.d(), w2.len())?;
    let subsets = design.subsets();
    let total: f64 = subsets
        .iter()
        .map(|s| {
            let p = softmax(&s.iter().map(|&i| w1[i]).collect::<Vec<_>>());
            let q = softmax(&s.iter().map(|&i| w2[i]).collect::<Vec<_>>());
            p.iter().zip(&q).map(|(a, b)| if *a > 0.0 { a * (a / b).ln() } else { 0.0 }).sum::<f64>()
        })
        .sum();
    Ok((n * total / subsets.len() as f64).max(0.0))
}

fn check_feasible(w: &[f64], bound: f64) -> Result<()> {
    let sum: f64 = w.iter().sum();
    let inf = inf_norm(w);
    if inf > bound + FEASIBILITY_SLACK || sum.abs() > 1e-9 {
        return Err(Error::Infeasible(format!("||w||_inf = {inf}, sum = {sum:e}, B = {bound}")));
    }
    Ok(())
}

/// `(n zeta / sigma^2) ||w1 - w2||_L^2`, an upper bound on [`kl_exact`] for
/// vectors in `W_B`.
pub fn kl_upper(w1: &[f64], w2: &[f64], design: &ComparisonDesign, params: &ModelParams, n: f64) -> Result<f64> {
    check_len(design.d(), w1.len())?;
    check_len(design.d(), w2.len())?;
    check_feasible(w1, params.bound)?;
    check_feasible(w2, params.bound)?;
    let diff: f64 = design
        .edges()
        .iter()
        .map(|e| e.weight * ((w1[e.j] - w1[e.k]) - (w2[e.j] - w2[e.k])).powi(2))
        .sum();
    Ok(n * params.zeta / (params.sigma * params.sigma) * diff)
}

/// Packing size `M(alpha)` guaranteed by the Gilbert-Varshamov bound.
pub fn gv_target(d: usize, alpha: f64) -> u64 {
    let a2 = 2.0 * alpha;
    let exponent = 0.5 * d as f64 * (std::f64::consts::LN_2 + a2 * a2.ln() + (1.0 - a2) * (1.0 - a2).ln());
    exponent.exp().floor() as u64
}

/// Binary vectors in `{0} x {0,1}^{d-1}` with pairwise squared distances in
/// `[alpha d, d]`, stored as packed bit rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PackingSet {
    d: usize,
    alpha: f64,
    target: u64,
    words: usize,
    bits: Vec<u64>,
    /// `Some(achieved)` when the greedy search stopped short of the target.
    pub shortfall: Option<usize>,
}

impl PackingSet {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn target(&self) -> u64 {
        self.target
    }

    /// Number of vectors `M`.
    pub fn len(&self) -> usize {
        self.bits.len().checked_div(self.words).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Smallest admissible squared distance, `ceil(alpha d)`.
    pub fn min_distance(&self) -> u32 {
        (self.alpha * self.d as f64).ceil() as u32
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        let row = self.row(i);
        (0..self.d).map(|c| ((row[c / 64] >> (c % 64)) & 1) as f64).collect()
    }

    /// Squared Hamming distance between vectors `i` and `k`.
    pub fn distance(&self, i: usize, k: usize) -> u32 {
        self.row(i).iter().zip(self.row(k)).map(|(a, b)| (a ^ b).count_ones()).sum()
    }

    /// Number of vectors with a one in each coordinate.
    pub fn column_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.d];
        for i in 0..self.len() {
            let row = self.row(i);
            for (c, slot) in counts.iter_mut().enumerate() {
                *slot += (row[c / 64] >> (c % 64)) & 1;
            }
        }
        counts
    }

    /// Mean squared distance over all unordered pairs.
    pub fn mean_pair_distance(&self) -> f64 {
        let m = self.len() as f64;
        if m < 2.0 {
            return 0.0;
        }
        let total: f64 = self.column_counts().iter().map(|&c| c as f64 * (m - c as f64)).sum();
        total / (m * (m - 1.0) / 2.0)
    }
}

/// Rejected draws tolerated before a shortfall is reported.
pub const GV_RETRY_BUDGET: u64 = 1_000_000;
/// Largest packing materialized when only distinctness is required.
pub const GV_MAX_DISTINCT: u64 = 1 << 22;
/// Largest packing materialized when distances are checked pairwise.
pub const GV_MAX_SCANNED: u64 = 1 << 15;

/// Greedy randomized packing: draws uniform vectors with a zero first
/// coordinate and keeps those at squared distance at least `ceil(alpha d)`
/// from every kept vector.
pub fn gv_packing(d: usize, alpha: f64, seed: u64) -> Result<PackingSet> {
    gv_packing_with_limits(d, alpha, seed, GV_RETRY_BUDGET, None)
}

pub(crate) fn gv_packing_with_limits(d: usize, alpha: f64, seed: u64, budget: u64, cap: Option<u64>) -> Result<PackingSet> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!("packing needs d >= 2, got {d}")));
    }
    if !(alpha > 0.0 && alpha < 0.25) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1/4), got {alpha}")));
    }
    let target = gv_target(d, alpha);
    let words = d.div_ceil(64);
    let min_dist = (alpha * d as f64).ceil() as u32;
    let distinct_only = min_dist <= 1;
    let cap = cap.unwrap_or(if distinct_only { GV_MAX_DISTINCT } else { GV_MAX_SCANNED });
    // Only 2^(d-1) vectors exist with a zero first coordinate.
    let space = if d > 63 { u64::MAX } else { 1u64 << (d - 1) };
    let goal = target.min(cap).min(space) as usize;

    let mut rng = rng_from_seed(seed);
    let mut bits: Vec<u64> = Vec::with_capacity(goal * words);
    // Rows of a single word are their own hash keys.
    let mut seen_narrow: HashSet<u64> = HashSet::new();
    let mut seen_wide: HashSet<Vec<u64>> = HashSet::new();
    let mut rejected = 0u64;
    let mut draw = vec![0u64; words];
    let mut kept = 0usize;
    while kept < goal && rejected < budget {
        for (w, slot) in draw.iter_mut().enumerate() {
            let mut x: u64 = rng.random();
            let used = (d - 64 * w).min(64);
            if used < 64 {
                x &= (1u64 << used) - 1;
            }
            *slot = x;
        }
        draw[0] &= !1;
        let accept = if distinct_only {
            if words == 1 {
                seen_narrow.insert(draw[0])
            } else {
                seen_wide.insert(draw.clone())
            }
        } else {
            bits.chunks_exact(words)
                .all(|row| row.iter().zip(&draw).map(|(a, b)| (a ^ b).count_ones()).sum::<u32>() >= min_dist)
        };
        if accept {
            bits.extend_from_slice(&draw);
            kept += 1;
        } else {
            rejected += 1;
        }
    }
    let shortfall = if (kept as u64) < target { Some(kept) } else { None };
    Ok(PackingSet { d, alpha, target, words, bits, shortfall })
}

/// `delta^2 / 2 * (1 - (beta + log 2) / log M)`, clamped at zero.
pub fn fano_bound(delta_sq: f64, beta: f64, m: f64) -> Result<f64> {
    if !(m >= 2.0) {
        return Err(Error::InvalidParameter(format!("Fano bound needs M >= 2, got {m}")));
    }
    if !(delta_sq >= 0.0 && beta >= 0.0) {
        return Err(Error::InvalidParameter("delta^2 and beta must be nonnegative".into()));
    }
    Ok((0.5 * delta_sq * (1.0 - (beta + std::f64::consts::LN_2) / m.ln())).max(0.0))
}

/// Unnamed constants of the bounds. All default to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c1l: f64,
    pub c1u: f64,
    pub c2l: f64,
    pub c2u: f64,
    pub c3l: f64,
    pub c3u: f64,
    pub c4l: f64,
    pub c4u: f64,
    pub c_sample: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        BoundConstants { c1l: 1.0, c1u: 1.0, c2l: 1.0, c2u: 1.0, c3l: 1.0, c3u: 1.0, c4l: 1.0, c4u: 1.0, c_sample: 1.0 }
    }
}

impl BoundConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [self.c1l, self.c1u, self.c2l, self.c2u, self.c3l, self.c3u, self.c4l, self.c4u, self.c_sample];
        if all.iter().all(|&c| c > 0.0 && c.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("bound constants must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Theorem {
    #[serde(rename = "T1_lap")]
    T1Lap,
    #[serde(rename = "T2_l2")]
    T2L2,
    #[serde(rename = "T3_paired")]
    T3Paired,
    #[serde(rename = "T4_mwise_lap")]
    T4MwiseLap,
    #[serde(rename = "T4_mwise_l2")]
    T4MwiseL2,
}

impl Theorem {
    pub const ALL: [Theorem; 5] = [Theorem::T1Lap, Theorem::T2L2, Theorem::T3Paired, Theorem::T4MwiseLap, Theorem::T4MwiseL2];

    pub fn tag(self) -> &'static str {
        match self {
            Theorem::T1Lap => "T1_lap",
            Theorem::T2L2 => "T2_l2",
            Theorem::T3Paired => "T3_paired",
            Theorem::T4MwiseLap => "T4_mwise_lap",
            Theorem::T4MwiseL2 => "T4_mwise_l2",
        }
    }

    pub fn is_mwise(self) -> bool {
        matches!(self, Theorem::T4MwiseLap | Theorem::T4MwiseL2)
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Theorem {
    type Err = Error;

    /// Accepts the full tags and the short forms `T1`, `T2`, `T3`, `T4`
    /// (Laplacian norm) and `T4_l2`.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t1" | "t1_lap" => Ok(Theorem::T1Lap),
            "t2" | "t2_l2" => Ok(Theorem::T2L2),
            "t3" | "t3_paired" => Ok(Theorem::T3Paired),
            "t4" | "t4_lap" | "t4_mwise_lap" => Ok(Theorem::T4MwiseLap),
            "t4_l2" | "t4_mwise_l2" => Ok(Theorem::T4MwiseL2),
            other => Err(Error::Parse(format!("unknown theorem {other:?}"))),
        }
    }
}

/// How to read the Laplacian-norm lower bound: the rate `sigma^2 / (zeta n)`, or
/// the displayed form carrying an extra factor `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LapLowerReading {
    #[default]
    Rate,
    Display,
}

/// What a bound is evaluated on.
#[derive(Debug, Clone, Copy)]
pub enum BoundTarget<'a> {
    Pairwise { design: &'a ComparisonDesign, params: &'a ModelParams },
    Mwise { design: &'a HyperDesign, link: &'a PlackettLuce },
}

/// Scalars of the m-wise bounds, evaluated on a grid over `[-B, B]^m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MwiseFactors {
    pub m: usize,
    pub beta: f64,
    pub inf_f: f64,
    pub sup_grad_f_hpinv_sq: f64,
    pub sup_grad_log_f_sq: f64,
    pub grid_points_per_axis: usize,
}

impl MwiseFactors {
    pub fn evaluate(link: &PlackettLuce) -> Self {
        let mut inf_f = f64::INFINITY;
        let mut sup_grad = 0.0f64;
        let mut sup_grad_log = 0.0f64;
        for_each_grid_point(link.m, link.bound, link.grid_points_per_axis, |x| {
            inf_f = inf_f.min(link.choice_prob(x));
            sup_grad = sup_grad.max(link.h_pinv_norm_sq(&link.grad(x)));
            sup_grad_log = sup_grad_log.max(link.grad_log(x).iter().map(|g| g * g).sum());
        });
        MwiseFactors {
            m: link.m,
            beta: link.beta,
            inf_f,
            sup_grad_f_hpinv_sq: sup_grad,
            sup_grad_log_f_sq: sup_grad_log,
            grid_points_per_axis: link.grid_points_per_axis,
        }
    }

    /// `inf F / (m^2 lambda_m(H) sup ||grad F||^2_{H^dagger})`.
    pub fn lower_factor(&self) -> f64 {
        let m = self.m as f64;
        self.inf_f / (m * m * self.beta * self.sup_grad_f_hpinv_sq)
    }

    /// `m^2 sup ||grad log F||^2 / lambda_2(H)^2`.
    pub fn upper_factor(&self) -> f64 {
        let m = self.m as f64;
        m * m * self.sup_grad_log_f_sq / (self.beta * self.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: Theorem,
    pub formula: String,
    pub lower: f64,
    pub upper: f64,
    /// Whether `n` meets the sample-size condition of the lower bound.
    pub applicable: bool,
    pub sample_threshold: f64,
    pub d: usize,
    pub n: f64,
    #[serde(rename = "B")]
    pub bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mwise: Option<MwiseFactors>,
    pub lambda2: f64,
    pub trace_pinv: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lap_lower_reading: Option<LapLowerReading>,
    pub constants: BoundConstants,
}

/// Evaluates the lower and upper minimax bounds of `theorem`.
pub fn minimax_bounds(
    theorem: Theorem,
    target: BoundTarget<'_>,
    n: f64,
    constants: &BoundConstants,
    reading: LapLowerReading,
) -> Result<BoundReport> {
    constants.validate()?;
    if !(n > 0.0) {
        return Err(Error::InvalidParameter(format!("n must be positive, got {n}")));
    }
    match (theorem, target) {
        (Theorem::T1Lap | Theorem::T2L2 | Theorem::T3Paired, BoundTarget::Pairwise { design, params }) => {
            pairwise_bounds(theorem, design, params, n, constants, reading)
        }
        (Theorem::T4MwiseLap | Theorem::T4MwiseL2, BoundTarget::Mwise { design, link }) => {
            mwise_bounds(theorem, design, link, n, constants)
        }
        _ => Err(Error::KindMismatch(format!("{theorem} does not apply to this design"))),
    }
}

fn connected_spectrum<D: Laplacian + ?Sized>(design: &D) -> Result<SpectralSummary> {
    let s = spectrum(design)?;
    if !s.is_connected() {
        return Err(Error::Disconnected);
    }
    Ok(s)
}

fn pairwise_bounds(
    theorem: Theorem,
    design: &ComparisonDesign,
    params: &ModelParams,
    n: f64,
    c: &BoundConstants,
    reading: LapLowerReading,
) -> Result<BoundReport> {
    let s = connected_spectrum(design)?;
    let d = design.d() as f64;
    let var = params.sigma * params.sigma;
    let (zeta, gamma, b) = (params.zeta, params.gamma, params.bound);
    let threshold = c.c_sample * var * s.trace_pinv / (zeta * b * b);
    let (lower, upper, formula, applicable, lap_reading) = match theorem {
        Theorem::T1Lap => {
            let scale = match reading {
                LapLowerReading::Rate => 1.0,
                LapLowerReading::Display => d,
            };
            (
                c.c1l / zeta * var * scale / n,
                c.c1u * zeta / gamma * var * d / n,
                "lower = c1l sigma^2 [d] / (zeta n); upper = c1u (zeta/gamma) sigma^2 d / n",
                n >= threshold,
                Some(reading),
            )
        }
        Theorem::T2L2 => (
            c.c2l * var / n * (d * d).max(lower_bound_statistic(&s.eigenvalues)),
            c.c2u * zeta / gamma * var * d / (s.lambda2 * n),
            "lower = c2l sigma^2 / n max(d^2, max_d' sum 1/lambda_i); upper = c2u (zeta/gamma) sigma^2 d / (lambda2 n)",
            n >= threshold,
            None,
        ),
        Theorem::T3Paired => (
            c.c3l * var * s.trace_pinv / n,
            c.c3u * var * s.trace_pinv / n,
            "lower = c3l sigma^2 tr(L^dagger) / n; upper = c3u sigma^2 tr(L^dagger) / n",
            true,
            None,
        ),
        _ => unreachable!("m-wise theorems are dispatched separately"),
    };
    Ok(BoundReport {
        theorem,
        formula: formula.to_string(),
        lower,
        upper,
        applicable,
        sample_threshold: if theorem == Theorem::T3Paired { 0.0 } else { threshold },
        d: design.d(),
        n,
        bound: b,
        model: Some(params.clone()),
        mwise: None,
        lambda2: s.lambda2,
        trace_pinv: s.trace_pinv,
        lap_lower_reading: lap_reading,
        constants: *c,
    })
}

fn mwise_bounds(theorem: Theorem, design: &HyperDesign, link: &PlackettLuce, n: f64, c: &BoundConstants) -> Result<BoundReport> {
    if link.m != design.m() {
        return Err(Error::KindMismatch(format!("link has m = {}, design has m = {}", link.m, design.m())));
    }
    let s = connected_spectrum(design)?;
    let d = design.d() as f64;
    let f = MwiseFactors::evaluate(link);
    let lf = f.lower_factor();
    let uf = f.upper_factor();
    let b = link.bound;
    let threshold = c.c_sample * s.trace_pinv * f.inf_f / (b * b * f.beta * f.sup_grad_f_hpinv_sq);
    let (lower, upper, formula) = match theorem {
        Theorem::T4MwiseLap => (
            c.c4l * lf * d / n,
            c.c4u * uf * d / n,
            "lower = c4l inf F / (m^2 lambda_m(H) sup ||grad F||^2_H+) d / n; upper = c4u m^2 sup ||grad log F||^2 / lambda_2(H)^2 d / n",
        ),
        Theorem::T4MwiseL2 => (
            c.c4l * lf * d * d / n,
            c.c4u * uf * d * d / (s.lambda2 * n),
            "lower = c4l inf F / (m^2 lambda_m(H) sup ||grad F||^2_H+) d^2 / n; upper = c4u m^2 sup ||grad log F||^2 / lambda_2(H)^2 d^2 / (lambda2 n)",
        ),
        _ => unreachable!("pairwise theorems are dispatched separately"),
    };
    Ok(BoundReport {
        theorem,
        formula: formula.to_string(),
        lower,
        upper,
        applicable: n >= threshold,
        sample_threshold: threshold,
        d: design.d(),
        n,
        bound: b,
        model: None,
        mwise: Some(f),
        lambda2: s.lambda2,
        trace_pinv: s.trace_pinv,
        lap_lower_reading: None,
        constants: *c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvoDecision {
    OrdinalBetter,
    CardinalBetter,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvoReport {
    pub decision: CvoDecision,
    pub sigma_ord: f64,
    pub sigma_card: f64,
    #[serde(rename = "B")]
    pub bound: f64,
    pub zeta_g: f64,
    pub gamma_g: f64,
    pub b_l: f64,
    pub b_u: f64,
    pub b: f64,
    pub constants: BoundConstants,
}

/// Compares the ordinal (Thurstone) and cardinal per-sample risk factors
/// `b_u sigma^2`, `b_l sigma^2` against `sigma_c^2`.
pub fn cvo_decision(sigma_ord: f64, sigma_card: f64, bound: f64, constants: &BoundConstants) -> Result<CvoReport> {
    constants.validate()?;
    for (name, v) in [("sigma", sigma_ord), ("sigma_c", sigma_card), ("B", bound)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    let link = LinkFunction::thurstone(sigma_ord)?;
    let zeta_g = compute_zeta(&link, bound)?;
    let gamma_g = compute_gamma(&link, bound)?;
    let b_l = constants.c2l / zeta_g;
    let b_u = constants.c2u * zeta_g / gamma_g;
    let b = (constants.c_sample * sigma_ord * sigma_ord / (zeta_g * bound * bound)).ceil();
    let var = sigma_ord * sigma_ord;
    let card = sigma_card * sigma_card;
    let decision = if b_u * var < card {
        CvoDecision::OrdinalBetter
    } else if b_l * var > card {
        CvoDecision::CardinalBetter
    } else {
        CvoDecision::Indeterminate
    };
    Ok(CvoReport {
        decision,
        sigma_ord,
        sigma_card,
        bound,
        zeta_g,
        gamma_g,
        b_l,
        b_u,
        b,
        constants: *constants,
    })
}

/// Packing family used by [`fano_pipeline`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FanoVariant {
    /// Three-vector packing for `d <= 9`, greedy GV packing above.
    #[default]
    Auto,
    GreedyGv,
    ThreeVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanoReport {
    pub lower: f64,
    pub variant: FanoVariant,
    pub packing_size: usize,
    pub delta_sq: f64,
    /// Smallest squared Laplacian distance between packing vectors.
    pub min_separation: f64,
    /// Mean pairwise KL upper bound over the packing.
    pub beta: f64,
    pub max_inf_norm: f64,
    pub alpha: f64,
}

/// Pairs above this count are averaged through column counts instead of
/// enumerated.
const EXPLICIT_PAIR_LIMIT: usize = 400;

/// Constructive Laplacian-norm lower bound: builds a packing, maps it through
/// `delta / sqrt(d) U^T sqrt(Lambda^dagger)`, checks membership in `W_B`,
/// averages the KL upper bound over pairs and applies Fano's inequality.
pub fn fano_pipeline(
    design: &ComparisonDesign,
    params: &ModelParams,
    n: f64,
    alpha: f64,
    variant: FanoVariant,
    seed: u64,
) -> Result<FanoReport> {
    let s = connected_spectrum(design)?;
    let d = design.d();
    let df = d as f64;
    let var = params.sigma * params.sigma;
    let variant = match variant {
        FanoVariant::Auto if d <= 9 => FanoVariant::ThreeVector,
        FanoVariant::Auto => FanoVariant::GreedyGv,
        v => v,
    };

    let (zs, delta_sq): (Vec<Vec<f64>>, f64) = match variant {
        FanoVariant::ThreeVector => {
            let mut z1 = vec![0.0; d];
            let mut z2 = vec![0.0; d];
            z1[d - 1] = -1.0;
            z2[d - 1] = 1.0;
            (vec![z1, z2, vec![0.0; d]], var * std::f64::consts::LN_2 / (8.0 * n * params.zeta))
        }
        _ => {
            let packing = gv_packing(d, alpha, seed)?;
            if let Some(achieved) = packing.shortfall {
                return Err(Error::PackingShortfall { achieved, target: packing.target() });
            }
            let delta_sq = 0.01 * var * df / (n * params.zeta);
            if packing.len() > EXPLICIT_PAIR_LIMIT {
                return large_packing_bound(&s, &packing, params, n, delta_sq, alpha);
            }
            ((0..packing.len()).map(|i| packing.vector(i)).collect(), delta_sq)
        }
    };

    let scale = (delta_sq / df).sqrt();
    let ws: Vec<Vec<f64>> = zs
        .iter()
        .map(|z| packing_map(&s, PackingVariant::Proof, z).into_iter().map(|x| x * scale).collect())
        .collect();
    let max_inf = ws.iter().map(|w| inf_norm(w)).fold(0.0, f64::max);
    for w in &ws {
        check_feasible(w, params.bound)?;
    }
    let m = ws.len();
    let mut beta = 0.0;
    let mut min_sep = f64::INFINITY;
    for i in 0..m {
        for k in 0..i {
            beta += kl_upper(&ws[i], &ws[k], design, params, n)?;
            let diff: Vec<f64> = ws[i].iter().zip(&ws[k]).map(|(a, b)| a - b).collect();
            min_sep = min_sep.min(s.quad_form(&diff));
        }
    }
    beta /= (m * (m - 1) / 2) as f64;
    Ok(FanoReport {
        lower: fano_bound(min_sep, beta, m as f64)?,
        variant,
        packing_size: m,
        delta_sq,
        min_separation: min_sep,
        beta,
        max_inf_norm: max_inf,
        alpha,
    })
}

/// Large packings: on a connected design the map is an isometry from Hamming
/// distance to `d / delta^2` times the squared Laplacian distance, so
/// separations and the KL average follow from distances and column counts.
/// Feasibility uses the bound `||w||_inf <= delta / sqrt(d) sqrt(tr(L^dagger))`
/// and is confirmed on the first vectors explicitly.
fn large_packing_bound(
    s: &SpectralSummary,
    packing: &PackingSet,
    params: &ModelParams,
    n: f64,
    delta_sq: f64,
    alpha: f64,
) -> Result<FanoReport> {
    let d = packing.d() as f64;
    let scale = (delta_sq / d).sqrt();
    let mut max_inf = 0.0f64;
    for i in 0..packing.len().min(EXPLICIT_PAIR_LIMIT) {
        let w: Vec<f64> = packing_map(s, PackingVariant::Proof, &packing.vector(i)).into_iter().map(|x| x * scale).collect();
        max_inf = max_inf.max(inf_norm(&w));
    }
    let worst_case = scale * s.trace_pinv.sqrt();
    if worst_case > params.bound + FEASIBILITY_SLACK {
        return Err(Error::Infeasible(format!(
            "packing vectors may leave W_B: ||w||_inf bound {worst_case} > B = {}",
            params.bound
        )));
    }
    let per_unit = delta_sq / d;
    let beta = n * params.zeta / (params.sigma * params.sigma) * per_unit * packing.mean_pair_distance();
    let min_sep = per_unit * packing.min_distance() as f64;
    Ok(FanoReport {
        lower: fano_bound(min_sep, beta, packing.len() as f64)?,
        variant: FanoVariant::GreedyGv,
        packing_size: packing.len(),
        delta_sq,
        min_separation: min_sep,
        beta,
        max_inf_norm: max_inf,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, TopologyKind};
    use crate::models::plackett_luce;
    use proptest::prelude::*;

    fn edge() -> ComparisonDesign {
        ComparisonDesign::uniform(2, "edge", &[(0, 1)]).unwrap()
    }

    #[test]
    fn kl_examples() {
        let link = LinkFunction::btl(1.0).unwrap();
        let w1 = [0.1, -0.1];
        let w0 = [0.0, 0.0];
        assert_eq!(kl_exact(&w1, &w1, &edge(), &link, 1.0).unwrap(), 0.0);
        let p = 1.0 / (1.0 + (-0.2f64).exp());
        let hand = p * (2.0 * p).ln() + (1.0 - p) * (2.0 * (1.0 - p)).ln();
        let got = kl_exact(&w1, &w0, &edge(), &link, 1.0).unwrap();
        assert!((got - hand).abs() < 1e-15);
        assert!((got - 0.004975).abs() < 5e-7);
        assert!(kl_exact(&w0, &w1, &edge(), &link, 1.0).unwrap() > 0.0);

        let params = ModelParams::new(&link, 0.1).unwrap();
        assert!((params.zeta - 1.010033).abs() < 1e-6);
        let up = kl_upper(&w1, &w0, &edge(), &params, 1.0).unwrap();
        assert!((up - 0.040401).abs() < 1e-6);
        assert_eq!(kl_upper(&w1, &w1, &edge(), &params, 1.0).unwrap(), 0.0);
        assert!(kl_upper(&[0.2, -0.2], &w0, &edge(), &params, 1.0).is_err());
    }

    #[test]
    fn mwise_kl_at_two_matches_pairwise() {
        let h = HyperDesign::complete(4, 2).unwrap();
        let design = build_topology(TopologyKind::Complete, 4).unwrap();
        let link = LinkFunction::btl(1.0).unwrap();
        let w1 = [0.3, -0.1, 0.0, -0.2];
        let w2 = [-0.2, 0.1, 0.2, -0.1];
        let a = kl_exact_mwise(&w1, &w2, &h, 50.0).unwrap();
        let b = kl_exact(&w1, &w2, &design, &link, 50.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gv_targets() {
        assert_eq!(gv_target(10, 0.01), 19);
        assert_eq!(gv_target(3, 0.01), 2);
        let exponent = 25.0 * (std::f64::consts::LN_2 + 0.02 * 0.02f64.ln() + 0.98 * 0.98f64.ln());
        assert_eq!(gv_target(50, 0.01), exponent.exp().floor() as u64);
    }

    #[test]
    fn gv_packing_invariants() {
        for (d, alpha) in [(3usize, 0.01), (10, 0.01), (12, 0.2), (20, 0.24), (70, 0.1)] {
            let p = gv_packing(d, alpha, 5).unwrap();
            let need = (alpha * d as f64).ceil() as u32;
            for i in 0..p.len() {
                assert_eq!(p.vector(i)[0], 0.0);
                for k in 0..i {
                    let dist = p.distance(i, k);
                    assert!(dist >= need && dist as usize <= d);
                }
            }
            if p.shortfall.is_none() {
                assert!(p.len() as u64 >= p.target());
            }
        }
    }

    #[test]
    fn gv_packing_reports_shortfalls() {
        let capped = gv_packing_with_limits(10, 0.01, 0, GV_RETRY_BUDGET, Some(5)).unwrap();
        assert_eq!((capped.len(), capped.shortfall), (5, Some(5)));
        assert!(gv_packing(1, 0.01, 0).is_err());
        assert!(gv_packing(10, 0.3, 0).is_err());
    }

    #[test]
    fn fano_examples() {
        assert_eq!(fano_bound(1.0, 0.0, 2.0).unwrap(), 0.0);
        assert!((fano_bound(1.0, 0.0, 10f64.exp()).unwrap() - 0.46534).abs() < 1e-5);
        assert_eq!(fano_bound(1.0, 1e300, 100.0).unwrap(), 0.0);
        assert!(fano_bound(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn theorem_reports() {
        let c = BoundConstants::default();
        let design = build_topology(TopologyKind::Complete, 4).unwrap();
        let params = ModelParams::new(&LinkFunction::thurstone(1.0).unwrap(), 1.0).unwrap();
        let t3 = minimax_bounds(Theorem::T3Paired, BoundTarget::Pairwise { design: &design, params: &params }, 100.0, &c, LapLowerReading::Rate).unwrap();
        assert!((t3.lower - 0.045).abs() < 1e-12 && (t3.upper - 0.045).abs() < 1e-12);

        let d10 = build_topology(TopologyKind::Complete, 10).unwrap();
        let btl = ModelParams::new(&LinkFunction::btl(1.0).unwrap(), 1.0).unwrap();
        let t2 = minimax_bounds(Theorem::T2L2, BoundTarget::Pairwise { design: &d10, params: &btl }, 1e4, &c, LapLowerReading::Rate).unwrap();
        assert!((t2.lower - 100.0 / 1e4).abs() < 1e-12);
        assert!((t2.upper - 0.102047).abs() < 1e-5, "{}", t2.upper);
        assert!(t2.applicable);

        let t1 = minimax_bounds(Theorem::T1Lap, BoundTarget::Pairwise { design: &d10, params: &btl }, 1e4, &c, LapLowerReading::Rate).unwrap();
        let t1d = minimax_bounds(Theorem::T1Lap, BoundTarget::Pairwise { design: &d10, params: &btl }, 1e4, &c, LapLowerReading::Display).unwrap();
        assert!((t1d.lower / t1.lower - 10.0).abs() < 1e-12);
        assert!(t1.lower <= t1.upper);

        let tiny = minimax_bounds(Theorem::T2L2, BoundTarget::Pairwise { design: &d10, params: &btl }, 1.0, &c, LapLowerReading::Rate).unwrap();
        assert!(!tiny.applicable);

        let h = HyperDesign::complete(5, 3).unwrap();
        let pl = plackett_luce(3, 1.0).unwrap();
        assert!(matches!(
            minimax_bounds(Theorem::T4MwiseLap, BoundTarget::Pairwise { design: &d10, params: &btl }, 1e4, &c, LapLowerReading::Rate),
            Err(Error::KindMismatch(_))
        ));
        let t4 = minimax_bounds(Theorem::T4MwiseL2, BoundTarget::Mwise { design: &h, link: &pl }, 1e4, &c, LapLowerReading::Rate).unwrap();
        assert!(t4.lower > 0.0 && t4.upper > t4.lower);
        let f = t4.mwise.unwrap();
        let e = (-1.0f64).exp();
        assert!((f.inf_f - e / (e + 2.0 * 1f64.exp())).abs() < 1e-12);
    }

    #[test]
    fn t2_lower_dominates_d_squared() {
        let c = BoundConstants::default();
        let params = ModelParams::new(&LinkFunction::btl(1.0).unwrap(), 1.0).unwrap();
        for kind in [TopologyKind::Path, TopologyKind::Star, TopologyKind::Cycle, TopologyKind::Barbell] {
            let design = build_topology(kind, 12).unwrap();
            let r = minimax_bounds(Theorem::T2L2, BoundTarget::Pairwise { design: &design, params: &params }, 1e3, &c, LapLowerReading::Rate).unwrap();
            assert!(r.lower >= 144.0 / 1e3 - 1e-15);
        }
    }

    #[test]
    fn cvo_limits() {
        let c = BoundConstants::default();
        assert_eq!(cvo_decision(1.0, 1e4, 1.0, &c).unwrap().decision, CvoDecision::OrdinalBetter);
        assert_eq!(cvo_decision(10.0, 0.1, 1.0, &c).unwrap().decision, CvoDecision::CardinalBetter);
        assert_eq!(cvo_decision(1e3, 1.0, 1.0, &c).unwrap().decision, CvoDecision::CardinalBetter);
        let r = cvo_decision(1.0, 1.0, 1.0, &c).unwrap();
        assert_eq!(r.decision, CvoDecision::Indeterminate);
        let link = LinkFunction::thurstone(1.0).unwrap();
        assert!((r.b_l - 1.0 / compute_zeta(&link, 1.0).unwrap()).abs() < 1e-15);
        assert!((r.b_u - compute_zeta(&link, 1.0).unwrap() / compute_gamma(&link, 1.0).unwrap()).abs() < 1e-12);
        assert!(cvo_decision(0.0, 1.0, 1.0, &c).is_err());
    }

    #[test]
    fn fano_pipeline_small_and_scaling() {
        let design = build_topology(TopologyKind::Complete, 10).unwrap();
        let params = ModelParams::new(&LinkFunction::btl(1.0).unwrap(), 1.0).unwrap();
        let a = fano_pipeline(&design, &params, 1e4, 0.01, FanoVariant::Auto, 3).unwrap();
        assert_eq!(a.variant, FanoVariant::GreedyGv);
        assert_eq!(a.packing_size, 19);
        assert!(a.lower > 0.0);
        let b = fano_pipeline(&design, &params, 2e4, 0.01, FanoVariant::Auto, 3).unwrap();
        assert!((b.delta_sq / a.delta_sq - 0.5).abs() < 1e-12);
        assert!((b.beta - a.beta).abs() < 1e-12 * a.beta.max(1.0));
        assert!((b.lower / a.lower - 0.5).abs() < 1e-9);

        let small = build_topology(TopologyKind::Path, 6).unwrap();
        let t = fano_pipeline(&small, &params, 1e3, 0.01, FanoVariant::Auto, 0).unwrap();
        assert_eq!((t.variant, t.packing_size), (FanoVariant::ThreeVector, 3));
        assert!(t.lower > 0.0);
    }

    #[test]
    fn fano_pipeline_flags_infeasible_packings() {
        let design = build_topology(TopologyKind::Path, 10).unwrap();
        let params = ModelParams::new(&LinkFunction::btl(1.0).unwrap(), 0.01).unwrap();
        assert!(matches!(fano_pipeline(&design, &params, 1.0, 0.01, FanoVariant::GreedyGv, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn large_packing_uses_column_counts() {
        let design = build_topology(TopologyKind::Complete, 24).unwrap();
        let params = ModelParams::new(&LinkFunction::btl(1.0).unwrap(), 1.0).unwrap();
        let r = fano_pipeline(&design, &params, 1e5, 0.01, FanoVariant::GreedyGv, 8).unwrap();
        assert!(r.packing_size > EXPLICIT_PAIR_LIMIT);
        assert!(r.lower > 0.0);
        assert!(r.max_inf_norm <= 1.0);
    }

    proptest! {
        #[test]
        fn kl_sandwich(seed in any::<u64>(), b in 0.1f64..2.0, sigma in 0.3f64..3.0) {
            use crate::synth::{gen_quality, GeneratorKind};
            let design = build_topology(TopologyKind::Cycle, 6).unwrap();
            for link in [LinkFunction::btl(sigma).unwrap(), LinkFunction::thurstone(sigma).unwrap()] {
                let params = ModelParams::new(&link, b).unwrap();
                let w1 = gen_quality(GeneratorKind::Uniform, 6, b, seed).unwrap();
                let w2 = gen_quality(GeneratorKind::Gaussian, 6, b * 0.5, seed ^ 1).unwrap();
                let exact = kl_exact(w1.values(), w2.values(), &design, &link, 10.0).unwrap();
                let upper = kl_upper(w1.values(), w2.values(), &design, &params, 10.0).unwrap();
                prop_assert!(exact >= 0.0);
                prop_assert!(exact <= upper * (1.0 + 1e-12));
            }
        }

        #[test]
        fn fano_monotonicity(delta in 0.0f64..5.0, b1 in 0.0f64..5.0, b2 in 0.0f64..5.0, m1 in 2.0f64..1e6, m2 in 2.0f64..1e6) {
            let (lo_b, hi_b) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let (lo_m, hi_m) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            prop_assert!(fano_bound(delta, hi_b, lo_m).unwrap() <= fano_bound(delta, lo_b, lo_m).unwrap());
            prop_assert!(fano_bound(delta, lo_b, lo_m).unwrap() <= fano_bound(delta, lo_b, hi_m).unwrap() + 1e-15);
        }
    }
}
