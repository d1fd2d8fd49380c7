//! Comparison graphs and hypergraphs, their scaled Laplacians and spectra.
//!
//! A [`ComparisonDesign`] is a weighted edge list over `d` items whose weights
//! are the fractions of comparisons spent on each pair. Its scaled Laplacian
//! `L = sum_e w_e (e_j - e_k)(e_j - e_k)^T` always has trace 2. A
//! [`HyperDesign`] generalizes this to m-element subsets, with Laplacian
//! `(1/N) sum_i E_i (m I - 1 1^T) E_i^T` and trace `m (m - 1)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Eigenvalues with `|lambda| <= ZERO_TOLERANCE * lambda_max` are treated as zero.
pub const ZERO_TOLERANCE: f64 = 1e-10;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;
const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-10;
const EIGEN_MAX_ITERS: usize = 100_000;

/// Canonical comparison topologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    Complete,
    Star,
    Path,
    Cycle,
    Barbell,
    /// `None` picks the most balanced split of `d`.
    CompleteBipartite(Option<(usize, usize)>),
    /// `None` picks the most square factorization of `d`.
    Lattice2d(Option<(usize, usize)>),
    Hypercube,
    /// Degree-8 Margulis-Gabber-Galil graph on the `q x q` torus, `d = q^2`, `q` prime.
    Expander,
}

impl TopologyKind {
    /// Every kind, with automatic dimensions for the parametrized ones.
    pub const ALL: [TopologyKind; 9] = [
        TopologyKind::Complete,
        TopologyKind::Star,
        TopologyKind::Path,
        TopologyKind::Cycle,
        TopologyKind::Barbell,
        TopologyKind::CompleteBipartite(None),
        TopologyKind::Lattice2d(None),
        TopologyKind::Hypercube,
        TopologyKind::Expander,
    ];

    /// Fills in automatic dimensions for `d`, or reports why `d` is incompatible.
    pub fn resolve(self, d: usize) -> Result<TopologyKind> {
        if d < 2 {
            return Err(Error::InvalidDimension(format!("d = {d} < 2")));
        }
        let bad = |msg: String| Err(Error::InvalidDimension(msg));
        match self {
            TopologyKind::Cycle if d < 3 => bad(format!("cycle needs d >= 3, got {d}")),
            TopologyKind::Barbell if d < 4 || !d.is_multiple_of(2) => {
                bad(format!("barbell needs an even d >= 4, got {d}"))
            }
            TopologyKind::Hypercube if !d.is_power_of_two() => {
                bad(format!("hypercube needs d a power of 2, got {d}"))
            }
            TopologyKind::Expander => match expander_side(d) {
                Some(_) => Ok(self),
                None => bad(format!("expander needs d = q^2 for a prime q, got {d}")),
            },
            TopologyKind::CompleteBipartite(None) => {
                Ok(TopologyKind::CompleteBipartite(Some((d - d / 2, d / 2))))
            }
            TopologyKind::CompleteBipartite(Some((m1, m2))) => {
                if m1 == 0 || m2 == 0 || m1 + m2 != d {
                    bad(format!("complete bipartite needs m1 + m2 = d with m1, m2 >= 1, got {m1} + {m2} vs {d}"))
                } else {
                    Ok(self)
                }
            }
            TopologyKind::Lattice2d(None) => {
                let m1 = (2..=d)
                    .filter(|m| d.is_multiple_of(*m) && m * m <= d)
                    .max()
                    .ok_or_else(|| {
                        Error::InvalidDimension(format!("2D lattice needs composite d, got {d}"))
                    })?;
                Ok(TopologyKind::Lattice2d(Some((m1, d / m1))))
            }
            TopologyKind::Lattice2d(Some((m1, m2))) => {
                if m1 == 0 || m2 == 0 || m1 * m2 != d {
                    bad(format!("2D lattice needs m1 * m2 = d, got {m1} x {m2} vs {d}"))
                } else {
                    Ok(self)
                }
            }
            _ => Ok(self),
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::Complete => write!(f, "complete"),
            TopologyKind::Star => write!(f, "star"),
            TopologyKind::Path => write!(f, "path"),
            TopologyKind::Cycle => write!(f, "cycle"),
            TopologyKind::Barbell => write!(f, "barbell"),
            TopologyKind::CompleteBipartite(None) => write!(f, "complete_bipartite"),
            TopologyKind::CompleteBipartite(Some((a, b))) => write!(f, "complete_bipartite:{a}x{b}"),
            TopologyKind::Lattice2d(None) => write!(f, "lattice2d"),
            TopologyKind::Lattice2d(Some((a, b))) => write!(f, "lattice2d:{a}x{b}"),
            TopologyKind::Hypercube => write!(f, "hypercube"),
            TopologyKind::Expander => write!(f, "expander"),
        }
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, dims) = match s.split_once(':') {
            Some((n, rest)) => (n.to_string(), Some(rest.to_string())),
            None => (s.clone(), None),
        };
        let parse_dims = |dims: Option<String>| -> Result<Option<(usize, usize)>> {
            match dims {
                None => Ok(None),
                Some(x) => {
                    let (a, b) = x
                        .split_once('x')
                        .ok_or_else(|| Error::Parse(format!("expected AxB, got {x:?}")))?;
                    let a = a.parse().map_err(|_| Error::Parse(format!("bad size {a:?}")))?;
                    let b = b.parse().map_err(|_| Error::Parse(format!("bad size {b:?}")))?;
                    Ok(Some((a, b)))
                }
            }
        };
        let kind = match name.as_str() {
            "complete" => TopologyKind::Complete,
            "star" => TopologyKind::Star,
            "path" | "line" => TopologyKind::Path,
            "cycle" => TopologyKind::Cycle,
            "barbell" | "dumbbell" => TopologyKind::Barbell,
            "complete_bipartite" | "bipartite" => TopologyKind::CompleteBipartite(parse_dims(dims)?),
            "lattice2d" | "lattice" => TopologyKind::Lattice2d(parse_dims(dims)?),
            "hypercube" => TopologyKind::Hypercube,
            "expander" => TopologyKind::Expander,
            other => return Err(Error::Parse(format!("unknown topology {other:?}"))),
        };
        Ok(kind)
    }
}

/// One weighted pair; serialized as `[j, k, weight]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, f64)", into = "(usize, usize, f64)")]
pub struct Edge {
    pub j: usize,
    pub k: usize,
    pub weight: f64,
}

impl From<(usize, usize, f64)> for Edge {
    fn from((j, k, weight): (usize, usize, f64)) -> Self {
        Edge { j, k, weight }
    }
}

impl From<Edge> for (usize, usize, f64) {
    fn from(e: Edge) -> Self {
        (e.j, e.k, e.weight)
    }
}

/// Anything with a scaled Laplacian.
pub trait Laplacian {
    fn dim(&self) -> usize;
    fn laplacian(&self) -> &DMatrix<f64>;
    fn is_connected(&self) -> bool;
}

#[derive(Serialize, Deserialize)]
struct DesignRecord {
    d: usize,
    kind: String,
    edges: Vec<Edge>,
}

/// Weighted comparison graph. Weights sum to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DesignRecord", into = "DesignRecord")]
pub struct ComparisonDesign {
    d: usize,
    kind: String,
    edges: Vec<Edge>,
    laplacian: DMatrix<f64>,
    connected: bool,
}

impl TryFrom<DesignRecord> for ComparisonDesign {
    type Error = Error;

    fn try_from(r: DesignRecord) -> Result<Self> {
        ComparisonDesign::from_edges(r.d, r.kind, r.edges)
    }
}

impl From<ComparisonDesign> for DesignRecord {
    fn from(c: ComparisonDesign) -> Self {
        DesignRecord { d: c.d, kind: c.kind, edges: c.edges }
    }
}

impl ComparisonDesign {
    /// Builds a design from explicit weights, which must sum to one.
    pub fn from_edges(d: usize, kind: impl Into<String>, edges: Vec<Edge>) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension(format!("d = {d} < 2")));
        }
        if edges.is_empty() {
            return Err(Error::InvalidParameter("design has no edges".into()));
        }
        let mut total = 0.0;
        for e in &edges {
            if e.j >= d || e.k >= d {
                return Err(Error::InvalidParameter(format!(
                    "edge ({}, {}) out of range for d = {d}",
                    e.j, e.k
                )));
            }
            if e.j == e.k {
                return Err(Error::InvalidParameter(format!("self-loop at item {}", e.j)));
            }
            if !(e.weight >= 0.0 && e.weight.is_finite()) {
                return Err(Error::InvalidParameter(format!("bad edge weight {}", e.weight)));
            }
            total += e.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!("edge weights sum to {total}, not 1")));
        }

        let mut laplacian = DMatrix::zeros(d, d);
        let mut uf = UnionFind::new(d);
        for e in &edges {
            laplacian[(e.j, e.j)] += e.weight;
            laplacian[(e.k, e.k)] += e.weight;
            laplacian[(e.j, e.k)] -= e.weight;
            laplacian[(e.k, e.j)] -= e.weight;
            if e.weight > 0.0 {
                uf.union(e.j, e.k);
            }
        }
        let connected = uf.components() == 1;
        Ok(ComparisonDesign { d, kind: kind.into(), edges, laplacian, connected })
    }

    /// Builds a design from raw pair counts (duplicates allowed), normalizing to fractions.
    pub fn from_counts(d: usize, kind: impl Into<String>, pairs: &[(usize, usize, f64)]) -> Result<Self> {
        let total: f64 = pairs.iter().map(|p| p.2).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("pair counts sum to zero".into()));
        }
        let mut edges: Vec<Edge> = pairs
            .iter()
            .map(|&(j, k, c)| Edge { j, k, weight: c / total })
            .collect();
        // Renormalize so the sum is one to the last ulp where possible.
        let s: f64 = edges.iter().map(|e| e.weight).sum();
        for e in &mut edges {
            e.weight /= s;
        }
        Self::from_edges(d, kind, edges)
    }

    /// Unweighted graph with comparisons spread evenly over its edges.
    pub fn uniform(d: usize, kind: impl Into<String>, pairs: &[(usize, usize)]) -> Result<Self> {
        let counts: Vec<_> = pairs.iter().map(|&(j, k)| (j, k, 1.0)).collect();
        Self::from_counts(d, kind, &counts)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn weights(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.weight).collect()
    }

    /// Short stable identifier of the edge list, used in estimate outputs.
    pub fn digest(&self) -> String {
        // FNV-1a over the canonical JSON
        let s = serde_json::to_string(self).unwrap_or_default();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in s.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

impl Laplacian for ComparisonDesign {
    fn dim(&self) -> usize {
        self.d
    }
    fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }
    fn is_connected(&self) -> bool {
        self.connected
    }
}

/// Comparison hypergraph of m-element subsets, each subset equally weighted.
#[derive(Debug, Clone)]
pub struct HyperDesign {
    d: usize,
    m: usize,
    subsets: Vec<Vec<usize>>,
    laplacian: DMatrix<f64>,
    connected: bool,
}

impl HyperDesign {
    pub fn new(d: usize, m: usize, subsets: Vec<Vec<usize>>) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension(format!("d = {d} < 2")));
        }
        if m < 2 || m > d {
            return Err(Error::InvalidDimension(format!("need 2 <= m <= d, got m = {m}, d = {d}")));
        }
        if subsets.is_empty() {
            return Err(Error::InvalidParameter("hyper design has no subsets".into()));
        }
        let mut laplacian = DMatrix::zeros(d, d);
        let mut uf = UnionFind::new(d);
        let scale = 1.0 / subsets.len() as f64;
        let mf = m as f64;
        for s in &subsets {
            if s.len() != m {
                return Err(Error::InvalidParameter(format!("subset {s:?} does not have {m} items")));
            }
            for (a, &i) in s.iter().enumerate() {
                if i >= d {
                    return Err(Error::InvalidParameter(format!("item {i} out of range for d = {d}")));
                }
                if s[..a].contains(&i) {
                    return Err(Error::InvalidParameter(format!("subset {s:?} repeats item {i}")));
                }
            }
            // E (m I - 1 1^T) E^T: diagonal m - 1, off-diagonal -1 within the subset.
            for &i in s {
                for &k in s {
                    let v = if i == k { mf - 1.0 } else { -1.0 };
                    laplacian[(i, k)] += v * scale;
                }
            }
            for w in s.windows(2) {
                uf.union(w[0], w[1]);
            }
        }
        let connected = uf.components() == 1;
        Ok(HyperDesign { d, m, subsets, laplacian, connected })
    }

    /// All `C(d, m)` subsets, each once.
    pub fn complete(d: usize, m: usize) -> Result<Self> {
        if m < 2 || m > d {
            return Err(Error::InvalidDimension(format!("need 2 <= m <= d, got m = {m}, d = {d}")));
        }
        let mut subsets = Vec::new();
        let mut cur: Vec<usize> = (0..m).collect();
        loop {
            subsets.push(cur.clone());
            // next combination in lexicographic order
            let mut i = m;
            while i > 0 && cur[i - 1] == d - m + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            cur[i - 1] += 1;
            for t in i..m {
                cur[t] = cur[t - 1] + 1;
            }
        }
        Self::new(d, m, subsets)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }
}

impl Laplacian for HyperDesign {
    fn dim(&self) -> usize {
        self.d
    }
    fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }
    fn is_connected(&self) -> bool {
        self.connected
    }
}

/// Returns the hypergraph Laplacian of `design`.
pub fn hypergraph_laplacian(design: &HyperDesign) -> DMatrix<f64> {
    design.laplacian.clone()
}

/// Eigendecomposition `L = V diag(lambda) V^T` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SpectralSummary {
    /// Ascending; entries within the zero tolerance are exactly 0.
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector of `eigenvalues[i]`.
    pub eigenvectors: DMatrix<f64>,
    pub trace_pinv: f64,
    pub lambda2: f64,
    pub zero_tolerance: f64,
    laplacian: DMatrix<f64>,
}

impl SpectralSummary {
    pub fn d(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Pseudoinverse eigenvalues: `1/lambda` on the nonzero part, 0 elsewhere.
    pub fn pinv_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&l| if l > 0.0 { 1.0 / l } else { 0.0 })
            .collect()
    }

    pub fn pinv(&self) -> DMatrix<f64> {
        self.spectral_matrix(|l| if l > 0.0 { 1.0 / l } else { 0.0 })
    }

    /// `V f(Lambda) V^T` for a scalar map `f` on the clamped eigenvalues.
    pub fn spectral_matrix(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DVector::from_iterator(self.d(), self.eigenvalues.iter().map(|&l| f(l)));
        let v = &self.eigenvectors;
        v * DMatrix::from_diagonal(&scaled) * v.transpose()
    }

    /// `L^dagger x`.
    pub fn pinv_apply(&self, x: &[f64]) -> Vec<f64> {
        let v = &self.eigenvectors;
        let xv = DVector::from_column_slice(x);
        let mut coeffs = v.transpose() * xv;
        for (c, &l) in coeffs.iter_mut().zip(&self.eigenvalues) {
            *c = if l > 0.0 { *c / l } else { 0.0 };
        }
        (v * coeffs).iter().copied().collect()
    }

    /// `x^T L x`, clamped at zero.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        quad_form(&self.laplacian, x)
    }

    /// `u^T L^dagger u`.
    pub fn pinv_quad_form(&self, u: &[f64]) -> f64 {
        let y = self.pinv_apply(u);
        u.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().max(0.0)
    }

    /// `V diag(lambda) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.spectral_matrix(|l| l)
    }

    pub fn is_connected(&self) -> bool {
        self.lambda2 > 0.0
    }
}

pub(crate) fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let mut acc = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for k in 0..d {
            row += m[(i, k)] * x[k];
        }
        acc += x[i] * row;
    }
    acc.max(0.0)
}

/// Ascending eigendecomposition of the design's Laplacian.
pub fn spectrum<D: Laplacian + ?Sized>(design: &D) -> Result<SpectralSummary> {
    spectrum_of_matrix(design.laplacian())
}

/// Ascending eigendecomposition of a symmetric PSD matrix.
pub fn spectrum_of_matrix(laplacian: &DMatrix<f64>) -> Result<SpectralSummary> {
    let d = laplacian.nrows();
    if d == 0 || laplacian.ncols() != d {
        return Err(Error::InvalidDimension(format!(
            "Laplacian must be square and nonempty, got {}x{}",
            laplacian.nrows(),
            laplacian.ncols()
        )));
    }
    if laplacian.iter().any(|x| !x.is_finite()) {
        return Err(Error::Eigen("Laplacian has non-finite entries".into()));
    }
    let eig = SymmetricEigen::try_new(laplacian.clone(), f64::EPSILON, EIGEN_MAX_ITERS)
        .ok_or_else(|| Error::Eigen(format!("symmetric eigensolver did not converge (d = {d})")))?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = ZERO_TOLERANCE * lambda_max;

    let mut eigenvalues = Vec::with_capacity(d);
    let mut eigenvectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        let l = eig.eigenvalues[src];
        if l < -NEGATIVE_EIGEN_TOLERANCE * lambda_max.max(1.0) {
            return Err(Error::Eigen(format!("negative eigenvalue {l:e}; matrix is not PSD")));
        }
        eigenvalues.push(if l.abs() <= cutoff { 0.0 } else { l });
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    let trace_pinv = eigenvalues.iter().filter(|&&l| l > 0.0).map(|l| 1.0 / l).sum();
    let lambda2 = if d >= 2 { eigenvalues[1] } else { 0.0 };
    Ok(SpectralSummary {
        eigenvalues,
        eigenvectors,
        trace_pinv,
        lambda2,
        zero_tolerance: ZERO_TOLERANCE,
        laplacian: laplacian.clone(),
    })
}

/// `sqrt((u - v)^T L (u - v))`.
pub fn laplacian_seminorm(summary: &SpectralSummary, u: &[f64], v: &[f64]) -> Result<f64> {
    check_len(summary.d(), u.len())?;
    check_len(summary.d(), v.len())?;
    let delta: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    if delta.iter().all(|&x| x == delta[0]) {
        return Ok(0.0);
    }
    Ok(summary.quad_form(&delta).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimality {
    Optimal,
    Suboptimal,
    Indeterminate,
}

impl fmt::Display for Optimality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Optimality::Optimal => "optimal",
            Optimality::Suboptimal => "suboptimal",
            Optimality::Indeterminate => "indeterminate",
        };
        f.write_str(s)
    }
}

/// Thresholds for fixed-`d` topology classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalityThresholds {
    /// Optimal when `1 / (lambda2 d) <= c_opt`.
    pub c_opt: f64,
    /// Suboptimal when the lower-bound statistic exceeds `c_sub d^2`.
    pub c_sub: f64,
}

impl Default for OptimalityThresholds {
    fn default() -> Self {
        OptimalityThresholds { c_opt: 4.5, c_sub: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub ratio_r: f64,
    pub lb_statistic: f64,
    pub classification: Optimality,
}

/// `max_{d' in 2..=d} sum_{i = floor(0.99 d')}^{d'} lambda_i^dagger` over 1-based
/// ascending eigenvalues. Zero eigenvalues contribute 0, as in the pseudoinverse.
pub fn lower_bound_statistic(eigenvalues: &[f64]) -> f64 {
    let d = eigenvalues.len();
    let inv = |i: usize| {
        let l = eigenvalues[i - 1];
        if l > 0.0 {
            1.0 / l
        } else {
            0.0
        }
    };
    (2..=d)
        .map(|dp| {
            let lo = ((0.99 * dp as f64).floor() as usize).max(1);
            (lo..=dp).map(inv).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Classifies a connected design. Suboptimality is checked first: a large
/// lower-bound statistic rules out optimality regardless of `ratio_r`.
pub fn optimality_report(
    summary: &SpectralSummary,
    d: usize,
    thresholds: &OptimalityThresholds,
) -> Result<OptimalityReport> {
    check_len(summary.d(), d)?;
    if !summary.is_connected() {
        return Err(Error::Disconnected);
    }
    let df = d as f64;
    let ratio_r = 1.0 / (summary.lambda2 * df);
    let lb_statistic = lower_bound_statistic(&summary.eigenvalues);
    let classification = if lb_statistic > thresholds.c_sub * df * df {
        Optimality::Suboptimal
    } else if ratio_r <= thresholds.c_opt {
        Optimality::Optimal
    } else {
        Optimality::Indeterminate
    };
    Ok(OptimalityReport { ratio_r, lb_statistic, classification })
}

/// Builds a canonical topology with comparisons spread evenly over its edges.
pub fn build_topology(kind: TopologyKind, d: usize) -> Result<ComparisonDesign> {
    let kind = kind.resolve(d)?;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    match kind {
        TopologyKind::Complete => {
            for j in 0..d {
                for k in j + 1..d {
                    pairs.push((j, k));
                }
            }
        }
        TopologyKind::Star => pairs.extend((1..d).map(|k| (0, k))),
        TopologyKind::Path => pairs.extend((0..d - 1).map(|j| (j, j + 1))),
        TopologyKind::Cycle => {
            pairs.extend((0..d - 1).map(|j| (j, j + 1)));
            pairs.push((d - 1, 0));
        }
        TopologyKind::Barbell => {
            let h = d / 2;
            for base in [0, h] {
                for j in 0..h {
                    for k in j + 1..h {
                        pairs.push((base + j, base + k));
                    }
                }
            }
            // one bridge between the last node of the first clique and the first of the second
            pairs.push((h - 1, h));
        }
        TopologyKind::CompleteBipartite(Some((m1, _))) => {
            for j in 0..m1 {
                for k in m1..d {
                    pairs.push((j, k));
                }
            }
        }
        TopologyKind::Lattice2d(Some((m1, m2))) => {
            let at = |r: usize, c: usize| r * m2 + c;
            for r in 0..m1 {
                for c in 0..m2 {
                    if c + 1 < m2 {
                        pairs.push((at(r, c), at(r, c + 1)));
                    }
                    if r + 1 < m1 {
                        pairs.push((at(r, c), at(r + 1, c)));
                    }
                }
            }
        }
        TopologyKind::Hypercube => {
            for j in 0..d {
                let mut bit = 1;
                while bit < d {
                    let k = j ^ bit;
                    if j < k {
                        pairs.push((j, k));
                    }
                    bit <<= 1;
                }
            }
        }
        TopologyKind::Expander => {
            let q = expander_side(d).expect("resolved above");
            let at = |x: usize, y: usize| (x % q) * q + (y % q);
            // Counting multiplicities keeps parallel edges as heavier weights.
            let mut counts = std::collections::BTreeMap::<(usize, usize), f64>::new();
            for x in 0..q {
                for y in 0..q {
                    let v = at(x, y);
                    let images = [
                        at(x + 2 * y, y),
                        at(x + 2 * y + 1, y),
                        at(x, y + 2 * x),
                        at(x, y + 2 * x + 1),
                    ];
                    for u in images {
                        if u != v {
                            *counts.entry((v.min(u), v.max(u))).or_default() += 1.0;
                        }
                    }
                }
            }
            let weighted: Vec<_> = counts.into_iter().map(|((j, k), c)| (j, k, c)).collect();
            let design = ComparisonDesign::from_counts(d, kind.to_string(), &weighted)?;
            return check_connected(design);
        }
        TopologyKind::CompleteBipartite(None) | TopologyKind::Lattice2d(None) => {
            unreachable!("resolve fills in dimensions")
        }
    }
    check_connected(ComparisonDesign::uniform(d, kind.to_string(), &pairs)?)
}

fn check_connected(design: ComparisonDesign) -> Result<ComparisonDesign> {
    if design.is_connected() {
        Ok(design)
    } else {
        Err(Error::Disconnected)
    }
}

fn expander_side(d: usize) -> Option<usize> {
    let q = (d as f64).sqrt().round() as usize;
    (q * q == d && is_prime(q)).then_some(q)
}

fn is_prime(q: usize) -> bool {
    q >= 2 && (2..).take_while(|p| p * p <= q).all(|p| !q.is_multiple_of(p))
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }

    fn components(&mut self) -> usize {
        (0..self.parent.len()).filter(|&i| self.find(i) == i).count()
    }
}
