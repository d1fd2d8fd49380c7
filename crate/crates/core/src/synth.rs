//! Ground-truth score generation and observation sampling.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::graph::{build_topology, spectrum, ComparisonDesign, HyperDesign, SpectralSummary, TopologyKind};
use crate::models::{softmax, LinkFunction, PlackettLuce};
use crate::seeds::rng_from_seed;

const SUM_TOLERANCE: f64 = 1e-9;
const BOUND_TOLERANCE: f64 = 1e-12;

/// Score vector in `W_B = { w : <1, w> = 0, ||w||_inf <= B }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityVector {
    values: Vec<f64>,
    bound: f64,
}

impl QualityVector {
    pub fn new(values: Vec<f64>, bound: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidDimension(format!("need d >= 2, got {}", values.len())));
        }
        let sum: f64 = values.iter().sum();
        if sum.abs() > SUM_TOLERANCE {
            return Err(Error::Infeasible(format!("scores sum to {sum:e}")));
        }
        let inf = inf_norm(&values);
        if !(inf <= bound + BOUND_TOLERANCE) {
            return Err(Error::Infeasible(format!("||w||_inf = {inf} exceeds B = {bound}")));
        }
        Ok(QualityVector { values, bound })
    }

    /// All-zero scores.
    pub fn zeros(d: usize, bound: f64) -> Result<Self> {
        Self::new(vec![0.0; d], bound)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn d(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Which eigen-weighting maps a sign vector `z` to scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PackingVariant {
    /// `U^T Lambda^dagger z`, as in the synthetic topology experiments.
    #[default]
    Recipe,
    /// `U^T sqrt(Lambda^dagger) z`, as in the lower-bound construction.
    Proof,
}

/// Ground-truth generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeneratorKind {
    Gaussian,
    Uniform,
    Packing { topology: TopologyKind, variant: PackingVariant },
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorKind::Gaussian => write!(f, "gaussian"),
            GeneratorKind::Uniform => write!(f, "uniform"),
            GeneratorKind::Packing { topology, variant: PackingVariant::Recipe } => {
                write!(f, "packing@{topology}")
            }
            GeneratorKind::Packing { topology, variant: PackingVariant::Proof } => {
                write!(f, "packing@{topology}@proof")
            }
        }
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    /// `gaussian`, `uniform`, `packing@<topology>` or `packing@<topology>@proof`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let mut parts = s.split('@');
        match parts.next() {
            Some("gaussian") => Ok(GeneratorKind::Gaussian),
            Some("uniform") => Ok(GeneratorKind::Uniform),
            Some("packing") => {
                let topology = parts
                    .next()
                    .ok_or_else(|| Error::Parse("packing generator needs a topology".into()))?
                    .parse()?;
                let variant = match parts.next() {
                    None | Some("recipe") => PackingVariant::Recipe,
                    Some("proof") => PackingVariant::Proof,
                    Some(other) => return Err(Error::Parse(format!("unknown packing variant {other:?}"))),
                };
                Ok(GeneratorKind::Packing { topology, variant })
            }
            _ => Err(Error::Parse(format!("unknown generator {s:?}"))),
        }
    }
}

/// Shifts to mean zero, then scales so that `||w||_inf = B`.
pub fn normalize_to_bound(raw: &[f64], bound: f64) -> Result<QualityVector> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::InvalidParameter(format!("bound must be positive, got {bound}")));
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let centered: Vec<f64> = raw.iter().map(|x| x - mean).collect();
    let scale = inf_norm(&centered);
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter("raw draw is constant; cannot normalize".into()));
    }
    let values = centered.into_iter().map(|x| (x * bound / scale).clamp(-bound, bound)).collect();
    QualityVector::new(values, bound)
}

/// Draws a ground-truth score vector.
pub fn gen_quality(kind: GeneratorKind, d: usize, bound: f64, seed: u64) -> Result<QualityVector> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!("d = {d} < 2")));
    }
    let mut rng = rng_from_seed(seed);
    let raw: Vec<f64> = match kind {
        GeneratorKind::Gaussian => (0..d).map(|_| rng.sample(StandardNormal)).collect(),
        GeneratorKind::Uniform => (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        GeneratorKind::Packing { topology, variant } => {
            let design = build_topology(topology, d)?;
            let summary = spectrum(&design)?;
            return gen_packing_quality(&summary, variant, bound, seed);
        }
    };
    normalize_to_bound(&raw, bound)
}

/// Sign vector with 0 first, `floor(d/2)` entries of -1 at random positions, +1 elsewhere.
pub fn packing_sign_vector(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let mut tail: Vec<f64> = (1..d).map(|i| if i <= d / 2 { -1.0 } else { 1.0 }).collect();
    tail.shuffle(&mut rng);
    std::iter::once(0.0).chain(tail).collect()
}

/// Maps `z` through `U^T M z` with `M = Lambda^dagger` or `sqrt(Lambda^dagger)`.
pub fn packing_map(summary: &SpectralSummary, variant: PackingVariant, z: &[f64]) -> Vec<f64> {
    let d = summary.d();
    let weights: Vec<f64> = summary
        .pinv_eigenvalues()
        .into_iter()
        .map(|p| match variant {
            PackingVariant::Recipe => p,
            PackingVariant::Proof => p.sqrt(),
        })
        .collect();
    let v = &summary.eigenvectors;
    (0..d)
        .map(|r| (0..d).map(|i| v[(r, i)] * weights[i] * z[i]).sum())
        .collect()
}

/// Packing-based ground truth on an arbitrary connected design.
pub fn gen_packing_quality(
    summary: &SpectralSummary,
    variant: PackingVariant,
    bound: f64,
    seed: u64,
) -> Result<QualityVector> {
    if !summary.is_connected() {
        return Err(Error::Disconnected);
    }
    let z = packing_sign_vector(summary.d(), seed);
    normalize_to_bound(&packing_map(summary, variant, &z), bound)
}

/// Designs whose entries can be sampled.
pub trait SamplingDesign {
    fn entry_weights(&self) -> Vec<f64>;
}

impl SamplingDesign for ComparisonDesign {
    fn entry_weights(&self) -> Vec<f64> {
        self.weights()
    }
}

impl SamplingDesign for HyperDesign {
    fn entry_weights(&self) -> Vec<f64> {
        vec![1.0; self.subsets().len()]
    }
}

/// `n` i.i.d. design entries drawn with probability proportional to their weights.
pub fn sample_comparisons<D: SamplingDesign + ?Sized>(design: &D, n: usize, seed: u64) -> Result<Vec<usize>> {
    sample_entries(&design.entry_weights(), n, seed)
}

pub fn sample_entries(weights: &[f64], n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if weights.is_empty() {
        return Err(Error::InvalidParameter("design has no entries".into()));
    }
    if weights.len() == 1 {
        return Ok(vec![0; n]);
    }
    let dist = WeightedIndex::new(weights)
        .map_err(|e| Error::InvalidParameter(format!("bad entry weights: {e}")))?;
    let mut rng = rng_from_seed(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Deterministic allocation of `n` samples in proportion to `weights`
/// (largest remainder), interleaved round-robin.
pub fn even_allocation(weights: &[f64], n: usize) -> Result<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || !(total > 0.0) {
        return Err(Error::InvalidParameter("design has no positive weights".into()));
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut short = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if short == 0 {
            break;
        }
        counts[i] += 1;
        short -= 1;
    }
    let mut out = Vec::with_capacity(n);
    let mut round = 0;
    while out.len() < n {
        for (i, &c) in counts.iter().enumerate() {
            if c > round {
                out.push(i);
            }
        }
        round += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    OrdinalPair,
    Mwise,
    CardinalItem,
    CardinalPair,
}

impl BatchKind {
    pub fn name(self) -> &'static str {
        match self {
            BatchKind::OrdinalPair => "ordinal_pair",
            BatchKind::Mwise => "mwise",
            BatchKind::CardinalItem => "cardinal_item",
            BatchKind::CardinalPair => "cardinal_pair",
        }
    }
}

impl FromStr for BatchKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ordinal_pair" => Ok(BatchKind::OrdinalPair),
            "mwise" => Ok(BatchKind::Mwise),
            "cardinal_item" => Ok(BatchKind::CardinalItem),
            "cardinal_pair" => Ok(BatchKind::CardinalPair),
            other => Err(Error::Parse(format!("unknown batch kind {other:?}"))),
        }
    }
}

/// One observation: a design entry and its outcome. Outcomes are `+1/-1` for
/// ordinal pairs (`+1` means the first item of the edge won), a 0-based winner
/// position for m-wise samples, and a real number for cardinal samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub entry: usize,
    pub outcome: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationBatch {
    pub kind: BatchKind,
    pub d: usize,
    pub seed: u64,
    pub records: Vec<Record>,
}

impl ObservationBatch {
    pub fn new(kind: BatchKind, d: usize, seed: u64, records: Vec<Record>) -> Result<Self> {
        for r in &records {
            let ok = match kind {
                BatchKind::OrdinalPair => r.outcome == 1.0 || r.outcome == -1.0,
                BatchKind::Mwise => r.outcome >= 0.0 && r.outcome.fract() == 0.0,
                BatchKind::CardinalItem => r.outcome.is_finite() && r.entry < d,
                BatchKind::CardinalPair => r.outcome.is_finite(),
            };
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "outcome {} invalid for {} record at entry {}",
                    r.outcome,
                    kind.name(),
                    r.entry
                )));
            }
        }
        Ok(ObservationBatch { kind, d, seed, records })
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Writes the batch as CSV: a `#` header line with kind, d, n, seed and the
    /// model JSON, then `sample_index,entry_index,outcome` rows.
    pub fn write_csv<W: Write>(&self, mut w: W, model_json: &str) -> Result<()> {
        writeln!(
            w,
            "# kind={},d={},n={},seed={},model={}",
            self.kind.name(),
            self.d,
            self.n(),
            self.seed,
            model_json
        )?;
        writeln!(w, "sample_index,entry_index,outcome")?;
        for (i, r) in self.records.iter().enumerate() {
            writeln!(w, "{i},{},{}", r.entry, r.outcome)?;
        }
        Ok(())
    }

    /// Parses the format written by [`ObservationBatch::write_csv`]. Returns the
    /// batch and the model JSON from the header.
    pub fn read_csv<R: BufRead>(r: R) -> Result<(Self, String)> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty batch file".into()))??;
        let header = header
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse("missing batch header".into()))?;
        let (fields, model) = header
            .split_once(",model=")
            .ok_or_else(|| Error::Parse("header lacks model".into()))?;
        let mut kind = None;
        let mut d = None;
        let mut seed = None;
        for kv in fields.split(',') {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse(format!("bad header field {kv:?}")))?;
            match k {
                "kind" => kind = Some(v.parse::<BatchKind>()?),
                "d" => d = v.parse().ok(),
                "seed" => seed = v.parse().ok(),
                _ => {}
            }
        }
        let columns = lines.next().ok_or_else(|| Error::Parse("missing column header".into()))??;
        if columns.trim() != "sample_index,entry_index,outcome" {
            return Err(Error::Parse(format!("unexpected columns {columns:?}")));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let _ = cols.next();
            let entry = cols.next().and_then(|x| x.trim().parse().ok());
            let outcome = cols.next().and_then(|x| x.trim().parse().ok());
            match (entry, outcome) {
                (Some(entry), Some(outcome)) => records.push(Record { entry, outcome }),
                _ => return Err(Error::Parse(format!("bad batch row {line:?}"))),
            }
        }
        let kind = kind.ok_or_else(|| Error::Parse("header lacks kind".into()))?;
        let d = d.ok_or_else(|| Error::Parse("header lacks d".into()))?;
        let seed = seed.ok_or_else(|| Error::Parse("header lacks seed".into()))?;
        Ok((ObservationBatch::new(kind, d, seed, records)?, model.to_string()))
    }
}

/// Observation models for [`sample_outcomes`].
#[derive(Debug, Clone)]
pub enum OutcomeModel {
    Ordinal(LinkFunction),
    Mwise(PlackettLuce),
    CardinalItem { sigma: f64 },
    CardinalPair { sigma: f64 },
}

/// What the comparison indices refer to.
#[derive(Debug, Clone, Copy)]
pub enum DesignRef<'a> {
    Pairwise(&'a ComparisonDesign),
    Hyper(&'a HyperDesign),
    /// Single-item measurements over `d` items.
    Items(usize),
}

impl DesignRef<'_> {
    fn d(&self) -> usize {
        match self {
            DesignRef::Pairwise(p) => p.d(),
            DesignRef::Hyper(h) => h.d(),
            DesignRef::Items(d) => *d,
        }
    }

    fn entries(&self) -> usize {
        match self {
            DesignRef::Pairwise(p) => p.edges().len(),
            DesignRef::Hyper(h) => h.subsets().len(),
            DesignRef::Items(d) => *d,
        }
    }
}

/// Draws one outcome per comparison index.
pub fn sample_outcomes(
    model: &OutcomeModel,
    w: &QualityVector,
    design: DesignRef<'_>,
    comparisons: &[usize],
    seed: u64,
) -> Result<ObservationBatch> {
    check_len(design.d(), w.d())?;
    let entries = design.entries();
    if let Some(&bad) = comparisons.iter().find(|&&c| c >= entries) {
        return Err(Error::InvalidParameter(format!("comparison index {bad} out of range ({entries} entries)")));
    }
    let w = w.values();
    let mut rng = rng_from_seed(seed);
    let records: Vec<Record> = match (model, design) {
        (OutcomeModel::Ordinal(link), DesignRef::Pairwise(p)) => {
            let edges = p.edges();
            comparisons
                .iter()
                .map(|&c| {
                    let e = edges[c];
                    let prob = link.cdf((w[e.j] - w[e.k]) / link.sigma());
                    let y = if rng.random::<f64>() < prob { 1.0 } else { -1.0 };
                    Record { entry: c, outcome: y }
                })
                .collect()
        }
        (OutcomeModel::Mwise(pl), DesignRef::Hyper(h)) => {
            if pl.m != h.m() {
                return Err(Error::KindMismatch(format!("link has m = {}, design has m = {}", pl.m, h.m())));
            }
            let subsets = h.subsets();
            comparisons
                .iter()
                .map(|&c| {
                    let x: Vec<f64> = subsets[c].iter().map(|&i| w[i]).collect();
                    let probs = softmax(&x);
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut winner = probs.len() - 1;
                    for (j, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            winner = j;
                            break;
                        }
                    }
                    Record { entry: c, outcome: winner as f64 }
                })
                .collect()
        }
        (OutcomeModel::CardinalItem { sigma }, DesignRef::Items(_)) => comparisons
            .iter()
            .map(|&c| {
                let noise: f64 = rng.sample(StandardNormal);
                Record { entry: c, outcome: w[c] + sigma * noise }
            })
            .collect(),
        (OutcomeModel::CardinalPair { sigma }, DesignRef::Pairwise(p)) => {
            let edges = p.edges();
            comparisons
                .iter()
                .map(|&c| {
                    let e = edges[c];
                    let noise: f64 = rng.sample(StandardNormal);
                    Record { entry: c, outcome: w[e.j] - w[e.k] + sigma * noise }
                })
                .collect()
        }
        _ => return Err(Error::KindMismatch("model and design kinds do not match".into())),
    };
    let kind = match model {
        OutcomeModel::Ordinal(_) => BatchKind::OrdinalPair,
        OutcomeModel::Mwise(_) => BatchKind::Mwise,
        OutcomeModel::CardinalItem { .. } => BatchKind::CardinalItem,
        OutcomeModel::CardinalPair { .. } => BatchKind::CardinalPair,
    };
    ObservationBatch::new(kind, design.d(), seed, records)
}
