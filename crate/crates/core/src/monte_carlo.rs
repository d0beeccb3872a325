//! Sampling estimates of `E[Y_n^q]` and `E[Θ^q]` for real `q`.
//!
//! Sample `i` draws from its own ChaCha stream, selected by `(seed, i)`, so
//! an estimate is a pure function of the configuration no matter how rayon
//! schedules the samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{CascadeError, Result};
use crate::exact_moments::fmt_num;
use crate::numeric::CompensatedSum;
use crate::tree::SparseWeights;
use crate::weight_model::WeightDistribution;

pub const DEFAULT_BATCHES: usize = 32;
pub const DEFAULT_NODE_CAP: u64 = 1 << 20;
/// Share of the total carried by one sample above which the interval is
/// flagged as untrustworthy.
pub const HEAVY_TAIL_SHARE: f64 = 0.1;

pub const CSV_HEADER: &str = "n,q,mean,stderr,ci_lo,ci_hi,max_share,samples,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub seed: u64,
    pub samples: usize,
    pub batches: usize,
    pub n: usize,
    pub q: f64,
    pub base: u32,
    pub dist: WeightDistribution,
    pub node_cap: u64,
}

impl McConfig {
    pub fn new(base: u32, dist: WeightDistribution, n: usize, q: f64, samples: usize, seed: u64) -> Self {
        McConfig {
            seed,
            samples,
            batches: DEFAULT_BATCHES,
            n,
            q,
            base,
            dist,
            node_cap: DEFAULT_NODE_CAP,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.base < 2 {
            return Err(CascadeError::InvalidArgument("branching number must be ≥ 2".into()));
        }
        if !(self.q > 0.0) || !self.q.is_finite() {
            return Err(CascadeError::InvalidArgument(format!("exponent must be positive, got {}", self.q)));
        }
        if self.batches < 2 || self.samples < self.batches {
            return Err(CascadeError::InvalidArgument(format!(
                "need samples ≥ batches ≥ 2, got {} samples in {} batches",
                self.samples, self.batches
            )));
        }
        check_node_budget(self.base, self.n, self.node_cap)
    }
}

fn check_node_budget(base: u32, n: usize, cap: u64) -> Result<()> {
    let leaves = u32::try_from(n).ok().and_then(|e| (base as u64).checked_pow(e));
    match leaves {
        Some(l) if l <= cap => Ok(()),
        _ => Err(CascadeError::ResourceLimit(format!(
            "b^n = {base}^{n} exceeds the {cap}-node budget per sample"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
    pub max_share: f64,
    pub samples_used: usize,
    pub heavy_tail_warning: bool,
}

impl McEstimate {
    /// One row under [`CSV_HEADER`].
    pub fn csv_row(&self, cfg: &McConfig) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            cfg.n,
            fmt_num(cfg.q),
            fmt_num(self.mean),
            fmt_num(self.stderr),
            fmt_num(self.ci95.0),
            fmt_num(self.ci95.1),
            fmt_num(self.max_share),
            self.samples_used,
            cfg.seed
        )
    }
}

/// Inverse-CDF draw from a finite law.
#[inline]
fn draw<R: Rng>(atoms: &[f64], cumulative: &[f64], rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let idx = cumulative.iter().position(|&c| u < c).unwrap_or(atoms.len() - 1);
    atoms[idx]
}

fn cumulative(dist: &WeightDistribution) -> Vec<f64> {
    let mut acc = 0.0;
    dist.probs()
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

/// The per-sample generator for `(seed, index)`.
pub fn sample_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One realization of `Y_n`: depth-first over the `b`-adic tree carrying the
/// running product, skipping subtrees whose product is already zero.
pub fn sample_yn<R: Rng>(base: u32, dist: &WeightDistribution, n: usize, rng: &mut R) -> f64 {
    let atoms = dist.atoms();
    let cum = cumulative(dist);
    let mut leaves = CompensatedSum::new();

    fn visit<R: Rng>(
        depth: usize,
        prod: f64,
        n: usize,
        base: u32,
        atoms: &[f64],
        cum: &[f64],
        rng: &mut R,
        leaves: &mut CompensatedSum,
    ) {
        if depth == n {
            leaves.add(prod);
            return;
        }
        for _ in 0..base {
            let p = prod * draw(atoms, cum, rng);
            if p != 0.0 {
                visit(depth + 1, p, n, base, atoms, cum, rng, leaves);
            }
        }
    }

    visit(0, 1.0, n, base, atoms, &cum, rng, &mut leaves);
    leaves.value() / (base as f64).powi(n as i32)
}

/// One realization of `Θ(X, α)` on an explicit tree.
pub fn sample_theta<R: Rng>(weights: &SparseWeights<f64>, dist: &WeightDistribution, rng: &mut R) -> f64 {
    let atoms = dist.atoms();
    let cum = cumulative(dist);
    let tree = weights.tree();
    let mut prod = vec![1.0; tree.len()];
    let mut sum = CompensatedSum::new();
    sum.add(*weights.get(0));
    for v in 1..tree.len() {
        let p = tree.parent(v).expect("non-root");
        prod[v] = prod[p] * draw(atoms, &cum, rng);
        sum.add(weights.get(v) * prod[v]);
    }
    sum.value()
}

/// `E[Y_n^q]` with batch-means error bars.
pub fn estimate_moment(cfg: &McConfig) -> Result<McEstimate> {
    cfg.validate()?;
    let values: Vec<f64> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_stream(cfg.seed, i as u64);
            sample_yn(cfg.base, &cfg.dist, cfg.n, &mut rng).powf(cfg.q)
        })
        .collect();
    Ok(summarize(&values, cfg.batches))
}

/// `E[Θ(X, α)^q]` with the same stream layout as [`estimate_moment`].
pub fn estimate_theta_moment(
    weights: &SparseWeights<f64>,
    dist: &WeightDistribution,
    q: f64,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if samples < DEFAULT_BATCHES {
        return Err(CascadeError::InvalidArgument(format!(
            "need at least {DEFAULT_BATCHES} samples, got {samples}"
        )));
    }
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_stream(seed, i as u64);
            sample_theta(weights, dist, &mut rng).powf(q)
        })
        .collect();
    Ok(summarize(&values, DEFAULT_BATCHES))
}

/// Batch means over contiguous index ranges; the first `len % batches`
/// batches take one extra sample.
pub fn summarize(values: &[f64], batches: usize) -> McEstimate {
    let len = values.len();
    let total: CompensatedSum = values.iter().copied().collect();
    let total = total.value();
    let mean = total / len as f64;

    let (size, extra) = (len / batches, len % batches);
    let mut means = Vec::with_capacity(batches);
    let mut start = 0;
    for j in 0..batches {
        let end = start + size + usize::from(j < extra);
        let s: CompensatedSum = values[start..end].iter().copied().collect();
        means.push(s.value() / (end - start) as f64);
        start = end;
    }
    let b = batches as f64;
    let spread: CompensatedSum = means.iter().map(|m| (m - mean) * (m - mean)).collect();
    let stderr = (spread.value() / (b - 1.0) / b).sqrt();
    let t = StudentsT::new(0.0, 1.0, b - 1.0)
        .expect("at least two batches")
        .inverse_cdf(0.975);
    let max = values.iter().copied().fold(0.0, f64::max);
    let max_share = if total > 0.0 { max / total } else { 0.0 };
    McEstimate {
        mean,
        stderr,
        ci95: (mean - t * stderr, mean + t * stderr),
        max_share,
        samples_used: len,
        heavy_tail_warning: max_share > HEAVY_TAIL_SHARE,
    }
}
