//! Brute-force enumeration of the full sample space on tiny trees.
//!
//! Every non-root vertex draws one atom of a finite law; `X(ρ) ≡ 1`. An
//! outcome is a mixed-radix integer whose digits are the atom indices of the
//! non-root vertices taken in breadth-first order, most significant first.
//! With that ordering the outcomes sharing an assignment on depths `≤ m` form
//! one contiguous block, so conditioning on `ℱ_m` is a block average.
//!
//! Everything is generic over [`Scalar`]: with `BigRational` the identities
//! below hold exactly.

use rayon::prelude::*;

use crate::error::{CascadeError, Result};
use crate::numeric::{CompensatedSum, DiscreteLaw, Scalar};
use crate::tree::{SparseTree, SparseWeights};
use crate::weight_model::WeightDistribution;

pub const DEFAULT_OUTCOME_CAP: usize = 2_000_000;

const CHUNK: usize = 1 << 14;

/// The product space of one atom choice per non-root vertex.
#[derive(Debug, Clone)]
pub struct EnumeratedSpace<T: Scalar> {
    tree: SparseTree,
    law: DiscreteLaw<T>,
    /// Non-root vertices sorted by depth, ties by index.
    order: Vec<usize>,
    /// `prefix[m]` = number of non-root vertices of depth `≤ m`.
    prefix: Vec<usize>,
    outcomes: usize,
}

impl<T: Scalar> EnumeratedSpace<T> {
    pub fn new(tree: SparseTree, law: DiscreteLaw<T>) -> Result<Self> {
        Self::with_cap(tree, law, DEFAULT_OUTCOME_CAP)
    }

    pub fn with_cap(tree: SparseTree, law: DiscreteLaw<T>, cap: usize) -> Result<Self> {
        let free = tree.len() - 1;
        let outcomes = u32::try_from(free)
            .ok()
            .and_then(|e| law.len().checked_pow(e))
            .filter(|&c| c <= cap)
            .ok_or_else(|| {
                CascadeError::ResourceLimit(format!(
                    "{} atoms over {free} vertices exceeds the {cap}-outcome cap",
                    law.len()
                ))
            })?;
        let mut order: Vec<usize> = (1..tree.len()).collect();
        order.sort_by_key(|&v| (tree.depth(v), v));
        let depth = tree.max_depth();
        let prefix = (0..=depth)
            .map(|m| order.iter().filter(|&&v| tree.depth(v) <= m).count())
            .collect();
        Ok(EnumeratedSpace {
            tree,
            law,
            order,
            prefix,
            outcomes,
        })
    }

    pub fn tree(&self) -> &SparseTree {
        &self.tree
    }

    pub fn law(&self) -> &DiscreteLaw<T> {
        &self.law
    }

    pub fn outcome_count(&self) -> usize {
        self.outcomes
    }

    /// Atom index per vertex (entry 0, the root, is unused and set to 0).
    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let k = self.law.len();
        let mut digits = vec![0; self.tree.len()];
        for &v in self.order.iter().rev() {
            digits[v] = index % k;
            index /= k;
        }
        digits
    }

    pub fn probability(&self, outcome: &[usize]) -> T {
        let probs = self.law.probs();
        (1..self.tree.len()).fold(T::one(), |acc, v| acc * probs[outcome[v]].clone())
    }

    pub fn probabilities(&self) -> Vec<T> {
        (0..self.outcomes).map(|i| self.probability(&self.decode(i))).collect()
    }

    /// `Π_{u ⪯ v} f(X(u))` for every vertex `v`.
    fn path_products(&self, outcome: &[usize], f: &impl Fn(&T) -> T) -> Vec<T> {
        let atoms = self.law.atoms();
        let mut prod = vec![T::one(); self.tree.len()];
        for v in 1..self.tree.len() {
            let p = self.tree.parent(v).expect("non-root");
            prod[v] = prod[p].clone() * f(&atoms[outcome[v]]);
        }
        prod
    }

    fn check_weights(&self, weights: &SparseWeights<T>) -> Result<()> {
        if weights.tree() != &self.tree {
            return Err(CascadeError::InvalidArgument(
                "weights live on a different tree".into(),
            ));
        }
        Ok(())
    }

    /// `Θ(f(X), α)` at one outcome.
    pub fn theta_value_mapped(&self, weights: &SparseWeights<T>, outcome: &[usize], f: impl Fn(&T) -> T) -> T {
        let prod = self.path_products(outcome, &f);
        prod.into_iter()
            .zip(weights.alpha())
            .fold(T::zero(), |acc, (p, a)| acc + p * a.clone())
    }

    /// `Θ(X, α) = Σ_v α(v) Π_{u ⪯ v} X(u)` at one outcome.
    pub fn theta_value(&self, weights: &SparseWeights<T>, outcome: &[usize]) -> T {
        self.theta_value_mapped(weights, outcome, T::clone)
    }

    /// `Θ(f(X), α)` over all outcomes, in index order.
    pub fn theta_values_mapped(&self, weights: &SparseWeights<T>, f: impl Fn(&T) -> T) -> Result<Vec<T>> {
        self.check_weights(weights)?;
        Ok((0..self.outcomes)
            .map(|i| self.theta_value_mapped(weights, &self.decode(i), &f))
            .collect())
    }

    pub fn theta_values(&self, weights: &SparseWeights<T>) -> Result<Vec<T>> {
        self.theta_values_mapped(weights, T::clone)
    }

    /// `E[Θ^k]` for integer `k`, exact in rational mode.
    pub fn int_moment(&self, weights: &SparseWeights<T>, k: usize) -> Result<T> {
        let theta = self.theta_values(weights)?;
        Ok(self.expectation(&theta.iter().map(|t| t.powi(k)).collect::<Vec<_>>()))
    }

    pub fn expectation(&self, values: &[T]) -> T {
        expectation_with(&self.probabilities(), values)
    }

    /// `E[Y | ℱ_m]` as a per-outcome vector; `m` past the tree depth returns
    /// `Y` itself.
    pub fn conditional_expectation(&self, values: &[T], m: usize) -> Vec<T> {
        self.conditional_expectation_with(&self.probabilities(), values, m)
    }

    fn conditional_expectation_with(&self, probs: &[T], values: &[T], m: usize) -> Vec<T> {
        let fixed = self.prefix.get(m).copied().unwrap_or(self.order.len());
        let block = self.law.len().pow((self.order.len() - fixed) as u32);
        if block == 1 {
            return values.to_vec();
        }
        let mut out = Vec::with_capacity(self.outcomes);
        for start in (0..self.outcomes).step_by(block) {
            let range = start..start + block;
            let mass = probs[range.clone()].iter().cloned().fold(T::zero(), |a, b| a + b);
            let weighted = range
                .clone()
                .fold(T::zero(), |acc, i| acc + probs[i].clone() * values[i].clone());
            let avg = weighted / mass;
            out.extend(std::iter::repeat(avg).take(block));
        }
        out
    }

    /// Level martingale of `M = Θ(X, α)` and its square function.
    pub fn martingale_decomposition(&self, weights: &SparseWeights<T>) -> Result<MartingaleDecomposition<T>> {
        self.check_weights(weights)?;
        let theta = self.theta_values(weights)?;
        let probs = self.probabilities();
        let depth = self.tree.max_depth();
        let levels: Vec<Vec<T>> = (0..=depth)
            .map(|m| self.conditional_expectation_with(&probs, &theta, m))
            .collect();
        let increments: Vec<Vec<T>> = (1..=depth)
            .map(|m| {
                levels[m]
                    .iter()
                    .zip(&levels[m - 1])
                    .map(|(a, b)| a.clone() - b.clone())
                    .collect()
            })
            .collect();
        let mut square_function: Vec<T> = levels[0].iter().map(|m0| m0.clone() * m0.clone()).collect();
        for (m, d) in increments.iter().enumerate() {
            let sq: Vec<T> = d.iter().map(|x| x.clone() * x.clone()).collect();
            let cond = self.conditional_expectation_with(&probs, &sq, m);
            for (s, c) in square_function.iter_mut().zip(cond) {
                *s = s.clone() + c;
            }
        }
        let closed_form = (1..=depth)
            .map(|m| self.closed_form_increment(weights, m))
            .collect();
        Ok(MartingaleDecomposition {
            probabilities: probs,
            theta,
            levels,
            increments,
            closed_form,
            square_function,
        })
    }

    /// `D_m = Σ_{v ∈ ℒ_m} (X(v) − E X) Π_{u ≺ v} X(u) κ(v)` per outcome.
    pub fn closed_form_increment(&self, weights: &SparseWeights<T>, m: usize) -> Vec<T> {
        let mean = self.law.mean();
        let kappa = weights.kappa_with(&mean);
        let atoms = self.law.atoms();
        let level: Vec<usize> = (1..self.tree.len()).filter(|&v| self.tree.depth(v) == m).collect();
        (0..self.outcomes)
            .map(|i| {
                let outcome = self.decode(i);
                let prod = self.path_products(&outcome, &T::clone);
                level.iter().fold(T::zero(), |acc, &v| {
                    let p = self.tree.parent(v).expect("non-root");
                    let centered = atoms[outcome[v]].clone() - mean.clone();
                    acc + centered * prod[p].clone() * kappa.get(v).clone()
                })
            })
            .collect()
    }
}

impl EnumeratedSpace<f64> {
    pub fn from_distribution(tree: SparseTree, dist: &WeightDistribution) -> Result<Self> {
        Self::new(tree, dist.to_law())
    }

    /// `E[Θ^q]` for real `q > 0`. Chunks are summed in parallel and combined
    /// in index order, so the result does not depend on the thread count.
    pub fn exact_moment(&self, weights: &SparseWeights<f64>, q: f64) -> Result<f64> {
        if !(q > 0.0) {
            return Err(CascadeError::InvalidArgument(format!("exponent must be positive, got {q}")));
        }
        self.check_weights(weights)?;
        let chunks: Vec<f64> = (0..self.outcomes.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let end = ((c + 1) * CHUNK).min(self.outcomes);
                (c * CHUNK..end)
                    .map(|i| {
                        let outcome = self.decode(i);
                        self.probability(&outcome) * self.theta_value(weights, &outcome).powf(q)
                    })
                    .collect::<CompensatedSum>()
                    .value()
            })
            .collect();
        Ok(chunks.into_iter().collect::<CompensatedSum>().value())
    }
}

/// `E[Θ(X, α)^q]` by full enumeration.
pub fn exact_moment_by_enumeration(space: &EnumeratedSpace<f64>, weights: &SparseWeights<f64>, q: f64) -> Result<f64> {
    space.exact_moment(weights, q)
}

/// `Σ_i p_i v_i`.
pub fn expectation_with<T: Scalar>(probs: &[T], values: &[T]) -> T {
    probs
        .iter()
        .zip(values)
        .fold(T::zero(), |acc, (p, v)| acc + p.clone() * v.clone())
}

/// Per-outcome martingale data; all vectors are indexed by outcome.
#[derive(Debug, Clone)]
pub struct MartingaleDecomposition<T> {
    pub probabilities: Vec<T>,
    pub theta: Vec<T>,
    /// `M_m` for `m = 0..=depth`.
    pub levels: Vec<Vec<T>>,
    /// `D_m = M_m − M_{m−1}` for `m = 1..=depth` (entry `m − 1`).
    pub increments: Vec<Vec<T>>,
    /// Closed-form increments, same layout as `increments`.
    pub closed_form: Vec<Vec<T>>,
    /// `s(M)² = M_0² + Σ_m E[D_m² | ℱ_{m−1}]`.
    pub square_function: Vec<T>,
}
