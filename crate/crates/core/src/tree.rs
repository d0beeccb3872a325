//! Finite rooted trees and non-negative weights on them.
//!
//! Two representations share the [`TreeWeight`] interface:
//! * [`SparseWeights`]: an explicit weight per vertex of an arbitrary finite
//!   [`SparseTree`];
//! * [`LevelProfile`]: a level-symmetric weight `α(v) = a_{d(v, ρ)}` on the
//!   regular `b`-adic tree, stored as log-coefficients so that profiles such
//!   as `b^{-2k}` stay representable at depths of several thousand.

use std::fmt::Write as _;

use crate::error::{CascadeError, Result};
use crate::numeric::{ln_nonneg, logaddexp, Scalar};

/// Vertex cap for materialized regular trees.
pub const DEFAULT_VERTEX_CAP: usize = 1 << 24;

/// A finite rooted tree. Vertices are indexed in lexicographic order of their
/// child-index paths, so the root is vertex 0 and every parent precedes its
/// children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseTree {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    label: Vec<u32>,
}

impl SparseTree {
    pub fn single_root() -> Self {
        SparseTree {
            parent: vec![None],
            children: vec![Vec::new()],
            depth: vec![0],
            label: vec![0],
        }
    }

    /// Builds a tree from child-index paths (the root is the empty path).
    /// Every non-root path's parent must be present.
    pub fn from_paths(paths: &[Vec<u32>]) -> Result<Self> {
        let mut sorted: Vec<&Vec<u32>> = paths.iter().collect();
        sorted.sort();
        sorted.dedup();
        if sorted.first().map_or(true, |p| !p.is_empty()) {
            return Err(CascadeError::InvalidArgument("tree has no root (empty path)".into()));
        }
        let mut tree = SparseTree::single_root();
        // In lexicographic order the parent of a path is the nearest earlier
        // path that is a prefix of it; track the current root-to-vertex chain.
        let mut chain: Vec<usize> = vec![0];
        for path in sorted.iter().skip(1) {
            while tree.depth[*chain.last().unwrap()] + 1 > path.len() {
                chain.pop();
            }
            let top = *chain.last().unwrap();
            let top_path = tree.path(top);
            if top_path.len() + 1 != path.len() || top_path[..] != path[..path.len() - 1] {
                return Err(CascadeError::InvalidArgument(format!(
                    "vertex {} has no parent in the tree",
                    format_path(path)
                )));
            }
            let v = tree.push_child(top, *path.last().unwrap());
            chain.push(v);
        }
        Ok(tree)
    }

    /// The regular `b`-adic tree truncated at `depth`.
    pub fn regular(base: u32, depth: usize, cap: usize) -> Result<Self> {
        if base < 1 {
            return Err(CascadeError::InvalidArgument("branching number must be ≥ 1".into()));
        }
        let count = regular_vertex_count(base, depth)
            .filter(|&c| c <= cap)
            .ok_or_else(|| {
                CascadeError::ResourceLimit(format!(
                    "regular tree with b = {base}, depth = {depth} exceeds {cap} vertices"
                ))
            })?;
        let mut tree = SparseTree {
            parent: Vec::with_capacity(count),
            children: Vec::with_capacity(count),
            depth: Vec::with_capacity(count),
            label: Vec::with_capacity(count),
        };
        tree.parent.push(None);
        tree.children.push(Vec::new());
        tree.depth.push(0);
        tree.label.push(0);
        // Explicit-stack preorder keeps lexicographic path order.
        let mut stack: Vec<(usize, u32)> = vec![(0, 0)];
        while let Some((v, next)) = stack.pop() {
            if tree.depth[v] == depth || next == base {
                continue;
            }
            stack.push((v, next + 1));
            let c = tree.push_child(v, next);
            stack.push((c, 0));
        }
        Ok(tree)
    }

    fn push_child(&mut self, parent: usize, label: u32) -> usize {
        let v = self.parent.len();
        self.parent.push(Some(parent));
        self.children.push(Vec::new());
        self.depth.push(self.depth[parent] + 1);
        self.label.push(label);
        self.children[parent].push(v);
        v
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn depth(&self, v: usize) -> usize {
        self.depth[v]
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    /// Child-index path from the root to `v`.
    pub fn path(&self, v: usize) -> Vec<u32> {
        let mut path = Vec::with_capacity(self.depth[v]);
        let mut cur = v;
        while let Some(p) = self.parent[cur] {
            path.push(self.label[cur]);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Ancestors of `v` from the root down to and including `v`.
    pub fn ancestry(&self, v: usize) -> Vec<usize> {
        let mut out = vec![v];
        let mut cur = v;
        while let Some(p) = self.parent[cur] {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// Vertices at each depth, in canonical order.
    pub fn levels(&self) -> Vec<Vec<usize>> {
        let mut levels = vec![Vec::new(); self.max_depth() + 1];
        for v in 0..self.len() {
            levels[self.depth[v]].push(v);
        }
        levels
    }
}

fn regular_vertex_count(base: u32, depth: usize) -> Option<usize> {
    let mut total: usize = 0;
    let mut level: usize = 1;
    for d in 0..=depth {
        total = total.checked_add(level)?;
        if d < depth {
            level = level.checked_mul(base as usize)?;
        }
    }
    Some(total)
}

/// `|ℒ_n|` for `n = 0..=max depth`.
pub fn level_sizes(tree: &SparseTree) -> Vec<usize> {
    let mut sizes = vec![0; tree.max_depth() + 1];
    for v in 0..tree.len() {
        sizes[tree.depth(v)] += 1;
    }
    sizes
}

fn format_path(path: &[u32]) -> String {
    path.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("/")
}

/// A weight on an explicit tree; vertices without a stored weight carry 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseWeights<T = f64> {
    tree: SparseTree,
    alpha: Vec<T>,
}

impl<T: Scalar> SparseWeights<T> {
    pub fn new(tree: SparseTree, alpha: Vec<T>) -> Result<Self> {
        if alpha.len() != tree.len() {
            return Err(CascadeError::InvalidArgument(format!(
                "{} weights for {} vertices",
                alpha.len(),
                tree.len()
            )));
        }
        if alpha.iter().any(|a| *a < T::zero()) {
            return Err(CascadeError::InvalidArgument("weights must be non-negative".into()));
        }
        Ok(SparseWeights { tree, alpha })
    }

    /// Weights from `(vertex, value)` pairs; unlisted vertices get 0.
    pub fn from_entries(tree: SparseTree, entries: &[(usize, T)]) -> Result<Self> {
        let mut alpha = vec![T::zero(); tree.len()];
        for (v, a) in entries {
            if *v >= tree.len() {
                return Err(CascadeError::InvalidArgument(format!(
                    "vertex {v} not in tree"
                )));
            }
            alpha[*v] = a.clone();
        }
        Self::new(tree, alpha)
    }

    pub fn tree(&self) -> &SparseTree {
        &self.tree
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn get(&self, v: usize) -> &T {
        &self.alpha[v]
    }

    /// `κ(v) = Σ_{y ⪰ v} (E X)^{d(v,y)} α(y)` by one post-order pass.
    pub fn kappa_with(&self, mean_x: &T) -> SparseWeights<T> {
        let mut kappa = self.alpha.clone();
        for v in (1..self.tree.len()).rev() {
            let p = self.tree.parent(v).expect("non-root vertex");
            let add = mean_x.clone() * kappa[v].clone();
            kappa[p] = kappa[p].clone() + add;
        }
        SparseWeights {
            tree: self.tree.clone(),
            alpha: kappa,
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&T) -> U) -> SparseWeights<U> {
        SparseWeights {
            tree: self.tree.clone(),
            alpha: self.alpha.iter().map(f).collect(),
        }
    }
}

impl SparseWeights<f64> {
    /// Serializes as one `path<TAB>weight` line per vertex (root = empty path).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in 0..self.tree.len() {
            let _ = writeln!(out, "{}\t{}", format_path(&self.tree.path(v)), self.alpha[v]);
        }
        out
    }

    /// Parses the `path<TAB>weight` format. Blank lines and `#` comments are
    /// skipped; every listed vertex's parent must also be listed.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut paths = Vec::new();
        let mut weights = Vec::new();
        let mut offset = 0;
        for (lineno, line) in text.lines().enumerate() {
            let start = offset;
            offset += line.len() + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (path_str, weight_str) = line.split_once('\t').ok_or_else(|| {
                CascadeError::parse(start, format!("line {}: expected `path<TAB>weight`", lineno + 1))
            })?;
            let path = if path_str.trim().is_empty() {
                Vec::new()
            } else {
                path_str
                    .trim()
                    .split('/')
                    .map(|s| s.parse::<u32>())
                    .collect::<std::result::Result<Vec<u32>, _>>()
                    .map_err(|_| {
                        CascadeError::parse(start, format!("line {}: bad path `{path_str}`", lineno + 1))
                    })?
            };
            let weight: f64 = weight_str.trim().parse().map_err(|_| {
                CascadeError::parse(
                    start + path_str.len() + 1,
                    format!("line {}: bad weight `{}`", lineno + 1, weight_str.trim()),
                )
            })?;
            if !(weight >= 0.0 && weight.is_finite()) {
                return Err(CascadeError::parse(
                    start + path_str.len() + 1,
                    format!("line {}: weight must be finite and non-negative", lineno + 1),
                ));
            }
            paths.push(path);
            weights.push(weight);
        }
        let mut seen = paths.clone();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(CascadeError::InvalidArgument("duplicate vertex path".into()));
        }
        let tree = SparseTree::from_paths(&paths)?;
        let mut alpha = vec![0.0; tree.len()];
        let index: std::collections::HashMap<Vec<u32>, usize> =
            (0..tree.len()).map(|v| (tree.path(v), v)).collect();
        for (p, w) in paths.iter().zip(weights) {
            alpha[index[p]] = w;
        }
        SparseWeights::new(tree, alpha)
    }
}

/// Level-symmetric weight on the regular `b`-adic tree: every vertex at depth
/// `k ≤ N` carries `a_k`, deeper vertices carry 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelProfile {
    base: u32,
    ln_coeffs: Vec<f64>,
}

impl LevelProfile {
    pub fn new(base: u32, coeffs: &[f64]) -> Result<Self> {
        if coeffs.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(CascadeError::InvalidArgument(
                "profile coefficients must be finite and non-negative".into(),
            ));
        }
        Self::from_ln(base, coeffs.iter().map(|&a| ln_nonneg(a)).collect())
    }

    /// Profile from `ln a_k` (`-inf` encodes a zero coefficient).
    pub fn from_ln(base: u32, ln_coeffs: Vec<f64>) -> Result<Self> {
        if base < 2 {
            return Err(CascadeError::InvalidArgument(format!(
                "branching number must be ≥ 2, got {base}"
            )));
        }
        if ln_coeffs.is_empty() {
            return Err(CascadeError::InvalidArgument("profile needs at least one level".into()));
        }
        if ln_coeffs.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(CascadeError::InvalidArgument("invalid log-coefficient".into()));
        }
        Ok(LevelProfile { base, ln_coeffs })
    }

    /// `a_k = b^{-n} 1(k = n)`: the weight whose tree sum is `Y_n`.
    pub fn cascade(base: u32, n: usize) -> Self {
        let lb = (base as f64).ln();
        let mut ln = vec![f64::NEG_INFINITY; n + 1];
        ln[n] = -(n as f64) * lb;
        LevelProfile { base, ln_coeffs: ln }
    }

    /// `a_k = b^{-s k}` for `k ≤ n`.
    pub fn power_decay(base: u32, s: f64, n: usize) -> Self {
        let lb = (base as f64).ln();
        LevelProfile {
            base,
            ln_coeffs: (0..=n).map(|k| -s * k as f64 * lb).collect(),
        }
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    /// Deepest level `N` stored (trailing levels may still be zero).
    pub fn max_depth(&self) -> usize {
        self.ln_coeffs.len() - 1
    }

    pub fn ln_coeffs(&self) -> &[f64] {
        &self.ln_coeffs
    }

    /// Linear coefficients; entries below the f64 range underflow to 0.
    pub fn coeffs(&self) -> Vec<f64> {
        self.ln_coeffs.iter().map(|x| x.exp()).collect()
    }

    pub fn coeff(&self, k: usize) -> f64 {
        self.ln_coeffs.get(k).map_or(0.0, |x| x.exp())
    }

    /// `ln κ_m` where `κ_m = Σ_{k ≥ m} (b E X)^{k−m} a_k`.
    pub fn ln_kappa(&self, mean_x: f64) -> Vec<f64> {
        let step = ln_nonneg(mean_x) + (self.base as f64).ln();
        let mut out = self.ln_coeffs.clone();
        for m in (0..out.len().saturating_sub(1)).rev() {
            let below = if out[m + 1] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                step + out[m + 1]
            };
            out[m] = logaddexp(out[m], below);
        }
        out
    }

    /// Drops trailing zero levels, keeping at least the root.
    pub fn trimmed(mut self) -> Self {
        while self.ln_coeffs.len() > 1 && *self.ln_coeffs.last().unwrap() == f64::NEG_INFINITY {
            self.ln_coeffs.pop();
        }
        self
    }
}

/// Operations common to both weight representations.
pub trait TreeWeight: Sized {
    /// The κ functional, in the same representation.
    fn kappa(&self, mean_x: f64) -> Self;
    /// `κ(ρ) = Σ_v α(v) (E X)^{d(v, ρ)} = E[Θ(X, α)]`.
    fn root_kappa(&self, mean_x: f64) -> f64;
}

impl TreeWeight for SparseWeights<f64> {
    fn kappa(&self, mean_x: f64) -> Self {
        self.kappa_with(&mean_x)
    }

    fn root_kappa(&self, mean_x: f64) -> f64 {
        self.kappa_with(&mean_x).alpha[0]
    }
}

impl TreeWeight for LevelProfile {
    fn kappa(&self, mean_x: f64) -> Self {
        LevelProfile {
            base: self.base,
            ln_coeffs: self.ln_kappa(mean_x),
        }
    }

    fn root_kappa(&self, mean_x: f64) -> f64 {
        self.ln_kappa(mean_x)[0].exp()
    }
}

/// Materializes a profile on the regular tree truncated at `depth ≥ N`.
pub fn expand_profile(profile: &LevelProfile, depth: usize, cap: usize) -> Result<SparseWeights<f64>> {
    if depth < profile.max_depth() {
        return Err(CascadeError::InvalidArgument(format!(
            "expansion depth {depth} is below the profile depth {}",
            profile.max_depth()
        )));
    }
    let tree = SparseTree::regular(profile.base(), depth, cap)?;
    let coeffs = profile.coeffs();
    let alpha = (0..tree.len())
        .map(|v| coeffs.get(tree.depth(v)).copied().unwrap_or(0.0))
        .collect();
    SparseWeights::new(tree, alpha)
}
