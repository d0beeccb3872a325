//! Exact integer moments by dynamic programming on moment vectors.
//!
//! Moment vectors are kept in exponential-generating-function form,
//! `c_k = E[S^k] / k!`, so the law of a sum of independent terms is the
//! truncated product of their series, and multiplying a term by an
//! independent weight `X` multiplies `c_k` by `E[X^k]`.
//!
//! Arithmetic starts in the linear domain and flips to log-sum-exp as soon as
//! any coefficient leaves `[1e-280, 1e300]`; once flipped, a computation
//! stays in the log domain.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{CascadeError, Result};
use crate::numeric::{ln_factorials, ExtFloat};
use crate::tree::{LevelProfile, SparseWeights};
use crate::weight_model::WeightDistribution;

pub const MAX_LEVELS: usize = 10_000;
pub const MAX_ORDER: usize = 64;

const LINEAR_MAX: f64 = 1e300;
const LINEAR_MIN: f64 = 1e-280;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Linear,
    Log,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Linear => "linear",
            Domain::Log => "log",
        }
    }
}

/// A truncated series: plain floats, or extended-exponent floats once any
/// coefficient leaves the safe linear range.
#[derive(Debug, Clone)]
enum Series {
    Linear(Vec<f64>),
    Ext(Vec<ExtFloat>),
}

fn linear_safe(x: f64) -> bool {
    x == 0.0 || (x.is_finite() && (LINEAR_MIN..=LINEAR_MAX).contains(&x))
}

impl Series {
    fn from_ext(v: Vec<ExtFloat>, prefer_linear: bool) -> Series {
        if prefer_linear {
            let lin: Vec<f64> = v.iter().map(ExtFloat::to_f64).collect();
            if lin.iter().all(|&x| linear_safe(x)) {
                return Series::Linear(lin);
            }
        }
        Series::Ext(v)
    }

    fn domain(&self) -> Domain {
        match self {
            Series::Linear(_) => Domain::Linear,
            Series::Ext(_) => Domain::Log,
        }
    }

    fn len(&self) -> usize {
        match self {
            Series::Linear(v) => v.len(),
            Series::Ext(v) => v.len(),
        }
    }

    fn ext(&self) -> Vec<ExtFloat> {
        match self {
            Series::Linear(v) => v.iter().map(|&x| ExtFloat::from_f64(x)).collect(),
            Series::Ext(v) => v.clone(),
        }
    }

    fn one(len: usize) -> Series {
        let mut v = vec![0.0; len];
        v[0] = 1.0;
        Series::Linear(v)
    }

    /// Coefficient-wise product with `factors`.
    fn scale(&self, factors: &[ExtFloat]) -> Series {
        if let Series::Linear(v) = self {
            let out: Vec<f64> = v.iter().zip(factors).map(|(x, f)| x * f.to_f64()).collect();
            if out.iter().all(|&x| linear_safe(x)) && factors.iter().all(|f| linear_safe(f.to_f64())) {
                return Series::Linear(out);
            }
        }
        Series::Ext(self.ext().iter().zip(factors).map(|(x, f)| x.mul(*f)).collect())
    }

    fn mul(&self, other: &Series) -> Series {
        let len = self.len();
        if let (Series::Linear(a), Series::Linear(b)) = (self, other) {
            let v: Vec<f64> = (0..len)
                .map(|k| (0..=k).map(|j| a[j] * b[k - j]).sum())
                .collect();
            if v.iter().all(|&x| linear_safe(x)) {
                return Series::Linear(v);
            }
        }
        let (a, b) = (self.ext(), other.ext());
        Series::Ext(
            (0..len)
                .map(|k| (0..=k).fold(ExtFloat::ZERO, |acc, j| acc.add(a[j].mul(b[k - j]))))
                .collect(),
        )
    }

    fn pow(&self, mut e: u32) -> Series {
        let mut acc = Series::one(self.len());
        let mut base = self.clone();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    /// EGF of a deterministic constant: `a^k / k!`.
    fn constant(a: ExtFloat, len: usize, prefer_linear: bool) -> Series {
        let mut v = Vec::with_capacity(len);
        let mut term = ExtFloat::ONE;
        for k in 0..len {
            if k > 0 {
                term = term.mul(a).mul(ExtFloat::from_f64(k as f64).recip());
            }
            v.push(term);
        }
        Series::from_ext(v, prefer_linear)
    }
}

fn check_limits(q_max: usize, levels: usize) -> Result<()> {
    if q_max < 1 {
        return Err(CascadeError::InvalidArgument("q_max must be ≥ 1".into()));
    }
    if q_max > MAX_ORDER {
        return Err(CascadeError::ResourceLimit(format!(
            "q_max = {q_max} exceeds the supported {MAX_ORDER}"
        )));
    }
    if levels > MAX_LEVELS {
        return Err(CascadeError::ResourceLimit(format!(
            "N = {levels} exceeds the supported {MAX_LEVELS}"
        )));
    }
    Ok(())
}

/// `E[X^k]`, `k = 0..=q_max`.
fn ext_moments(dist: &WeightDistribution, q_max: usize) -> Vec<ExtFloat> {
    (0..=q_max)
        .map(|k| {
            let m = dist.moment(k as f64);
            if m.is_finite() {
                ExtFloat::from_f64(m)
            } else {
                ExtFloat::from_ln(dist.ln_moment(k as f64))
            }
        })
        .collect()
}

/// `E[Y_n^k]` for `n = 0..=N`, `k = 0..=q_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    base: u32,
    q_max: usize,
    /// Per level: values (exact linear results where available, otherwise
    /// `exp` of the log), log values, and the producing domain.
    values: Vec<Vec<f64>>,
    ln_values: Vec<Vec<f64>>,
    domains: Vec<Domain>,
}

impl MomentTable {
    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn q_max(&self) -> usize {
        self.q_max
    }

    pub fn n_max(&self) -> usize {
        self.values.len() - 1
    }

    pub fn value(&self, n: usize, k: usize) -> f64 {
        self.values[n][k]
    }

    pub fn ln_value(&self, n: usize, k: usize) -> f64 {
        self.ln_values[n][k]
    }

    pub fn domain(&self, n: usize) -> Domain {
        self.domains[n]
    }

    /// `m_n(k)` for `k = 0..=q_max`.
    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n]
    }

    /// CSV with header `n,k,value,log_value,domain`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,k,value,log_value,domain\n");
        for n in 0..=self.n_max() {
            for k in 0..=self.q_max {
                let _ = writeln!(
                    out,
                    "{n},{k},{},{},{}",
                    fmt_num(self.values[n][k]),
                    fmt_num(self.ln_values[n][k]),
                    self.domains[n].as_str()
                );
            }
        }
        out
    }
}

/// Shortest round-trip formatting; non-finite values as `inf`/`-inf`/`nan`.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// `k!` for `k = 0..=q_max`.
fn factorials(q_max: usize) -> Vec<ExtFloat> {
    let mut out = vec![ExtFloat::ONE];
    for k in 1..=q_max {
        out.push(out[k - 1].mul(ExtFloat::from_f64(k as f64)));
    }
    out
}

/// Moments of the cascade mass through `Y_n = b^{-1} Σ_j W_j Y_{n−1}^{(j)}`.
pub fn cascade_moments(base: u32, dist: &WeightDistribution, q_max: usize, levels: usize) -> Result<MomentTable> {
    check_limits(q_max, levels)?;
    if base < 2 {
        return Err(CascadeError::InvalidArgument("branching number must be ≥ 2".into()));
    }
    let len = q_max + 1;
    let fact = factorials(q_max);
    let w = ext_moments(dist, q_max);
    let b = ExtFloat::from_f64(base as f64);
    let shrink: Vec<ExtFloat> = (0..len).map(|k| b.powi(k as u32).recip()).collect();

    let mut egf = Series::constant(ExtFloat::ONE, len, true);
    let mut table = MomentTable {
        base,
        q_max,
        values: Vec::with_capacity(levels + 1),
        ln_values: Vec::with_capacity(levels + 1),
        domains: Vec::with_capacity(levels + 1),
    };
    table.push(&egf, &fact);
    for _ in 0..levels {
        egf = egf.scale(&w).pow(base).scale(&shrink);
        table.push(&egf, &fact);
    }
    Ok(table)
}

impl MomentTable {
    fn push(&mut self, egf: &Series, fact: &[ExtFloat]) {
        let (values, ln_values) = egf_to_moments(egf, fact);
        self.values.push(values);
        self.ln_values.push(ln_values);
        self.domains.push(egf.domain());
    }
}

fn egf_to_moments(egf: &Series, fact: &[ExtFloat]) -> (Vec<f64>, Vec<f64>) {
    egf.ext()
        .iter()
        .zip(fact)
        .map(|(c, f)| {
            let m = c.mul(*f);
            (m.to_f64(), m.ln())
        })
        .unzip()
}

/// `E[Θ^k]`, `k = 0..=q_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentVector {
    pub values: Vec<f64>,
    pub ln_values: Vec<f64>,
    pub domain: Domain,
}

impl MomentVector {
    fn from_egf(egf: &Series, fact: &[ExtFloat]) -> Self {
        let (values, ln_values) = egf_to_moments(egf, fact);
        MomentVector {
            values,
            ln_values,
            domain: egf.domain(),
        }
    }
}

/// Weights whose weighted sum has computable integer moments.
pub trait ThetaMoments {
    fn theta_moments(&self, dist: &WeightDistribution, q_max: usize) -> Result<MomentVector>;
}

impl ThetaMoments for SparseWeights<f64> {
    /// Subtree recursion `S_v = α(v) + Σ_{x ∈ C(v)} X(x) S_x`, leaves first.
    fn theta_moments(&self, dist: &WeightDistribution, q_max: usize) -> Result<MomentVector> {
        check_limits(q_max, self.tree().max_depth())?;
        let len = q_max + 1;
        let x = ext_moments(dist, q_max);
        let tree = self.tree();
        let mut egfs: Vec<Option<Series>> = vec![None; tree.len()];
        for v in (0..tree.len()).rev() {
            let mut s = Series::constant(ExtFloat::from_f64(*self.get(v)), len, true);
            for &c in tree.children(v) {
                let child = egfs[c].take().expect("children follow their parent");
                s = s.mul(&child.scale(&x));
            }
            egfs[v] = Some(s);
        }
        Ok(MomentVector::from_egf(egfs[0].as_ref().unwrap(), &factorials(q_max)))
    }
}

impl ThetaMoments for LevelProfile {
    /// Level recursion `S_m = a_m + Σ_{j=1}^{b} X_j S_{m+1}^{(j)}`.
    fn theta_moments(&self, dist: &WeightDistribution, q_max: usize) -> Result<MomentVector> {
        check_limits(q_max, self.max_depth())?;
        let len = q_max + 1;
        let x = ext_moments(dist, q_max);
        let coeff = |m: usize| ExtFloat::from_ln(self.ln_coeffs()[m]);
        let mut s = Series::constant(coeff(self.max_depth()), len, true);
        for m in (0..self.max_depth()).rev() {
            let children = s.scale(&x).pow(self.base());
            let linear = children.domain() == Domain::Linear;
            s = Series::constant(coeff(m), len, linear).mul(&children);
        }
        Ok(MomentVector::from_egf(&s, &factorials(q_max)))
    }
}

pub fn theta_moments<W: ThetaMoments>(weights: &W, dist: &WeightDistribution, q_max: usize) -> Result<MomentVector> {
    weights.theta_moments(dist, q_max)
}

/// `(n, ln m_n(k))` for every level of the table.
pub fn growth_series(table: &MomentTable, k: usize) -> Result<Vec<(usize, f64)>> {
    if k < 1 || k > table.q_max() {
        return Err(CascadeError::InvalidArgument(format!(
            "order {k} outside 1..={}",
            table.q_max()
        )));
    }
    Ok((0..=table.n_max()).map(|n| (n, table.ln_value(n, k))).collect())
}

/// `lim_n E[Y_n^q]` for integer `q ≥ 1`, when `E[W^k] < b^{k−1}` for all
/// `2 ≤ k ≤ q`; `None` otherwise.
///
/// The limit solves the DP's fixed-point equation order by order: the
/// degree-`k` coefficient of `(Σ_j c_j t^j)^b` is `b c_k` plus a polynomial in
/// lower coefficients.
pub fn subcritical_fixed_point(base: u32, dist: &WeightDistribution, q: usize) -> Option<f64> {
    let b = base as f64;
    let mut limit = vec![1.0, 1.0];
    for k in 2..=q {
        let ratio = dist.moment(k as f64) / b.powi(k as i32 - 1);
        if !(ratio < 1.0) {
            return None;
        }
        let fact: Vec<f64> = ln_factorials(k).iter().map(|l| l.exp()).collect();
        let mut c: Vec<f64> = (0..=k)
            .map(|j| if j < k { dist.moment(j as f64) * limit[j] / fact[j] } else { 0.0 })
            .collect();
        c[0] = 1.0;
        let Series::Linear(series) = Series::Linear(c).pow(base) else {
            return None;
        };
        let rest = series[k] * fact[k] / b.powi(k as i32);
        limit.push(rest / (1.0 - ratio));
    }
    limit.get(q).copied()
}
