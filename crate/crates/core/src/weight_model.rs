//! The law of the cascade weight `W`: real-order moments, the structure
//! function `φ_W(q) = log_b E[W^q] − (q − 1)`, detection of the totally
//! critical law and regime classification of `(W, b, q)` triples.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{CascadeError, Result};
use crate::numeric::{ln_nonneg, logsumexp, DiscreteLaw, RationalLaw};

/// Tolerance on `φ` used to separate the three regimes.
pub const CLASSIFICATION_TOL: f64 = 1e-9;
/// Upper end of the bracket searched for a critical exponent.
pub const DEFAULT_Q_MAX: f64 = 128.0;
const ROOT_TOL: f64 = 1e-10;
const NORMALIZATION_TOL: f64 = 1e-12;

/// Finite discrete law with non-negative atoms, stored sorted with duplicates
/// merged. Built either with `E[W] = 1` enforced ([`WeightDistribution::new`])
/// or as a raw law for general reduction inputs ([`WeightDistribution::relaxed`]).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDistribution {
    atoms: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DistributionJson {
    atoms: Vec<f64>,
    probs: Vec<f64>,
}

impl WeightDistribution {
    /// Law with `E[W] = 1`; non-normalized input is rejected, never rescaled.
    pub fn new(atoms: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let dist = Self::relaxed(atoms, probs)?;
        let mean = dist.mean();
        if (mean - 1.0).abs() > NORMALIZATION_TOL {
            return Err(CascadeError::InvalidDistribution(format!(
                "E[W] = {mean}, expected 1"
            )));
        }
        Ok(dist)
    }

    /// Any non-negative discrete law; only the probabilities are checked.
    pub fn relaxed(atoms: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if atoms.len() != probs.len() {
            return Err(CascadeError::InvalidDistribution(format!(
                "{} atoms but {} probabilities",
                atoms.len(),
                probs.len()
            )));
        }
        if atoms.is_empty() {
            return Err(CascadeError::InvalidDistribution("no atoms".into()));
        }
        if let Some(a) = atoms.iter().find(|a| !a.is_finite() || **a < 0.0) {
            return Err(CascadeError::InvalidDistribution(format!(
                "atom {a} is not a finite non-negative number"
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(CascadeError::InvalidDistribution(format!(
                "probability {p} outside (0, 1]"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(CascadeError::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        let mut pairs: Vec<(f64, f64)> = atoms.into_iter().zip(probs).collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (a, p) in pairs {
            match merged.last_mut() {
                Some(last) if last.0 == a => last.1 += p,
                _ => merged.push((a, p)),
            }
        }
        let (atoms, probs) = merged.into_iter().unzip();
        Ok(WeightDistribution { atoms, probs })
    }

    /// The totally critical law: `b` with probability `1/b`, else 0.
    pub fn totally_critical(base: u32) -> Self {
        let b = base as f64;
        WeightDistribution {
            atoms: vec![0.0, b],
            probs: vec![1.0 - 1.0 / b, 1.0 / b],
        }
    }

    pub fn deterministic_one() -> Self {
        WeightDistribution {
            atoms: vec![1.0],
            probs: vec![1.0],
        }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().zip(&self.probs).map(|(a, p)| a * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.atoms
            .iter()
            .zip(&self.probs)
            .map(|(a, p)| p * (a - m) * (a - m))
            .sum()
    }

    /// `E[W^q]` for real `q ≥ 0`, with `0^0 = 1`. Falls back to log-domain
    /// accumulation when a power overflows.
    pub fn moment(&self, q: f64) -> f64 {
        let mut sum = 0.0;
        for (a, p) in self.atoms.iter().zip(&self.probs) {
            let t = a.powf(q);
            if !t.is_finite() {
                return self.ln_moment(q).exp();
            }
            sum += p * t;
        }
        sum
    }

    /// `ln E[W^q]`; `-inf` when the moment vanishes.
    pub fn ln_moment(&self, q: f64) -> f64 {
        let terms: Vec<f64> = self
            .atoms
            .iter()
            .zip(&self.probs)
            .map(|(a, p)| {
                if *a == 0.0 {
                    if q == 0.0 {
                        p.ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    p.ln() + q * a.ln()
                }
            })
            .collect();
        logsumexp(&terms)
    }

    /// `‖W − E W‖_q / √Var(W)`: the law-dependent factor in the reduction
    /// constants. Diagnostic only; `None` for a degenerate law.
    pub fn centered_norm_ratio(&self, q: f64) -> Option<f64> {
        let var = self.variance();
        if var <= 0.0 {
            return None;
        }
        let m = self.mean();
        let abs_q: f64 = self
            .atoms
            .iter()
            .zip(&self.probs)
            .map(|(a, p)| p * (a - m).abs().powf(q))
            .sum();
        Some(abs_q.powf(1.0 / q) / var.sqrt())
    }

    /// Law of `W^k`.
    pub fn power_law(&self, k: u32) -> WeightDistribution {
        let mut atoms: Vec<f64> = self.atoms.iter().map(|a| a.powi(k as i32)).collect();
        let mut probs = self.probs.clone();
        // Distinct non-negative atoms stay distinct under x ↦ x^k (k ≥ 1).
        if k == 0 {
            atoms = vec![1.0];
            probs = vec![1.0];
        }
        WeightDistribution { atoms, probs }
    }

    pub fn squared(&self) -> WeightDistribution {
        self.power_law(2)
    }

    pub fn to_law(&self) -> DiscreteLaw<f64> {
        DiscreteLaw::new(self.atoms.clone(), self.probs.clone())
            .expect("validated at construction")
    }

    pub fn from_law(law: &DiscreteLaw<f64>) -> Result<Self> {
        Self::relaxed(law.atoms().to_vec(), law.probs().to_vec())
    }

    /// Parses either the literal form `atoms=0,2;probs=1/2,1/2` or the JSON
    /// form `{"atoms":[0,2],"probs":[0.5,0.5]}`, enforcing `E[W] = 1`.
    pub fn parse(text: &str) -> Result<Self> {
        let (atoms, probs) = parse_raw(text)?;
        Self::new(atoms, probs)
    }

    /// Same as [`WeightDistribution::parse`] without the mean constraint.
    pub fn parse_relaxed(text: &str) -> Result<Self> {
        let (atoms, probs) = parse_raw(text)?;
        Self::relaxed(atoms, probs)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "atoms": self.atoms, "probs": self.probs })
    }
}

impl fmt::Display for WeightDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |xs: &[f64]| {
            xs.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(f, "atoms={};probs={}", join(&self.atoms), join(&self.probs))
    }
}

fn parse_raw(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let raw: DistributionJson = serde_json::from_str(text).map_err(|e| {
            CascadeError::parse(e.column().saturating_sub(1), e.to_string())
        })?;
        return Ok((raw.atoms, raw.probs));
    }
    let fields = parse_literal_fields(text)?;
    let mut out = Vec::with_capacity(2);
    for field in fields {
        let values = field
            .values
            .iter()
            .map(|(pos, tok)| parse_number(tok).map_err(|m| CascadeError::parse(*pos, m)))
            .collect::<Result<Vec<f64>>>()?;
        out.push(values);
    }
    let probs = out.pop().unwrap_or_default();
    let atoms = out.pop().unwrap_or_default();
    Ok((atoms, probs))
}

struct LiteralField<'a> {
    values: Vec<(usize, &'a str)>,
}

/// Splits `atoms=..;probs=..` into the two value lists (atoms first),
/// recording the byte offset of every token.
fn parse_literal_fields(text: &str) -> Result<[LiteralField<'_>; 2]> {
    let mut atoms: Option<LiteralField> = None;
    let mut probs: Option<LiteralField> = None;
    let mut offset = 0;
    for section in text.split(';') {
        let start = offset;
        offset += section.len() + 1;
        if section.trim().is_empty() {
            continue;
        }
        let eq = section
            .find('=')
            .ok_or_else(|| CascadeError::parse(start, "expected `key=values`"))?;
        let key = section[..eq].trim();
        let mut values = Vec::new();
        let mut tok_start = start + eq + 1;
        for tok in section[eq + 1..].split(',') {
            let lead = tok.len() - tok.trim_start().len();
            if tok.trim().is_empty() {
                return Err(CascadeError::parse(tok_start, "empty value"));
            }
            values.push((tok_start + lead, tok.trim()));
            tok_start += tok.len() + 1;
        }
        let slot = match key {
            "atoms" => &mut atoms,
            "probs" => &mut probs,
            other => {
                return Err(CascadeError::parse(
                    start,
                    format!("unknown key `{other}` (expected atoms or probs)"),
                ))
            }
        };
        if slot.is_some() {
            return Err(CascadeError::parse(start, format!("duplicate key `{key}`")));
        }
        *slot = Some(LiteralField { values });
    }
    match (atoms, probs) {
        (Some(a), Some(p)) => Ok([a, p]),
        (None, _) => Err(CascadeError::parse(text.len(), "missing `atoms=`")),
        (_, None) => Err(CascadeError::parse(text.len(), "missing `probs=`")),
    }
}

fn parse_number(tok: &str) -> std::result::Result<f64, String> {
    if let Some((n, d)) = tok.split_once('/') {
        let n: f64 = n.trim().parse().map_err(|_| format!("bad numerator `{n}`"))?;
        let d: f64 = d.trim().parse().map_err(|_| format!("bad denominator `{d}`"))?;
        if d == 0.0 {
            return Err("zero denominator".into());
        }
        Ok(n / d)
    } else {
        tok.parse().map_err(|_| format!("bad number `{tok}`"))
    }
}

fn parse_exact(tok: &str) -> std::result::Result<BigRational, String> {
    fn decimal(s: &str) -> std::result::Result<BigRational, String> {
        let s = s.trim();
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(format!("bad number `{s}`"));
        }
        let digits = format!("{int}{frac}");
        if !digits.chars().all(|c| c.is_ascii_digit()) {
            return Err(format!("`{s}` is not an exact decimal"));
        }
        let mut num: BigInt = digits.parse().map_err(|_| format!("bad number `{s}`"))?;
        if neg {
            num = -num;
        }
        let den = num_traits::pow(BigInt::from(10), frac.len());
        Ok(BigRational::new(num, den))
    }
    if let Some((n, d)) = tok.split_once('/') {
        let d = decimal(d)?;
        if d.is_zero() {
            return Err("zero denominator".into());
        }
        Ok(decimal(n)? / d)
    } else {
        decimal(tok)
    }
}

/// Parses the literal form into an exact rational law (integers, finite
/// decimals and fractions only). The mean is not constrained.
pub fn parse_rational_law(text: &str) -> Result<RationalLaw> {
    let fields = parse_literal_fields(text)?;
    let mut out = Vec::with_capacity(2);
    for field in fields {
        let values = field
            .values
            .iter()
            .map(|(pos, tok)| parse_exact(tok).map_err(|m| CascadeError::parse(*pos, m)))
            .collect::<Result<Vec<BigRational>>>()?;
        out.push(values);
    }
    let probs = out.pop().unwrap_or_default();
    let atoms = out.pop().unwrap_or_default();
    if probs.iter().fold(BigRational::zero(), |a, p| a + p) != BigRational::one() {
        return Err(CascadeError::InvalidDistribution(
            "rational probabilities must sum to exactly 1".into(),
        ));
    }
    DiscreteLaw::new(atoms, probs)
}

/// `φ_W(q) = log_b E[W^q] − (q − 1)` for a fixed branching number.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureFunction {
    pub base: u32,
    pub dist: WeightDistribution,
}

impl StructureFunction {
    pub fn new(base: u32, dist: WeightDistribution) -> Result<Self> {
        if base < 2 {
            return Err(CascadeError::InvalidArgument(format!(
                "branching number must be ≥ 2, got {base}"
            )));
        }
        Ok(StructureFunction { base, dist })
    }

    pub fn phi(&self, q: f64) -> Result<f64> {
        if !(q > 0.0) {
            return Err(CascadeError::InvalidArgument(format!(
                "φ needs q > 0, got {q}"
            )));
        }
        let ln_m = self.dist.ln_moment(q);
        if ln_m == f64::NEG_INFINITY {
            return Err(CascadeError::Domain(format!("E[W^{q}] = 0")));
        }
        Ok(ln_m / (self.base as f64).ln() - (q - 1.0))
    }

    /// `φ'(1) = E[W ln W] / ln b − 1`.
    pub fn slope_at_one(&self) -> f64 {
        let ent: f64 = self
            .dist
            .atoms()
            .iter()
            .zip(self.dist.probs())
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, p)| p * a * a.ln())
            .sum();
        ent / (self.base as f64).ln() - 1.0
    }

    pub fn is_totally_critical(&self) -> bool {
        is_totally_critical(&self.dist, self.base)
    }

    /// Moment threshold `b^{q−1}` separating the regimes.
    pub fn threshold(&self, q: f64) -> f64 {
        (self.base as f64).powf(q - 1.0)
    }

    pub fn classify(&self, q: f64) -> Result<CriticalityReport> {
        let phi_value = self.phi(q)?;
        let is_tc = self.is_totally_critical();
        let q_crit = match find_critical_exponent(self, DEFAULT_Q_MAX)? {
            CriticalExponent::Root(r) => Some(r),
            _ => None,
        };
        Ok(CriticalityReport {
            regime: Regime::from_phi(phi_value),
            q,
            phi_value,
            q_crit,
            is_totally_critical: is_tc,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

impl Regime {
    pub fn from_phi(phi: f64) -> Regime {
        if phi < -CLASSIFICATION_TOL {
            Regime::Subcritical
        } else if phi > CLASSIFICATION_TOL {
            Regime::Supercritical
        } else {
            Regime::Critical
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Subcritical => "subcritical",
            Regime::Critical => "critical",
            Regime::Supercritical => "supercritical",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalityReport {
    pub regime: Regime,
    pub q: f64,
    pub phi_value: f64,
    pub q_crit: Option<f64>,
    pub is_totally_critical: bool,
}

/// True iff the law is `{0 w.p. 1 − 1/b, b w.p. 1/b}` within 1e-12.
pub fn is_totally_critical(dist: &WeightDistribution, base: u32) -> bool {
    let b = base as f64;
    let tol = NORMALIZATION_TOL;
    dist.len() == 2
        && dist.atoms()[0].abs() <= tol
        && (dist.atoms()[1] - b).abs() <= tol * b
        && (dist.probs()[0] - (1.0 - 1.0 / b)).abs() <= tol
        && (dist.probs()[1] - 1.0 / b).abs() <= tol
}

/// Outcome of the search for the second zero of `φ_W` in `(1, q_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriticalExponent {
    /// `φ_W ≡ 0`: every exponent is critical.
    TotallyCritical,
    Root(f64),
    /// `φ_W < 0` on the whole bracket.
    SubcriticalThroughout { q_max: f64 },
    /// `φ_W > 0` on all of `(1, q_max]`.
    SupercriticalThroughout { q_max: f64 },
}

/// Locates `q_crit > 1`. Doubles the upper bracket from 2 up to `q_max`,
/// places the lower bracket at the minimizer of the convex `φ`, then bisects.
pub fn find_critical_exponent(sf: &StructureFunction, q_max: f64) -> Result<CriticalExponent> {
    if sf.is_totally_critical() {
        return Ok(CriticalExponent::TotallyCritical);
    }
    if !(q_max > 1.0) {
        return Err(CascadeError::InvalidArgument(format!(
            "q_max must exceed 1, got {q_max}"
        )));
    }
    let mut hi = None;
    let mut q = 2.0_f64.min(q_max);
    loop {
        if sf.phi(q)? > 0.0 {
            hi = Some(q);
            break;
        }
        if q >= q_max {
            break;
        }
        q = (2.0 * q).min(q_max);
    }
    let Some(hi) = hi else {
        return Ok(CriticalExponent::SubcriticalThroughout { q_max });
    };
    let lo = convex_argmin(|x| sf.phi(x).unwrap_or(f64::INFINITY), 1.0, hi);
    if sf.phi(lo)? >= 0.0 {
        return Ok(CriticalExponent::SupercriticalThroughout { q_max });
    }
    let root = bisect(|x| sf.phi(x).unwrap_or(f64::INFINITY), lo, hi, ROOT_TOL);
    Ok(CriticalExponent::Root(root))
}

/// Ternary search for the minimizer of a convex function on `[a, b]`.
fn convex_argmin(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..200 {
        if b - a < 1e-12 {
            break;
        }
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) <= f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    0.5 * (a + b)
}

/// Bisection for `f(lo) < 0 < f(hi)`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Checks `E[W^p] < b^{p−1}` with margin at every grid point in `(1, q)`,
/// given `E[W^q] ≤ b^{q−1}` and `W` not totally critical.
pub fn verify_strict_subcritical_interior(
    sf: &StructureFunction,
    q: f64,
    grid: &[f64],
) -> Result<bool> {
    if sf.is_totally_critical() {
        return Err(CascadeError::TotallyCritical);
    }
    if !(q > 1.0) {
        return Err(CascadeError::InvalidArgument(format!("q must exceed 1, got {q}")));
    }
    let phi_q = sf.phi(q)?;
    if phi_q > CLASSIFICATION_TOL {
        return Err(CascadeError::Precondition(format!(
            "E[W^{q}] exceeds b^{{q-1}} (φ({q}) = {phi_q:e})"
        )));
    }
    for &p in grid {
        if !(p > 1.0 && p < q) {
            return Err(CascadeError::InvalidArgument(format!(
                "grid point {p} outside (1, {q})"
            )));
        }
        if sf.phi(p)? >= -CLASSIFICATION_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Builds a two-point law `{low, high}` with mean 1 whose critical exponent
/// is `q`, i.e. `E[W^q] = b^{q−1}`. Requires `0 < low < 1` (`low = 0`
/// would force the totally critical law).
pub fn critical_two_point(base: u32, q: f64, low: f64) -> Result<WeightDistribution> {
    if !(low > 0.0 && low < 1.0) {
        return Err(CascadeError::InvalidArgument(format!(
            "low atom must lie in (0, 1), got {low}"
        )));
    }
    if !(q > 1.0) {
        return Err(CascadeError::InvalidArgument(format!("q must exceed 1, got {q}")));
    }
    let b = base as f64;
    let excess = |high: f64| {
        let p = (1.0 - low) / (high - low);
        let ln_m = ln_nonneg(p * high.powf(q) + (1.0 - p) * low.powf(q));
        ln_m / b.ln() - (q - 1.0)
    };
    let lo = 1.0 + 1e-9;
    let mut hi = 2.0;
    while excess(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(CascadeError::Domain(
                "no two-point law with the requested critical exponent".into(),
            ));
        }
    }
    let high = bisect(excess, lo, hi, 0.0);
    let p = (1.0 - low) / (high - low);
    WeightDistribution::new(vec![low, high], vec![1.0 - p, p])
}
