//! Randomized verification suites over tiny enumerable instances.
//!
//! * identity: `s(M)² = Θ(X², β)` outcome by outcome;
//! * increments: conditional-expectation increments against their closed
//!   form, zero mean and pairwise orthogonality;
//! * bounds: depth-sum lower bound against exact moments at fractional `q`,
//!   and the linear growth of the κ upper sum on critical cascade profiles.
//!
//! Instances are drawn from a seeded ChaCha stream, so a suite is a pure
//! function of its configuration.

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{theorem_report, CheckSpec, Verdict};
use crate::error::{CascadeError, Result};
use crate::numeric::{DiscreteLaw, RationalLaw, Scalar};
use crate::oracle::{expectation_with, EnumeratedSpace};
use crate::reduction::{evaluate_bounds, reduce_sparse_exact};
use crate::tree::{LevelProfile, SparseTree, SparseWeights};
use crate::weight_model::{critical_two_point, WeightDistribution};

/// Float-mode relative tolerance for the exact identities.
pub const FLOAT_TOL: f64 = 1e-10;
/// Outcome budget for randomized instances.
pub const INSTANCE_OUTCOMES: usize = 4096;
const MAX_VERTICES: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SuiteSpec {
    Identity { instances: usize, seed: u64 },
    Increments { instances: usize, seed: u64 },
    Bounds { configs: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: usize,
    pub failures: usize,
    /// Largest float-mode deviation seen (relative, or absolute for
    /// quantities that should vanish).
    pub worst_float_error: f64,
    pub pass: bool,
    pub detail: String,
}

pub fn run_suite(spec: &SuiteSpec) -> Result<SuiteReport> {
    match *spec {
        SuiteSpec::Identity { instances, seed } => identity_suite(instances, seed),
        SuiteSpec::Increments { instances, seed } => increment_suite(instances, seed),
        SuiteSpec::Bounds { configs, seed } => bounds_suite(configs, seed),
    }
}

/// A random enumerable instance with exact rational data.
#[derive(Debug, Clone)]
pub struct RationalInstance {
    pub weights: SparseWeights<BigRational>,
    pub law: RationalLaw,
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Random subtree of the `b`-adic tree, `b ∈ {2, 3}`, depth `≤ 3`.
fn random_tree<R: Rng>(rng: &mut R, atoms: usize) -> SparseTree {
    loop {
        let b: u32 = rng.random_range(2..=3);
        let depth: usize = rng.random_range(1..=3);
        let keep = if rng.random_bool(0.3) { 1.0 } else { 0.6 };
        let mut paths: Vec<Vec<u32>> = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..depth {
            let mut next = Vec::new();
            for p in &frontier {
                for j in 0..b {
                    if rng.random_bool(keep) {
                        let mut c: Vec<u32> = p.clone();
                        c.push(j);
                        next.push(c);
                    }
                }
            }
            paths.extend(next.iter().cloned());
            frontier = next;
        }
        let free = paths.len() - 1;
        let fits = paths.len() <= MAX_VERTICES
            && free >= 1
            && (atoms as f64).powi(free as i32) <= INSTANCE_OUTCOMES as f64;
        if fits {
            return SparseTree::from_paths(&paths).expect("prefix-closed");
        }
    }
}

pub fn random_rational_instance<R: Rng>(rng: &mut R) -> RationalInstance {
    let k: usize = rng.random_range(1..=3);
    let mut atoms: Vec<(i64, i64)> = Vec::new();
    while atoms.len() < k {
        let a = (rng.random_range(0..=12), rng.random_range(1..=4));
        if !atoms.iter().any(|&(n, d)| n * a.1 == a.0 * d) {
            atoms.push(a);
        }
    }
    let raw: Vec<i64> = (0..k).map(|_| rng.random_range(1..=5)).collect();
    let total: i64 = raw.iter().sum();
    let probs: Vec<(i64, i64)> = raw.iter().map(|&r| (r, total)).collect();
    let law = RationalLaw::from_pairs(&atoms, &probs).expect("valid law");
    let tree = random_tree(rng, k);
    let alpha = (0..tree.len())
        .map(|_| if rng.random_bool(0.25) { rat(0, 1) } else { rat(rng.random_range(0..=8), 4) })
        .collect();
    RationalInstance {
        weights: SparseWeights::new(tree, alpha).expect("non-negative"),
        law,
    }
}

/// The same instance with real-valued atoms and weights (atoms in `[0, 3]`,
/// weights in `[0, 2]`).
fn random_float_instance<R: Rng>(rng: &mut R) -> (SparseWeights<f64>, DiscreteLaw<f64>) {
    let k: usize = rng.random_range(1..=3);
    let atoms: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..3.0)).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let law = DiscreteLaw::new(atoms, probs).expect("valid law");
    let tree = random_tree(rng, k);
    let alpha = (0..tree.len()).map(|_| rng.random_range(0.0..2.0)).collect();
    (SparseWeights::new(tree, alpha).expect("non-negative"), law)
}

fn to_float(inst: &RationalInstance) -> (SparseWeights<f64>, DiscreteLaw<f64>) {
    (inst.weights.map(Scalar::to_f64), inst.law.to_f64_law())
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(scale).max(f64::MIN_POSITIVE)
}

/// Exact-or-tolerant agreement of `s(M)²` with `Θ(X², β)`, plus the worst
/// relative mismatch in float terms.
fn identity_case<T: Scalar>(weights: &SparseWeights<T>, law: &DiscreteLaw<T>) -> Result<(bool, f64)> {
    let space = EnumeratedSpace::new(weights.tree().clone(), law.clone())?;
    let dec = space.martingale_decomposition(weights)?;
    let (beta, _) = reduce_sparse_exact(weights, law);
    let reduced = space.theta_values_mapped(&beta, |x| x.clone() * x.clone())?;
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for (s, r) in dec.square_function.iter().zip(&reduced) {
        ok &= s.close_to(r, FLOAT_TOL);
        worst = worst.max(rel_err(s.to_f64(), r.to_f64(), 0.0));
    }
    Ok((ok, worst))
}

pub fn identity_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..instances {
        let inst = random_rational_instance(&mut rng);
        let (exact_ok, _) = identity_case(&inst.weights, &inst.law)?;
        let (w, l) = to_float(&inst);
        let (float_ok, err) = identity_case(&w, &l)?;
        let (fw, fl) = random_float_instance(&mut rng);
        let (free_ok, free_err) = identity_case(&fw, &fl)?;
        worst = worst.max(err).max(free_err);
        failures += usize::from(!(exact_ok && float_ok && free_ok));
    }
    Ok(SuiteReport {
        suite: "square-function-identity".into(),
        checks: instances,
        failures,
        worst_float_error: worst,
        pass: failures == 0 && instances > 0,
        detail: format!("{instances} rational instances exact, plus float replays and real-valued instances at {FLOAT_TOL:e}"),
    })
}

/// Closed form, zero mean and orthogonality of the increments.
fn increment_case<T: Scalar>(weights: &SparseWeights<T>, law: &DiscreteLaw<T>) -> Result<(bool, f64)> {
    let space = EnumeratedSpace::new(weights.tree().clone(), law.clone())?;
    let dec = space.martingale_decomposition(weights)?;
    let probs = &dec.probabilities;
    let scale = dec.theta.iter().map(Scalar::to_f64).fold(0.0, f64::max);
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for (d, c) in dec.increments.iter().zip(&dec.closed_form) {
        for (x, y) in d.iter().zip(c) {
            ok &= x.close_to(y, FLOAT_TOL) || (x.to_f64() - y.to_f64()).abs() <= FLOAT_TOL * scale;
            worst = worst.max(rel_err(x.to_f64(), y.to_f64(), scale));
        }
    }
    let zero = T::zero();
    for (i, d) in dec.increments.iter().enumerate() {
        let mean = expectation_with(probs, d);
        ok &= mean.close_to(&zero, 0.0) || mean.to_f64().abs() <= FLOAT_TOL * scale.max(1.0);
        worst = worst.max(mean.to_f64().abs() / scale.max(1.0));
        for e in &dec.increments[i + 1..] {
            let prod: Vec<T> = d.iter().zip(e).map(|(a, b)| a.clone() * b.clone()).collect();
            let cross = expectation_with(probs, &prod);
            let sq = scale.max(1.0).powi(2);
            ok &= cross.close_to(&zero, 0.0) || cross.to_f64().abs() <= FLOAT_TOL * sq;
            worst = worst.max(cross.to_f64().abs() / sq);
        }
    }
    Ok((ok, worst))
}

pub fn increment_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..instances {
        let inst = random_rational_instance(&mut rng);
        let (exact_ok, _) = increment_case(&inst.weights, &inst.law)?;
        let (fw, fl) = random_float_instance(&mut rng);
        let (float_ok, err) = increment_case(&fw, &fl)?;
        worst = worst.max(err);
        failures += usize::from(!(exact_ok && float_ok));
    }
    Ok(SuiteReport {
        suite: "martingale-increments".into(),
        checks: instances,
        failures,
        worst_float_error: worst,
        pass: failures == 0 && instances > 0,
        detail: format!("{instances} rational and {instances} real-valued instances"),
    })
}

/// Exponents of the bound suite.
pub const BOUND_EXPONENTS: [f64; 3] = [1.25, 1.5, 2.0];
/// Depths over which the κ upper sum must grow linearly.
pub const LINEAR_WINDOW: [usize; 5] = [64, 128, 256, 512, 1024];
pub const LINEAR_DRIFT_TOL: f64 = 0.05;

fn critical_law(q: f64) -> WeightDistribution {
    if q == 2.0 {
        let s = 3f64.sqrt();
        WeightDistribution::new(vec![1.0 + s, 1.0 - 1.0 / s], vec![0.25, 0.75]).expect("mean one")
    } else {
        critical_two_point(2, q, 0.5).expect("two-point critical law")
    }
}

/// Relative spread of `upper_core(n) / n` over [`LINEAR_WINDOW`] for the
/// cascade profile under a critical law at `q`.
pub fn upper_core_drift(q: f64) -> Result<f64> {
    let law = critical_law(q);
    let ratios: Vec<f64> = LINEAR_WINDOW
        .iter()
        .map(|&n| {
            let r = evaluate_bounds(&LevelProfile::cascade(2, n), &law, q)?;
            Ok(r.upper_core.expect("q ≤ 2") / n as f64)
        })
        .collect::<Result<_>>()?;
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0f64), |(lo, hi), r| (lo.min(*r), hi.max(*r)));
    Ok((hi - lo) / ratios.last().unwrap())
}

pub fn bounds_suite(configs: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for _ in 0..configs {
        let (w, law) = random_float_instance(&mut rng);
        let dist = WeightDistribution::from_law(&law)?;
        let space = EnumeratedSpace::new(w.tree().clone(), law)?;
        for &q in &BOUND_EXPONENTS {
            let exact = space.exact_moment(&w, q)?;
            let r = evaluate_bounds(&w, &dist, q)?;
            let upper = r.upper_core.expect("q ≤ 2");
            let margin = 1e-10 * exact.max(1.0);
            // Lower ≤ exact with no constant; lower ≤ upper since α ≤ κ.
            if !(r.lower <= exact + margin && r.lower <= upper + margin) {
                failures += 1;
            }
            worst = worst.max((r.lower - exact).max(0.0) / exact.max(f64::MIN_POSITIVE));
            checks += 1;
        }
    }
    let mut drifts = Vec::new();
    for &q in &BOUND_EXPONENTS {
        let drift = upper_core_drift(q)?;
        if !(drift < LINEAR_DRIFT_TOL) {
            failures += 1;
        }
        drifts.push(format!("q={q}: {drift:.4}"));
        checks += 1;
    }
    Ok(SuiteReport {
        suite: "bound-sandwich".into(),
        checks,
        failures,
        worst_float_error: worst,
        pass: failures == 0 && configs > 0,
        detail: format!(
            "{configs} instances × {} exponents; upper_core/n drift over n ∈ [64, 1024]: {}",
            BOUND_EXPONENTS.len(),
            drifts.join(", ")
        ),
    })
}

/// A verification bundle: theorem checks plus randomized suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleConfig {
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub suites: Vec<SuiteSpec>,
}

impl BundleConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CascadeError::InvalidArgument(format!("bundle config: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleReport {
    pub verdicts: Vec<Verdict>,
    pub suites: Vec<SuiteReport>,
    pub pass: bool,
}

/// Runs every check and suite in order. A configuration or resource error
/// in any entry aborts the bundle.
pub fn run_bundle(config: &BundleConfig) -> Result<BundleReport> {
    let verdicts = config.checks.iter().map(theorem_report).collect::<Result<Vec<_>>>()?;
    let suites = config.suites.iter().map(run_suite).collect::<Result<Vec<_>>>()?;
    let pass = verdicts.iter().all(|v| v.pass) && suites.iter().all(|s| s.pass);
    Ok(BundleReport { verdicts, suites, pass })
}
