//! The `q → q/2` weight reduction.
//!
//! For a weight `α` and driving law `X`, the new weight is
//!
//! ```text
//! β(ρ) = κ(ρ)² + Var(X) Σ_{x ∈ C(ρ)} κ(x)²
//! β(v) =         Var(X) Σ_{x ∈ C(v)} κ(x)²      (v ≠ ρ)
//! ```
//!
//! with `κ` the subtree functional from [`crate::tree`]. The conditional
//! square function of the level martingale of `Θ(X, α)` is exactly
//! `Θ(X², β)`, so the `q`-th moment problem for `Θ(X, α)` becomes a
//! `q/2`-th moment problem for `Θ(X², β)`.

use serde::Serialize;

use crate::error::{CascadeError, Result};
use crate::numeric::{ln_nonneg, logaddexp, logsumexp, DiscreteLaw, Scalar};
use crate::tree::{LevelProfile, SparseWeights, TreeWeight};
use crate::weight_model::{Regime, StructureFunction, WeightDistribution, CLASSIFICATION_TOL};

/// New weight `β` together with the scalars of `X` it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionOutput<W> {
    pub beta: W,
    pub mean_x: f64,
    pub var_x: f64,
    /// Law of `X²`, the driving variable of the reduced sum.
    pub squared_dist: WeightDistribution,
}

/// Lower bound and κ-based upper bound (without its constant) on `E[Θ^q]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub q: f64,
    pub lower: f64,
    pub ln_lower: f64,
    /// Present for `1 ≤ q ≤ 2` only.
    pub upper_core: Option<f64>,
    pub ln_upper_core: Option<f64>,
}

/// Weights that support the reduction and the bound sums.
pub trait Reducible: TreeWeight + Clone {
    fn reduce_weight(&self, mean_x: f64, var_x: f64) -> Self;

    /// `ln Σ_v (E[X^q])^{d(v,ρ)} w(v)^q`, for `w = self`.
    fn ln_depth_weighted_power_sum(&self, ln_moment_q: f64, q: f64) -> f64;
}

impl Reducible for LevelProfile {
    fn reduce_weight(&self, mean_x: f64, var_x: f64) -> Self {
        let ln_kappa = self.ln_kappa(mean_x);
        let ln_scale = ln_nonneg(var_x) + (self.base() as f64).ln();
        let depth = ln_kappa.len();
        let child_term = |m: usize| {
            if m + 1 < depth && ln_kappa[m + 1] != f64::NEG_INFINITY {
                ln_scale + 2.0 * ln_kappa[m + 1]
            } else {
                f64::NEG_INFINITY
            }
        };
        let mut ln_beta: Vec<f64> = (0..depth).map(child_term).collect();
        ln_beta[0] = logaddexp(2.0 * ln_kappa[0], ln_beta[0]);
        LevelProfile::from_ln(self.base(), ln_beta)
            .expect("finite log-coefficients")
            .trimmed()
    }

    fn ln_depth_weighted_power_sum(&self, ln_moment_q: f64, q: f64) -> f64 {
        let ln_b = (self.base() as f64).ln();
        let terms: Vec<f64> = self
            .ln_coeffs()
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != f64::NEG_INFINITY)
            .map(|(m, a)| {
                let depth_factor = if m == 0 { 0.0 } else { m as f64 * (ln_moment_q + ln_b) };
                depth_factor + q * a
            })
            .collect();
        logsumexp(&terms)
    }
}

impl Reducible for SparseWeights<f64> {
    fn reduce_weight(&self, mean_x: f64, var_x: f64) -> Self {
        reduce_sparse_with(self, &mean_x, &var_x)
    }

    fn ln_depth_weighted_power_sum(&self, ln_moment_q: f64, q: f64) -> f64 {
        let tree = self.tree();
        let terms: Vec<f64> = (0..tree.len())
            .filter(|&v| *self.get(v) > 0.0)
            .map(|v| {
                let d = tree.depth(v);
                let depth_factor = if d == 0 { 0.0 } else { d as f64 * ln_moment_q };
                depth_factor + q * self.get(v).ln()
            })
            .collect();
        logsumexp(&terms)
    }
}

fn reduce_sparse_with<T: Scalar>(weights: &SparseWeights<T>, mean: &T, var: &T) -> SparseWeights<T> {
    let kappa = weights.kappa_with(mean);
    let tree = weights.tree();
    let beta: Vec<T> = (0..tree.len())
        .map(|v| {
            let children = tree
                .children(v)
                .iter()
                .fold(T::zero(), |acc, &c| acc + kappa.get(c).clone() * kappa.get(c).clone());
            let mut b = var.clone() * children;
            if v == tree.root() {
                b = b + kappa.get(v).clone() * kappa.get(v).clone();
            }
            b
        })
        .collect();
    SparseWeights::new(tree.clone(), beta).expect("β is non-negative")
}

/// Reduction over any scalar field; in rational mode `β` is exact.
pub fn reduce_sparse_exact<T: Scalar>(
    weights: &SparseWeights<T>,
    law: &DiscreteLaw<T>,
) -> (SparseWeights<T>, DiscreteLaw<T>) {
    let beta = reduce_sparse_with(weights, &law.mean(), &law.variance());
    (beta, law.squared())
}

/// Computes `β` from `(α, X)`. `X` need not have mean 1.
pub fn reduce<W: Reducible>(weights: &W, dist: &WeightDistribution) -> ReductionOutput<W> {
    let mean_x = dist.mean();
    let var_x = dist.variance();
    ReductionOutput {
        beta: weights.reduce_weight(mean_x, var_x),
        mean_x,
        var_x,
        squared_dist: dist.squared(),
    }
}

/// Evaluates `Σ_v (E X^q)^{d(v,ρ)} α(v)^q ≤ E[Θ^q]` (any `q ≥ 1`) and, for
/// `q ≤ 2`, the upper sum `Σ_v (E X^q)^{d(v,ρ)} κ(v)^q`.
pub fn evaluate_bounds<W: Reducible>(weights: &W, dist: &WeightDistribution, q: f64) -> Result<BoundsReport> {
    if !(q >= 1.0) {
        return Err(CascadeError::InvalidArgument(format!("bounds need q ≥ 1, got {q}")));
    }
    let ln_mq = dist.ln_moment(q);
    let ln_lower = weights.ln_depth_weighted_power_sum(ln_mq, q);
    let ln_upper = (q <= 2.0).then(|| {
        weights
            .kappa(dist.mean())
            .ln_depth_weighted_power_sum(ln_mq, q)
    });
    Ok(BoundsReport {
        q,
        lower: ln_lower.exp(),
        ln_lower,
        upper_core: ln_upper.map(f64::exp),
        ln_upper_core: ln_upper,
    })
}

/// One recorded step of the iterated reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineStage {
    pub stage: usize,
    pub exponent: f64,
    pub profile: LevelProfile,
    /// Law of `W^{2^stage}`.
    pub law: WeightDistribution,
    /// Comparison profile `b^{-2^stage k}` on depths `k ≤ n − stage`
    /// (the input profile itself at stage 0).
    pub ideal: LevelProfile,
    /// `profile / ideal` per depth; `None` where the ideal vanishes.
    pub ratio_to_ideal: Vec<Option<f64>>,
}

impl PipelineStage {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "stage": self.stage,
            "exponent": self.exponent,
            "profile": self.profile.coeffs(),
            "log_profile": self.profile.ln_coeffs(),
            "atoms": self.law.atoms(),
            "probs": self.law.probs(),
            "ratio_to_ideal": self.ratio_to_ideal,
        })
    }
}

/// Why the pipeline stopped before the exponent dropped below 2.
#[derive(Debug, Clone, PartialEq)]
pub enum PipelineHalt {
    /// The law is totally critical, so the strict moment inequality needed
    /// beyond the first reduction cannot hold.
    TotallyCritical { stage: usize },
    /// `E[W^{2^ℓ}] ≥ b^{2^ℓ − 1}` at a stage that needs the strict inequality.
    MomentCondition {
        stage: usize,
        moment: f64,
        threshold: f64,
        regime: Regime,
    },
}

impl PipelineHalt {
    pub fn to_error(&self) -> CascadeError {
        match self {
            PipelineHalt::TotallyCritical { .. } => CascadeError::TotallyCritical,
            PipelineHalt::MomentCondition {
                stage,
                moment,
                threshold,
                regime,
            } => CascadeError::Precondition(format!(
                "stage {stage}: E[W^{}] = {moment} is not below b^{} = {threshold} ({regime})",
                1u64 << stage,
                (1u64 << stage) - 1
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub base: u32,
    pub n: usize,
    pub q: f64,
    /// Regime of `(W, b, q)` itself.
    pub regime_at_q: Regime,
    pub stages: Vec<PipelineStage>,
    pub halt: Option<PipelineHalt>,
}

impl PipelineOutcome {
    pub fn exponents(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.exponent).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let halt = self.halt.as_ref().map(|h| match h {
            PipelineHalt::TotallyCritical { stage } => serde_json::json!({
                "stage": stage, "reason": "totally-critical"
            }),
            PipelineHalt::MomentCondition { stage, moment, threshold, regime } => serde_json::json!({
                "stage": stage, "reason": "moment-condition",
                "moment": moment, "threshold": threshold, "regime": regime
            }),
        });
        serde_json::json!({
            "base": self.base,
            "n": self.n,
            "q": self.q,
            "regime_at_q": self.regime_at_q,
            "stages": self.stages.iter().map(PipelineStage::to_json).collect::<Vec<_>>(),
            "halt": halt,
        })
    }
}

fn ratios(profile: &LevelProfile, ideal: &LevelProfile) -> Vec<Option<f64>> {
    let depth = profile.max_depth().max(ideal.max_depth());
    (0..=depth)
        .map(|k| {
            let id = ideal.ln_coeffs().get(k).copied().unwrap_or(f64::NEG_INFINITY);
            if id == f64::NEG_INFINITY {
                return None;
            }
            let p = profile.ln_coeffs().get(k).copied().unwrap_or(f64::NEG_INFINITY);
            Some((p - id).exp())
        })
        .collect()
}

/// Starting from `(α_n, W, q)`, reduces and halves the exponent while it is
/// at least 2, recording every stage. Reductions after the first need
/// `E[W^{2^ℓ}] < b^{2^ℓ − 1}`; if that fails the chain stops with a halt
/// report.
pub fn reduction_pipeline(
    base: u32,
    dist: &WeightDistribution,
    n: usize,
    q: f64,
) -> Result<PipelineOutcome> {
    if !(q >= 2.0) {
        return Err(CascadeError::InvalidArgument(format!("pipeline needs q ≥ 2, got {q}")));
    }
    let sf = StructureFunction::new(base, dist.clone())?;
    let regime_at_q = Regime::from_phi(sf.phi(q)?);
    let start = LevelProfile::cascade(base, n);
    let mut stages = vec![PipelineStage {
        stage: 0,
        exponent: q,
        ratio_to_ideal: ratios(&start, &start),
        ideal: start.clone(),
        profile: start,
        law: dist.clone(),
    }];
    let mut halt = None;
    loop {
        let cur = stages.last().unwrap();
        if cur.exponent < 2.0 {
            break;
        }
        let ell = cur.stage;
        if ell >= 1 {
            if sf.is_totally_critical() {
                halt = Some(PipelineHalt::TotallyCritical { stage: ell });
                break;
            }
            let power = (1u64 << ell) as f64;
            let phi = sf.phi(power)?;
            if phi >= -CLASSIFICATION_TOL {
                halt = Some(PipelineHalt::MomentCondition {
                    stage: ell,
                    moment: cur.law.mean(),
                    threshold: sf.threshold(power),
                    regime: Regime::from_phi(phi),
                });
                break;
            }
        }
        let red = reduce(&cur.profile, &cur.law);
        let next = ell + 1;
        let ideal = LevelProfile::power_decay(base, (1u64 << next) as f64, n.saturating_sub(next));
        stages.push(PipelineStage {
            stage: next,
            exponent: cur.exponent / 2.0,
            ratio_to_ideal: ratios(&red.beta, &ideal),
            ideal,
            profile: red.beta,
            law: red.squared_dist,
        });
    }
    Ok(PipelineOutcome {
        base,
        n,
        q,
        regime_at_q,
        stages,
        halt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{expand_profile, SparseTree, DEFAULT_VERTEX_CAP};
    use proptest::prelude::*;

    fn sqrt3_law() -> WeightDistribution {
        let s = 3f64.sqrt();
        WeightDistribution::new(vec![1.0 + s, 1.0 - 1.0 / s], vec![0.25, 0.75]).unwrap()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn cascade_profile_beta_closed_form() {
        for (b, dist) in [(2u32, sqrt3_law()), (3, WeightDistribution::totally_critical(3))] {
            let n = 6;
            let out = reduce(&LevelProfile::cascade(b, n), &dist);
            let var = dist.variance();
            let beta = out.beta.coeffs();
            assert_eq!(beta.len(), n, "support depth drops to n - 1");
            assert!(close(beta[0], 1.0 + var / b as f64, 1e-13));
            for (m, got) in beta.iter().enumerate().skip(1) {
                let want = var * (b as f64).powi(-1 - 2 * m as i32);
                assert!(close(*got, want, 1e-12), "m = {m}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn deterministic_driver_collapses_to_root() {
        let p = LevelProfile::new(2, &[0.5, 1.0, 2.0]).unwrap();
        let c = 1.5;
        let out = reduce(&p, &WeightDistribution::relaxed(vec![c], vec![1.0]).unwrap());
        let mass: f64 = 0.5 + 2.0 * c * 1.0 + 4.0 * c * c * 2.0;
        assert_eq!(out.beta.max_depth(), 0);
        assert!(close(out.beta.coeff(0), mass * mass, 1e-13));
        assert_eq!(out.var_x, 0.0);
    }

    #[test]
    fn hand_evaluated_small_profile() {
        let p = LevelProfile::new(2, &[1.0, 1.0]).unwrap();
        let x = WeightDistribution::new(vec![0.0, 2.0], vec![0.5, 0.5]).unwrap();
        let out = reduce(&p, &x);
        assert_eq!(out.beta.max_depth(), 0);
        assert!(close(out.beta.coeff(0), 11.0, 1e-14));
        assert_eq!(out.squared_dist.atoms(), &[0.0, 4.0]);
    }

    #[test]
    fn beta_tracks_ideal_profile_when_strictly_subcritical() {
        // X = W² with E[W²] < b: β/α_{2,n−1} is bounded above and below
        // uniformly in n, and the band stabilizes as n grows.
        let w = WeightDistribution::new(vec![0.5, 1.5], vec![0.5, 0.5]).unwrap();
        let x = w.squared();
        let band = |n: usize| {
            let out = reduce(&LevelProfile::power_decay(2, 2.0, n), &x);
            let ideal = LevelProfile::power_decay(2, 4.0, n - 1);
            let r: Vec<f64> = ratios(&out.beta, &ideal).into_iter().flatten().collect();
            assert_eq!(r.len(), n);
            r.iter().fold((f64::MAX, 0f64), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
        };
        let (lo16, hi16) = band(16);
        let (lo256, hi256) = band(256);
        assert!(close(lo16, lo256, 1e-9));
        assert!(hi16 <= hi256 && close(hi16, hi256, 1e-2));
        assert!(close(lo256, 0.125, 1e-9) && close(hi256, 8.0, 1e-9));
    }

    #[test]
    fn pipeline_exponent_chain() {
        let w = WeightDistribution::new(vec![0.5, 1.5], vec![0.5, 0.5]).unwrap();
        let out = reduction_pipeline(2, &w, 8, 4.0).unwrap();
        assert_eq!(out.exponents(), vec![4.0, 2.0, 1.0]);
        assert!(out.halt.is_none());
        assert_eq!(out.stages[2].law.atoms(), &[0.0625, 5.0625]);
        let out = reduction_pipeline(2, &w, 8, 3.0).unwrap();
        assert_eq!(out.exponents(), vec![3.0, 1.5]);
    }

    #[test]
    fn pipeline_refuses_totally_critical() {
        let out = reduction_pipeline(2, &WeightDistribution::totally_critical(2), 8, 4.0).unwrap();
        assert_eq!(out.exponents(), vec![4.0, 2.0]);
        assert_eq!(out.halt, Some(PipelineHalt::TotallyCritical { stage: 1 }));
        assert_eq!(out.halt.unwrap().to_error(), CascadeError::TotallyCritical);
    }

    #[test]
    fn pipeline_reports_regime_for_sqrt3_law() {
        let w = sqrt3_law();
        let m4 = w.moment(4.0);
        // Direct power sum: (1+√3)^4/4 + (1−1/√3)^4·3/4.
        let s = 3f64.sqrt();
        let direct = (1.0 + s).powi(4) / 4.0 + (1.0 - 1.0 / s).powi(4) * 0.75;
        assert!(close(m4, direct, 1e-14));
        let out = reduction_pipeline(2, &w, 8, 4.0).unwrap();
        assert_eq!(out.regime_at_q, Regime::Supercritical);
        match out.halt {
            Some(PipelineHalt::MomentCondition { stage: 1, regime: Regime::Critical, .. }) => {}
            other => panic!("unexpected halt {other:?}"),
        }
    }

    #[test]
    fn pipeline_json_shape() {
        let w = WeightDistribution::new(vec![0.5, 1.5], vec![0.5, 0.5]).unwrap();
        let out = reduction_pipeline(2, &w, 3, 2.0).unwrap();
        let j = out.to_json();
        let s0 = &j["stages"][0];
        assert_eq!(s0["stage"], 0);
        assert_eq!(s0["exponent"], 2.0);
        assert_eq!(s0["ratio_to_ideal"][0], serde_json::Value::Null);
        assert_eq!(s0["ratio_to_ideal"][3], 1.0);
        assert_eq!(j["stages"][1]["profile"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn bounds_examples() {
        // Root-only weight with X ≡ 1.
        let p = LevelProfile::new(2, &[3.0]).unwrap();
        let r = evaluate_bounds(&p, &WeightDistribution::deterministic_one(), 1.5).unwrap();
        assert!(close(r.lower, 3f64.powf(1.5), 1e-14));
        assert!(close(r.upper_core.unwrap(), 3f64.powf(1.5), 1e-14));

        // Critical cascade weight: lower = 1, upper_core = n + 1.
        for n in [1usize, 10, 100] {
            let r = evaluate_bounds(&LevelProfile::cascade(2, n), &WeightDistribution::totally_critical(2), 1.5)
                .unwrap();
            assert!(close(r.lower, 1.0, 1e-12));
            assert!(close(r.upper_core.unwrap(), (n + 1) as f64, 1e-12));
        }

        // Subcritical at q = 2: lower = (1.25/2)^n, upper omitted above 2.
        let w = WeightDistribution::new(vec![0.5, 1.5], vec![0.5, 0.5]).unwrap();
        for n in 1..6 {
            let r = evaluate_bounds(&LevelProfile::cascade(2, n), &w, 2.0).unwrap();
            assert!(close(r.lower, 0.625f64.powi(n as i32), 1e-13));
        }
        assert!(evaluate_bounds(&LevelProfile::cascade(2, 3), &w, 3.0).unwrap().upper_core.is_none());
        assert!(evaluate_bounds(&LevelProfile::cascade(2, 3), &w, 0.5).is_err());
    }

    #[test]
    fn bounds_survive_deep_profiles() {
        let r = evaluate_bounds(&LevelProfile::cascade(3, 4000), &WeightDistribution::totally_critical(3), 2.0)
            .unwrap();
        assert!(close(r.upper_core.unwrap(), 4001.0, 1e-8));
    }

    fn random_profile() -> impl Strategy<Value = (u32, Vec<f64>)> {
        (2u32..4, prop::collection::vec(0.0f64..2.0, 1..5))
    }

    fn small_law() -> impl Strategy<Value = WeightDistribution> {
        prop::collection::vec((0.0f64..3.0, 0.1f64..1.0), 1..4).prop_map(|pairs| {
            let total: f64 = pairs.iter().map(|p| p.1).sum();
            let (atoms, probs): (Vec<f64>, Vec<f64>) = pairs.iter().map(|(a, p)| (*a, p / total)).unzip();
            WeightDistribution::relaxed(atoms, probs).unwrap()
        })
    }

    proptest! {
        #[test]
        fn profile_and_sparse_reduction_agree((b, coeffs) in random_profile(), law in small_law()) {
            let p = LevelProfile::new(b, &coeffs).unwrap();
            let sparse = expand_profile(&p, p.max_depth(), DEFAULT_VERTEX_CAP).unwrap();
            let bp = reduce(&p, &law).beta;
            let bs = reduce(&sparse, &law).beta;
            for v in 0..bs.tree().len() {
                let want = bp.coeff(bs.tree().depth(v));
                prop_assert!(close(bs.alpha()[v], want, 1e-12) || (want < 1e-300 && bs.alpha()[v] < 1e-290));
            }
        }

        #[test]
        fn beta_root_dominates_squared_mean(coeffs in prop::collection::vec(0.0f64..2.0, 6), law in small_law()) {
            let tree = SparseTree::from_paths(&[vec![], vec![0], vec![1], vec![0, 0], vec![0, 1], vec![1, 0]]).unwrap();
            let w = SparseWeights::new(tree, coeffs).unwrap();
            let mean = w.root_kappa(law.mean());
            let out = reduce(&w, &law);
            prop_assert!(out.beta.alpha()[0] >= mean * mean * (1.0 - 1e-14));
            prop_assert!(out.beta.alpha().iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn lower_never_exceeds_upper_core((b, coeffs) in random_profile(), law in small_law(), q in 1.0f64..2.0) {
            let p = LevelProfile::new(b, &coeffs).unwrap();
            let r = evaluate_bounds(&p, &law, q).unwrap();
            prop_assert!(r.ln_lower <= r.ln_upper_core.unwrap() + 1e-12);
        }
    }
}
