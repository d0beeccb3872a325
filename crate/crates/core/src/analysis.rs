//! Growth-rate fits and per-regime verdicts.
//!
//! Predicted behaviour of `E[Y_n^q]`, by regime of `(b, W, q)`:
//!
//! | regime                         | statement                          | fit        |
//! |--------------------------------|------------------------------------|------------|
//! | totally critical               | slope `q − 1`                      | log-log    |
//! | critical, `q ≥ 2`              | slope `1`                          | log-log    |
//! | critical, `1 < q < 2`          | slope at most `1` (exploratory)    | log-log    |
//! | subcritical                    | bounded                            | sup / flat |
//! | supercritical, `q ≤ 2`         | rate `ln(E[W^q] / b^{q−1})`        | log-linear |
//! | supercritical, `q > 2`         | rate at least the same             | log-linear |

use serde::{Deserialize, Serialize};

use crate::error::{CascadeError, Result};
use crate::exact_moments::{cascade_moments, Domain, growth_series, subcritical_fixed_point};
use crate::monte_carlo::{estimate_moment, McConfig, DEFAULT_BATCHES, DEFAULT_NODE_CAP};
use crate::reduction::evaluate_bounds;
use crate::tree::LevelProfile;
use crate::weight_model::{Regime, StructureFunction, WeightDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMode {
    #[serde(rename = "log-log")]
    LogLog,
    #[serde(rename = "log-linear")]
    LogLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub target: f64,
    pub abs_error: f64,
    pub window: (usize, usize),
    pub mode: FitMode,
    pub points: usize,
}

/// Least squares of `ln m_n` against `ln n` or `n`.
pub fn fit_growth(series: &[(usize, f64)], mode: FitMode, target: f64) -> Result<GrowthFit> {
    if series.len() < 4 {
        return Err(CascadeError::DegenerateWindow(format!(
            "{} points, need at least 4",
            series.len()
        )));
    }
    if mode == FitMode::LogLog && series.iter().any(|&(n, _)| n == 0) {
        return Err(CascadeError::DegenerateWindow("log-log fit needs n ≥ 1".into()));
    }
    if series.iter().any(|(_, y)| !y.is_finite()) {
        return Err(CascadeError::DegenerateWindow("non-finite log-moment in window".into()));
    }
    let x = |n: usize| match mode {
        FitMode::LogLog => (n as f64).ln(),
        FitMode::LogLinear => n as f64,
    };
    let k = series.len() as f64;
    let mx = series.iter().map(|&(n, _)| x(n)).sum::<f64>() / k;
    let my = series.iter().map(|&(_, y)| y).sum::<f64>() / k;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(n, y) in series {
        let (dx, dy) = (x(n) - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if !(sxx > 0.0) {
        return Err(CascadeError::DegenerateWindow("all points share one abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let (lo, hi) = series
        .iter()
        .fold((usize::MAX, 0), |(lo, hi), &(n, _)| (lo.min(n), hi.max(n)));
    Ok(GrowthFit {
        slope,
        intercept,
        r_squared,
        target,
        abs_error: (slope - target).abs(),
        window: (lo, hi),
        mode,
        points: series.len(),
    })
}

/// Restricts a series to `lo ≤ n ≤ hi`.
pub fn window(series: &[(usize, f64)], lo: usize, hi: usize) -> Vec<(usize, f64)> {
    series.iter().copied().filter(|&(n, _)| n >= lo && n <= hi).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Exact,
    Mc,
}

/// Regime label including the totally critical case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeLabel {
    TotallyCritical,
    Critical,
    Subcritical,
    Supercritical,
}

impl RegimeLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegimeLabel::TotallyCritical => "totally-critical",
            RegimeLabel::Critical => "critical",
            RegimeLabel::Subcritical => "subcritical",
            RegimeLabel::Supercritical => "supercritical",
        }
    }
}

/// One growth check. Omitted fields take the defaults noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub name: String,
    pub base: u32,
    /// Literal `atoms=..;probs=..` or JSON law.
    pub dist: String,
    pub q: f64,
    pub engine: Engine,
    /// Exact engine: the table depth `N`.
    #[serde(default)]
    pub levels: Option<usize>,
    /// Fit window; exact default `[N/16, N]`.
    #[serde(default)]
    pub window: Option<(usize, usize)>,
    /// Slope tolerance, or the allowance above the bound for subcritical
    /// exact checks.
    pub tolerance: f64,
    /// Monte Carlo: samples per level and the shared seed.
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Declared regime; a mismatch fails the check before any computation.
    #[serde(default)]
    pub expect_regime: Option<RegimeLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub theorem: String,
    pub regime: String,
    pub engine: Engine,
    pub base: u32,
    pub dist: String,
    pub q: f64,
    pub mode: Option<FitMode>,
    pub target: f64,
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    pub window: (usize, usize),
    /// `sup_n m_n(q)` for subcritical exact checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sup_moment: Option<f64>,
    /// Worst relative deviation from the closed `q = 2` law.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_law_max_rel_error: Option<f64>,
    /// Levels where the depth-sum lower bound exceeds the exact moment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_bound_violations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_share: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heavy_tail_warning: Option<bool>,
    pub detail: String,
    #[serde(skip)]
    pub series: Vec<(usize, f64)>,
}

/// Largest relative deviation tolerated from the closed `q = 2` law.
pub const CLOSED_LAW_TOL: f64 = 1e-10;

/// `E[Y_n^2]` from the affine recursion `m_n = (E[W²]/b) m_{n−1} + (b−1)/b`.
pub fn closed_second_moment(base: u32, dist: &WeightDistribution, n: usize) -> f64 {
    ln_closed_second_moment(base, dist, n).exp()
}

/// Log of [`closed_second_moment`], finite beyond the float range.
pub fn ln_closed_second_moment(base: u32, dist: &WeightDistribution, n: usize) -> f64 {
    let b = base as f64;
    let a = dist.moment(2.0) / b;
    let c = (b - 1.0) / b;
    if (a - 1.0).abs() < 1e-14 {
        (1.0 + n as f64 * c).ln()
    } else if a < 1.0 {
        let an = a.powi(n as i32);
        (an + c * (1.0 - an) / (1.0 - a)).ln()
    } else {
        // m_n = a^n (1 + c/(a−1)) − c/(a−1)
        let r = c / (a - 1.0);
        n as f64 * a.ln() + (1.0 + r - r * (-(n as f64) * a.ln()).exp()).ln()
    }
}

fn classify(base: u32, dist: &WeightDistribution, q: f64) -> Result<(RegimeLabel, Regime)> {
    let sf = StructureFunction::new(base, dist.clone())?;
    let regime = sf.classify(q)?.regime;
    let label = if sf.is_totally_critical() {
        RegimeLabel::TotallyCritical
    } else {
        match regime {
            Regime::Critical => RegimeLabel::Critical,
            Regime::Subcritical => RegimeLabel::Subcritical,
            Regime::Supercritical => RegimeLabel::Supercritical,
        }
    };
    Ok((label, regime))
}

struct Prediction {
    theorem: &'static str,
    mode: FitMode,
    target: f64,
    /// Slope must lie at or above `target − tol` only.
    lower_only: bool,
    /// Slope must lie at or below `target + tol` only.
    upper_only: bool,
}

fn predict(label: RegimeLabel, base: u32, dist: &WeightDistribution, q: f64) -> Prediction {
    let two_sided = |theorem, mode, target| Prediction {
        theorem,
        mode,
        target,
        lower_only: false,
        upper_only: false,
    };
    match label {
        RegimeLabel::TotallyCritical => two_sided("totally-critical-growth", FitMode::LogLog, q - 1.0),
        RegimeLabel::Critical if q >= 2.0 => two_sided("critical-linear-growth", FitMode::LogLog, 1.0),
        RegimeLabel::Critical => Prediction {
            upper_only: true,
            ..two_sided("critical-fractional-growth", FitMode::LogLog, 1.0)
        },
        RegimeLabel::Subcritical => Prediction {
            upper_only: true,
            ..two_sided("subcritical-bounded", FitMode::LogLinear, 0.0)
        },
        RegimeLabel::Supercritical => {
            let rate = dist.ln_moment(q) - (q - 1.0) * (base as f64).ln();
            if q <= 2.0 {
                two_sided("supercritical-geometric-growth", FitMode::LogLinear, rate)
            } else {
                Prediction {
                    lower_only: true,
                    ..two_sided("supercritical-lower-bound", FitMode::LogLinear, rate)
                }
            }
        }
    }
}

/// Runs one check end to end.
pub fn theorem_report(spec: &CheckSpec) -> Result<Verdict> {
    let dist = WeightDistribution::parse(&spec.dist)?;
    if !(spec.q > 1.0) {
        return Err(CascadeError::InvalidArgument(format!("q must exceed 1, got {}", spec.q)));
    }
    if !(spec.tolerance >= 0.0) {
        return Err(CascadeError::InvalidArgument("tolerance must be non-negative".into()));
    }
    let (label, _) = classify(spec.base, &dist, spec.q)?;
    let pred = predict(label, spec.base, &dist, spec.q);
    let mut verdict = Verdict {
        name: spec.name.clone(),
        theorem: pred.theorem.into(),
        regime: label.as_str().into(),
        engine: spec.engine,
        base: spec.base,
        dist: dist.to_string(),
        q: spec.q,
        mode: Some(pred.mode),
        target: pred.target,
        slope: None,
        r_squared: None,
        tolerance: spec.tolerance,
        pass: false,
        window: (0, 0),
        sup_moment: None,
        closed_law_max_rel_error: None,
        lower_bound_violations: None,
        max_share: None,
        heavy_tail_warning: None,
        detail: String::new(),
        series: Vec::new(),
    };
    if let Some(expected) = spec.expect_regime {
        if expected != label {
            verdict.theorem = "precondition".into();
            verdict.mode = None;
            verdict.detail = format!("declared {}, classified {}", expected.as_str(), label.as_str());
            return Ok(verdict);
        }
    }
    match spec.engine {
        Engine::Exact => exact_verdict(spec, &dist, label, &pred, &mut verdict)?,
        Engine::Mc => mc_verdict(spec, &dist, &mut verdict)?,
    }
    let fitted = window(&verdict.series, verdict.window.0, verdict.window.1);
    let fit = fit_growth(&fitted, pred.mode, pred.target)?;
    verdict.slope = Some(fit.slope);
    verdict.r_squared = Some(fit.r_squared);

    let slope_ok = if pred.lower_only {
        fit.slope >= pred.target - spec.tolerance
    } else if pred.upper_only {
        fit.slope <= pred.target + spec.tolerance
    } else {
        fit.abs_error <= spec.tolerance
    };
    let mut pass = slope_ok;
    let mut notes = Vec::new();
    if label == RegimeLabel::Subcritical && spec.engine == Engine::Exact {
        // Bounded verdict: the supremum against the fixed point; the slope
        // is reported only.
        let limit = subcritical_fixed_point(spec.base, &dist, spec.q as usize)
            .expect("subcritical at q implies subcritical below q");
        verdict.target = limit;
        verdict.mode = None;
        let sup = verdict.sup_moment.unwrap_or(f64::INFINITY);
        pass = sup <= limit + spec.tolerance;
        notes.push(format!("sup_n m_n = {sup:e}, limit = {limit:e}"));
    } else if !slope_ok {
        notes.push(format!("slope {:.6} vs target {:.6}", fit.slope, pred.target));
    }
    if let Some(err) = verdict.closed_law_max_rel_error {
        if err > CLOSED_LAW_TOL {
            pass = false;
            notes.push(format!("closed law deviates by {err:e}"));
        }
    }
    if let Some(v) = verdict.lower_bound_violations {
        if v > 0 {
            pass = false;
            notes.push(format!("lower bound exceeded at {v} levels"));
        }
    }
    if label == RegimeLabel::Critical && spec.q < 2.0 {
        notes.push("exploratory: no two-sided rate is known for 1 < q < 2".into());
    }
    if verdict.heavy_tail_warning == Some(true) {
        notes.push("heavy tail: single samples carry > 10% of the total".into());
    }
    verdict.pass = pass;
    verdict.detail = notes.join("; ");
    Ok(verdict)
}

fn exact_verdict(
    spec: &CheckSpec,
    dist: &WeightDistribution,
    label: RegimeLabel,
    pred: &Prediction,
    verdict: &mut Verdict,
) -> Result<()> {
    if spec.q.fract() != 0.0 {
        return Err(CascadeError::InvalidArgument(format!(
            "exact engine needs an integer exponent, got {}",
            spec.q
        )));
    }
    let k = spec.q as usize;
    let levels = spec
        .levels
        .ok_or_else(|| CascadeError::InvalidArgument("exact engine needs `levels`".into()))?;
    let table = cascade_moments(spec.base, dist, k, levels)?;
    let series = growth_series(&table, k)?;
    verdict.window = spec.window.unwrap_or((levels / 16, levels));
    if pred.mode == FitMode::LogLog && verdict.window.0 == 0 {
        verdict.window.0 = 1;
    }
    if label == RegimeLabel::Subcritical {
        verdict.sup_moment = Some((0..=levels).map(|n| table.value(n, k)).fold(0.0, f64::max));
    }
    if k == 2 {
        let worst = (0..=levels)
            .map(|n| {
                let ln_exact = ln_closed_second_moment(spec.base, dist, n);
                match table.domain(n) {
                    Domain::Linear => (table.value(n, 2) / ln_exact.exp() - 1.0).abs(),
                    // An absolute log error is a relative value error.
                    Domain::Log => (table.ln_value(n, 2) - ln_exact).abs(),
                }
            })
            .fold(0.0, f64::max);
        verdict.closed_law_max_rel_error = Some(worst);
    }
    let violations = (1..=levels)
        .filter(|&n| {
            let lower = evaluate_bounds(&LevelProfile::cascade(spec.base, n), dist, spec.q)
                .expect("q > 1")
                .ln_lower;
            lower > table.ln_value(n, k) + 1e-10 * table.ln_value(n, k).abs().max(1.0)
        })
        .count();
    verdict.lower_bound_violations = Some(violations);
    verdict.series = series;
    Ok(())
}

fn mc_verdict(spec: &CheckSpec, dist: &WeightDistribution, verdict: &mut Verdict) -> Result<()> {
    let (lo, hi) = spec
        .window
        .ok_or_else(|| CascadeError::InvalidArgument("Monte Carlo engine needs `window`".into()))?;
    let samples = spec
        .samples
        .ok_or_else(|| CascadeError::InvalidArgument("Monte Carlo engine needs `samples`".into()))?;
    let seed = spec
        .seed
        .ok_or_else(|| CascadeError::InvalidArgument("Monte Carlo engine needs `seed`".into()))?;
    let mut series = Vec::new();
    let mut max_share: f64 = 0.0;
    for n in lo..=hi {
        let cfg = McConfig {
            seed,
            samples,
            batches: DEFAULT_BATCHES,
            n,
            q: spec.q,
            base: spec.base,
            dist: dist.clone(),
            node_cap: DEFAULT_NODE_CAP,
        };
        let est = estimate_moment(&cfg)?;
        max_share = max_share.max(est.max_share);
        series.push((n, est.mean.ln()));
    }
    verdict.window = (lo, hi);
    verdict.max_share = Some(max_share);
    verdict.heavy_tail_warning = Some(max_share > crate::monte_carlo::HEAVY_TAIL_SHARE);
    verdict.series = series;
    Ok(())
}

/// Series as CSV `n,log_moment`.
pub fn series_csv(series: &[(usize, f64)]) -> String {
    let mut out = String::from("n,log_moment\n");
    for (n, y) in series {
        out.push_str(&format!("{n},{}\n", crate::exact_moments::fmt_num(*y)));
    }
    out
}
