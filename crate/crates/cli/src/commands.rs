use std::path::{Path, PathBuf};

use cascade_core::analysis::series_csv;
use cascade_core::monte_carlo::{CSV_HEADER, DEFAULT_BATCHES, DEFAULT_NODE_CAP};
use cascade_core::oracle::{expectation_with, DEFAULT_OUTCOME_CAP};
use cascade_core::reduction::{evaluate_bounds, reduce_sparse_exact, BoundsReport};
use cascade_core::tree::DEFAULT_VERTEX_CAP;
use cascade_core::weight_model::DEFAULT_Q_MAX;
use cascade_core::{exact_moments as em, reduction};
use cascade_core::{
    cascade_moments, critical_two_point, estimate_moment, find_critical_exponent,
    reduction_pipeline, run_bundle, BundleConfig, CriticalExponent,
    EnumeratedSpace, LevelProfile, McConfig, MomentVector, SparseTree, SparseWeights,
    StructureFunction, WeightDistribution,
};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::output::{emit_csv, emit_json, pretty, read_file, require, resolve, write_file, CliError, CliResult};
use crate::Status;

fn d_base() -> u32 {
    2
}
fn d_q_max() -> f64 {
    DEFAULT_Q_MAX
}
fn d_grid() -> Vec<f64> {
    vec![1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0, 8.0]
}
fn d_low() -> f64 {
    0.5
}
fn d_batches() -> usize {
    DEFAULT_BATCHES
}
fn d_node_cap() -> u64 {
    DEFAULT_NODE_CAP
}
fn d_oracle_q() -> Vec<f64> {
    vec![1.0, 2.0, 2.5, 3.0]
}
fn d_cap() -> usize {
    DEFAULT_OUTCOME_CAP
}
fn d_tol() -> f64 {
    1e-10
}

fn parse_dist(text: &str) -> CliResult<WeightDistribution> {
    Ok(WeightDistribution::parse(text)?)
}

fn parse_relaxed(text: &str) -> CliResult<WeightDistribution> {
    Ok(WeightDistribution::parse_relaxed(text)?)
}

fn load_weights(path: &Path) -> CliResult<SparseWeights<f64>> {
    Ok(SparseWeights::from_text(&read_file(path)?)?)
}

/// A weight given as a file, as explicit level coefficients, or as the
/// cascade profile at depth `n`.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSource {
    /// Sparse weights file, one `path<TAB>weight` per line.
    #[arg(long, conflicts_with_all = ["profile", "n"])]
    #[serde(default)]
    pub weights: Option<PathBuf>,
    /// Level coefficients `a_0,a_1,...` on the regular tree.
    #[arg(long, value_delimiter = ',', conflicts_with = "n")]
    #[serde(default)]
    pub profile: Option<Vec<f64>>,
    /// Cascade profile `b^{-n}` on level `n`.
    #[arg(long)]
    #[serde(default)]
    pub n: Option<usize>,
}

enum Weight {
    Sparse(SparseWeights<f64>),
    Profile(LevelProfile),
}

impl WeightSource {
    fn load(&self, base: u32) -> CliResult<Weight> {
        match (&self.weights, &self.profile, self.n) {
            (Some(path), None, None) => Ok(Weight::Sparse(load_weights(path)?)),
            (None, Some(coeffs), None) => Ok(Weight::Profile(LevelProfile::new(base, coeffs)?)),
            (None, None, Some(n)) => Ok(Weight::Profile(LevelProfile::cascade(base, n))),
            _ => Err(CliError::config("give exactly one of --weights, --profile, --n")),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalQArgs {
    /// Weight law, `atoms=..;probs=..` or JSON.
    #[arg(long, required_unless_present_any = ["config", "invert"])]
    #[serde(default)]
    pub dist: Option<String>,
    #[arg(short, long, default_value_t = 2)]
    #[serde(default = "d_base")]
    pub base: u32,
    /// Upper end of the root search.
    #[arg(long, default_value_t = DEFAULT_Q_MAX)]
    #[serde(default = "d_q_max")]
    pub q_max: f64,
    #[arg(long, value_delimiter = ',', default_values_t = d_grid())]
    #[serde(default = "d_grid")]
    pub grid: Vec<f64>,
    /// Construct a two-point law whose critical exponent is this value
    /// instead of reading `--dist`.
    #[arg(long, conflicts_with = "dist")]
    #[serde(default)]
    pub invert: Option<f64>,
    /// Low atom of the constructed law.
    #[arg(long, default_value_t = 0.5)]
    #[serde(default = "d_low")]
    pub low: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn critical_q(args: CriticalQArgs) -> CliResult<Status> {
    let a = resolve(args.clone(), &args.config)?;
    let mut witness = Value::Null;
    let dist = match a.invert {
        Some(q) => {
            let w = critical_two_point(a.base, q, a.low)?;
            let sf = StructureFunction::new(a.base, w.clone())?;
            let interior: Vec<f64> = (1..20).map(|i| 1.0 + (q - 1.0) * i as f64 / 20.0).collect();
            witness = json!({
                "law": w.to_string(),
                "q": q,
                "mean": w.mean(),
                "moment_2": w.moment(2.0),
                "moment_q": w.moment(q),
                "threshold_q": sf.threshold(q),
                "strict_below_q": cascade_core::verify_strict_subcritical_interior(&sf, q, &interior)?,
            });
            w
        }
        None => parse_dist(&require(&a.dist, "dist")?)?,
    };
    let sf = StructureFunction::new(a.base, dist.clone())?;
    let phi: Vec<Value> = a
        .grid
        .iter()
        .map(|&q| Ok(json!({"q": q, "phi": sf.phi(q)?})))
        .collect::<CliResult<_>>()?;
    let found = find_critical_exponent(&sf, a.q_max)?;
    let (kind, q_crit, message) = match found {
        CriticalExponent::TotallyCritical => ("totally-critical", None, "totally critical".to_string()),
        CriticalExponent::Root(r) => ("root", Some(r), format!("critical exponent q = {r}")),
        CriticalExponent::SubcriticalThroughout { q_max } => (
            "subcritical-throughout",
            None,
            format!("no critical exponent ≤ {q_max}"),
        ),
        CriticalExponent::SupercriticalThroughout { q_max } => (
            "supercritical-throughout",
            None,
            format!("no critical exponent ≤ {q_max} (φ > 0 on the whole range)"),
        ),
    };
    emit_json(
        &json!({
            "config": a,
            "dist": dist.to_string(),
            "phi": phi,
            "result": {"kind": kind, "q_crit": q_crit, "message": message},
            "witness": witness,
        }),
        &args.out,
    )?;
    Ok(Status::Pass)
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactMomentsArgs {
    #[arg(long, required_unless_present = "config")]
    #[serde(default)]
    pub dist: Option<String>,
    #[arg(short, long, default_value_t = 2)]
    #[serde(default = "d_base")]
    pub base: u32,
    /// Highest integer order.
    #[arg(long, required_unless_present = "config")]
    #[serde(default)]
    pub q_max: Option<usize>,
    /// Deepest level `N`.
    #[arg(long, required_unless_present = "config")]
    #[serde(default)]
    pub levels: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn exact_moments(args: ExactMomentsArgs) -> CliResult<Status> {
    let a = resolve(args.clone(), &args.config)?;
    let dist = parse_dist(&require(&a.dist, "dist")?)?;
    let table = cascade_moments(a.base, &dist, require(&a.q_max, "q-max")?, require(&a.levels, "levels")?)?;
    emit_csv(&table.to_csv(), &a, &args.out)?;
    Ok(Status::Pass)
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaMomentsArgs {
    #[arg(long, required_unless_present = "config")]
    #[serde(default)]
    pub dist: Option<String>,
    #[arg(short, long, default_value_t = 2)]
    #[serde(default = "d_base")]
    pub base: u32,
    #[arg(long, required_unless_present = "config")]
    #[serde(default)]
    pub q_max: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub source: WeightSource,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn moments_json(m: &MomentVector) -> Value {
    let rows: Vec<Value> = (0..m.values.len())
        .map(|k| json!({"k": k, "value": m.values[k], "log_value": m.ln_values[k]}))
        .collect();
    json!({"domain": m.domain.as_str(), "moments": rows})
}

pub fn theta_moments(args: ThetaMomentsArgs) -> CliResult<Status> {
    let a = resolve(args.clone(), &args.config)?;
    let dist = parse_relaxed(&require(&a.dist, "dist")?)?;
    let q_max = require(&a.q_max, "q-max")?;
    let m = match a.source.load(a.base)? {
        Weight::Sparse(w) => em::theta_moments(&w, &dist, q_max)?,
        Weight::Profile(p) => em::theta_moments(&p, &dist, q_max)?,
    };
    emit_json(&json!({"config": a, "result": moments_json(&m)}), &args.out)?;
    Ok(Status::Pass)
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long, required_unless_present = "config")]
    #[serde(default)]
    pub dist: Option<String>,
    #[arg(short, long, default_value_t = 2)]
    #[serde(default = "d_base")]
    pub base: u32,
    /// Levels to estimate, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "config")]
    #[serde(default)]
    pub n: Vec<usize>,
    #[arg(long, required_unless_present = "config")]
    #[serde(default)]
    pub q: Option<f64>,
    #[arg(long, required_unless_present = "config")]
    #[serde(default)]
    pub samples: Option<usize>,
    #[arg(long, required_unless_present = "config")]
    #[serde(default)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_BATCHES)]
    #[serde(default = "d_batches")]
    pub batches: usize,
    /// Refuse levels with more than this many leaves per sample.
    #[arg(long, default_value_t = DEFAULT_NODE_CAP)]
    #[serde(default = "d_node_cap")]
    pub node_cap: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn simulate(args: SimulateArgs) -> CliResult<Status> {
    let a = resolve(args.clone(), &args.config)?;
    let dist = parse_dist(&require(&a.dist, "dist")?)?;
    if a.n.is_empty() {
        return Err(CliError::config("missing --n"));
    }
    let mut csv = format!("{CSV_HEADER}\n");
    for &n in &a.n {
        let mut cfg = McConfig::new(a.base, dist.clone(), n, require(&a.q, "q")?, require(&a.samples, "samples")?, require(&a.seed, "seed")?);
        cfg.batches = a.batches;
        cfg.node_cap = a.node_cap;
        let est = estimate_moment(&cfg)?;
        if est.heavy_tail_warning {
            eprintln!(
                "warning: n = {n}: one sample carries {:.1}% of the total; the interval is unreliable",
                100.0 * est.max_share
            );
        }
        csv.push_str(&est.csv_row(&cfg));
        csv.push('\n');
    }
    emit_csv(&csv, &a, &args.out)?;
    Ok(Status::Pass)
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceArgs {
    #[arg(long, required_unless_present = "config")]
    #[serde(default)]
    pub dist: Option<String>,
    #[arg(short, long, default_value_t = 2)]
    #[serde(default = "d_base")]
    pub base: u32,
    /// Sparse weights file; reduced `steps` times with the law squared after
    /// each step. Any non-negative law is accepted.
    #[arg(long, conflicts_with_all = ["n", "q"])]
    #[serde(default)]
    pub weights: Option<PathBuf>,
    /// Pipeline mode: start from the cascade profile at depth `n`.
    #[arg(long, requires = "q")]
    #[serde(default)]
    pub n: Option<usize>,
    /// Pipeline mode: starting exponent (≥ 2), halved at each stage.
    #[arg(long, requires = "n")]
    #[serde(default)]
    pub q: Option<f64>,
    /// Number of reduction steps (weights mode, default 1) or a cap on the
    /// recorded pipeline stages.
    #[arg(long)]
    #[serde(default)]
    pub steps: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn weights_json(w: &SparseWeights<f64>) -> Value {
    let tree = w.tree();
    let rows: Vec<Value> = (0..tree.len())
        .map(|v| {
            let path: Vec<String> = tree.path(v).iter().map(u32::to_string).collect();
            json!({"path": path.join("/"), "weight": w.get(v)})
        })
        .collect();
    Value::Array(rows)
}

pub fn reduce(args: ReduceArgs) -> CliResult<Status> {
    let a = resolve(args.clone(), &args.config)?;
    let text = require(&a.dist, "dist")?;
    match (&a.weights, a.n, a.q) {
        (Some(path), None, None) => {
            let mut dist = parse_relaxed(&text)?;
            let mut w = load_weights(path)?;
            let mut stages = vec![json!({"stage": 0, "atoms": dist.atoms(), "probs": dist.probs(), "weights": weights_json(&w)})];
            for stage in 1..=a.steps.unwrap_or(1) {
                let out = reduction::reduce(&w, &dist);
                w = out.beta;
                dist = out.squared_dist;
                stages.push(json!({
                    "stage": stage,
                    "mean_x": out.mean_x,
                    "var_x": out.var_x,
                    "atoms": dist.atoms(),
                    "probs": dist.probs(),
                    "weights": weights_json(&w),
                }));
            }
            emit_json(&json!({"config": a, "stages": stages}), &args.out)?;
            Ok(Status::Pass)
        }
        (None, Some(n), Some(q)) => {
            let dist = parse_dist(&text)?;
            let outcome = reduction_pipeline(a.base, &dist, n, q)?;
            let mut dump = outcome.to_json();
            if let Some(cap) = a.steps {
                if let Some(stages) = dump["stages"].as_array_mut() {
                    stages.truncate(cap + 1);
                }
            }
            emit_json(&json!({"config": a, "pipeline": dump}), &args.out)?;
            match &outcome.halt {
                None => Ok(Status::Pass),
                Some(h) => Ok(Status::Fail(format!("pipeline halted: {}", h.to_error()))),
            }
        }
        _ => Err(CliError::config("give either --weights, or --n with --q")),
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsArgs {
    #[arg(long, required_unless_present = "config")]
    #[serde(default)]
    pub dist: Option<String>,
    #[arg(short, long, default_value_t = 2)]
    #[serde(default = "d_base")]
    pub base: u32,
    #[arg(long, required_unless_present = "config")]
    #[serde(default)]
    pub q: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub source: WeightSource,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn bounds(args: BoundsArgs) -> CliResult<Status> {
    let a = resolve(args.clone(), &args.config)?;
    let dist = parse_relaxed(&require(&a.dist, "dist")?)?;
    let q = require(&a.q, "q")?;
    let report: BoundsReport = match a.source.load(a.base)? {
        Weight::Sparse(w) => evaluate_bounds(&w, &dist, q)?,
        Weight::Profile(p) => evaluate_bounds(&p, &dist, q)?,
    };
    emit_json(&json!({"config": a, "result": report}), &args.out)?;
    Ok(Status::Pass)
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    /// Bundle config: `{"checks": [...], "suites": [...]}`.
    pub config: PathBuf,
    /// Directory for `verdicts.json` and `series/<name>.csv`.
    #[arg(long, default_value = "verify-output")]
    pub out_dir: PathBuf,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub fn verify_theorems(args: VerifyArgs) -> CliResult<Status> {
    let bundle = BundleConfig::from_json(&read_file(&args.config)?)?;
    if let Some(c) = bundle.checks.iter().find(|c| !valid_name(&c.name)) {
        return Err(CliError::config(format!(
            "check name {:?} must be non-empty ASCII letters, digits, '-' or '_'",
            c.name
        )));
    }
    let report = run_bundle(&bundle)?;
    let mut verdicts = Vec::new();
    for v in &report.verdicts {
        let rel = format!("series/{}.csv", v.name);
        write_file(&args.out_dir.join(&rel), &series_csv(&v.series))?;
        let mut value = serde_json::to_value(v).expect("serializable");
        value["series_path"] = json!(rel);
        verdicts.push(value);
        println!(
            "{} {} [{}] slope={} target={} tol={}",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.theorem,
            v.slope.map_or("-".into(), |s| format!("{s:.6}")),
            v.target,
            v.tolerance
        );
    }
    for s in &report.suites {
        println!("{} {} ({} checks, {} failures)", if s.pass { "PASS" } else { "FAIL" }, s.suite, s.checks, s.failures);
    }
    let doc = json!({
        "config": bundle,
        "verdicts": verdicts,
        "suites": report.suites,
        "pass": report.pass,
    });
    write_file(&args.out_dir.join("verdicts.json"), &pretty(&doc))?;
    if report.pass {
        return Ok(Status::Pass);
    }
    let failed: Vec<&str> = report
        .verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| v.name.as_str())
        .chain(report.suites.iter().filter(|s| !s.pass).map(|s| s.suite.as_str()))
        .collect();
    Ok(Status::Fail(format!("failing: {}", failed.join(", "))))
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCheckArgs {
    #[arg(long, required_unless_present = "config")]
    #[serde(default)]
    pub dist: Option<String>,
    #[arg(short, long, default_value_t = 2)]
    #[serde(default = "d_base")]
    pub base: u32,
    /// Sparse weights file.
    #[arg(long, conflicts_with = "n")]
    #[serde(default)]
    pub weights: Option<PathBuf>,
    /// Use `Y_n`: weight `b^{-n}` on the leaves of the depth-`n` tree.
    #[arg(long)]
    #[serde(default)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = d_oracle_q())]
    #[serde(default = "d_oracle_q")]
    pub q: Vec<f64>,
    /// Largest outcome count to enumerate.
    #[arg(long, default_value_t = DEFAULT_OUTCOME_CAP)]
    #[serde(default = "d_cap")]
    pub cap: usize,
    /// Relative agreement required between engines.
    #[arg(long, default_value_t = 1e-10)]
    #[serde(default = "d_tol")]
    pub tolerance: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn rel_err(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

pub fn oracle_check(args: OracleCheckArgs) -> CliResult<Status> {
    let a = resolve(args.clone(), &args.config)?;
    let dist = parse_relaxed(&require(&a.dist, "dist")?)?;
    let w = match (&a.weights, a.n) {
        (Some(path), None) => load_weights(path)?,
        (None, Some(n)) => {
            let tree = SparseTree::regular(a.base, n, DEFAULT_VERTEX_CAP)?;
            let leaf = (a.base as f64).powi(-(n as i32));
            let alpha = (0..tree.len()).map(|v| if tree.depth(v) == n { leaf } else { 0.0 }).collect();
            SparseWeights::new(tree, alpha)?
        }
        _ => return Err(CliError::config("give exactly one of --weights, --n")),
    };
    let space = EnumeratedSpace::with_cap(w.tree().clone(), dist.to_law(), a.cap)?;
    let tol = a.tolerance;
    let mut pass = true;

    let mut rows = Vec::new();
    for &q in &a.q {
        let oracle = space.exact_moment(&w, q)?;
        let mut row = json!({"q": q, "oracle": oracle});
        if q.fract() == 0.0 && q >= 0.0 {
            let dp = em::theta_moments(&w, &dist, q as usize)?.values[q as usize];
            let err = rel_err(dp, oracle);
            pass &= err <= tol;
            row["recursion"] = json!(dp);
            row["rel_error"] = json!(err);
        }
        rows.push(row);
    }

    let dec = space.martingale_decomposition(&w)?;
    let (beta, squared) = reduce_sparse_exact(&w, &dist.to_law());
    let reduced = EnumeratedSpace::new(w.tree().clone(), dist.to_law())?
        .theta_values_mapped(&beta, |x| x * x)?;
    let identity = dec
        .square_function
        .iter()
        .zip(&reduced)
        .map(|(s, r)| rel_err(*s, *r))
        .fold(0.0, f64::max);
    let scale = dec.theta.iter().copied().fold(0.0, f64::max).max(1.0);
    let closed = dec
        .increments
        .iter()
        .zip(&dec.closed_form)
        .flat_map(|(d, c)| d.iter().zip(c).map(|(x, y)| (x - y).abs() / scale))
        .fold(0.0, f64::max);
    let mean = dec
        .increments
        .iter()
        .map(|d| expectation_with(&dec.probabilities, d).abs() / scale)
        .fold(0.0, f64::max);
    pass &= identity <= tol && closed <= tol && mean <= tol;

    emit_json(
        &json!({
            "config": a,
            "outcomes": space.outcome_count(),
            "moments": rows,
            "square_function_identity_max_rel_error": identity,
            "increment_closed_form_max_error": closed,
            "increment_mean_max_error": mean,
            "reduced_law": squared.atoms().iter().zip(squared.probs()).map(|(x, p)| json!([x, p])).collect::<Vec<_>>(),
            "pass": pass,
        }),
        &args.out,
    )?;
    Ok(if pass { Status::Pass } else { Status::Fail("engines disagree beyond tolerance".into()) })
}
