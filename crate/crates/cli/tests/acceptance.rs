//! Acceptance suite: one pass/fail line per criterion, with its runtime.
//! Checks 3 to 9 read their parameters from the committed bundle and pin them
//! against the values below before running.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cascade_core::suites::{bounds_suite, identity_suite, increment_suite, BOUND_EXPONENTS, LINEAR_DRIFT_TOL, LINEAR_WINDOW};
use cascade_core::{
    cascade_moments, critical_two_point, is_totally_critical, theorem_report, BundleConfig, CheckSpec, Engine,
    SuiteSpec, Verdict, WeightDistribution,
};

const SEED: u64 = 20261015;

struct Outcome {
    pass: bool,
    detail: String,
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn bundle() -> BundleConfig {
    let text = std::fs::read_to_string(manifest_dir().join("configs/acceptance.json")).expect("committed config");
    BundleConfig::from_json(&text).expect("valid bundle")
}

fn check<'a>(b: &'a BundleConfig, name: &str) -> &'a CheckSpec {
    b.checks.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("check {name} missing"))
}

/// Exact check with the window and depth every exact criterion shares.
fn pinned_exact(c: &CheckSpec, q: f64, tol: f64) -> bool {
    c.engine == Engine::Exact && c.q == q && c.tolerance == tol && c.levels == Some(4096) && c.window == Some((256, 4096))
}

fn verdict_line(v: &Verdict) -> String {
    format!(
        "{} slope={} target={:.6} tol={}",
        v.name,
        v.slope.map_or("-".into(), |s| format!("{s:.6}")),
        v.target,
        v.tolerance
    )
}

fn run_verdicts(specs: &[&CheckSpec], pinned: bool) -> (Vec<Verdict>, Outcome) {
    let verdicts: Vec<Verdict> = specs.iter().map(|c| theorem_report(c).expect("check runs")).collect();
    let pass = pinned && verdicts.iter().all(|v| v.pass);
    let mut detail: Vec<String> = verdicts.iter().map(verdict_line).collect();
    if !pinned {
        detail.push("committed parameters differ from the pinned ones".into());
    }
    (verdicts, Outcome { pass, detail: detail.join("; ") })
}

fn identity(b: &BundleConfig) -> Outcome {
    let (instances, seed) = b
        .suites
        .iter()
        .find_map(|s| match s {
            SuiteSpec::Identity { instances, seed } => Some((*instances, *seed)),
            _ => None,
        })
        .expect("identity suite configured");
    let r = identity_suite(instances, seed).expect("suite runs");
    Outcome {
        pass: r.pass && r.checks >= 50,
        detail: format!("{} instances, {} failures, worst float error {:e}", r.checks, r.failures, r.worst_float_error),
    }
}

fn increments(b: &BundleConfig) -> Outcome {
    let (instances, seed) = b
        .suites
        .iter()
        .find_map(|s| match s {
            SuiteSpec::Increments { instances, seed } => Some((*instances, *seed)),
            _ => None,
        })
        .expect("increment suite configured");
    let r = increment_suite(instances, seed).expect("suite runs");
    Outcome {
        pass: r.pass,
        detail: format!("{} instances, {} failures, worst float error {:e}", r.checks, r.failures, r.worst_float_error),
    }
}

fn tc_dyadic(b: &BundleConfig) -> Outcome {
    let (q2, q4) = (check(b, "tc-dyadic-q2"), check(b, "tc-dyadic-q4"));
    let pinned = pinned_exact(q2, 2.0, 0.01) && pinned_exact(q4, 4.0, 0.2);
    let (v, mut out) = run_verdicts(&[q2, q4], pinned);
    let closed = v[0].closed_law_max_rel_error.unwrap_or(f64::INFINITY);
    out.pass &= closed <= 1e-10;
    out.detail.push_str(&format!("; closed law error {closed:e}"));
    out
}

fn tc_integer(b: &BundleConfig) -> Outcome {
    let c = check(b, "tc-integer-q3");
    run_verdicts(&[c], pinned_exact(c, 3.0, 0.2)).1
}

fn tc_fractional(b: &BundleConfig) -> Outcome {
    let c = check(b, "tc-fractional-q2_5");
    let pinned = c.engine == Engine::Mc
        && c.q == 2.5
        && c.tolerance == 0.3
        && c.window == Some((8, 16))
        && c.samples == Some(10_000)
        && c.seed == Some(SEED);
    let (v, mut out) = run_verdicts(&[c], pinned);
    out.detail.push_str(&format!(
        "; max_share {:.4}, heavy-tail warning {}",
        v[0].max_share.unwrap_or(f64::NAN),
        v[0].heavy_tail_warning.unwrap_or(true)
    ));
    out
}

fn critical_sqrt3(b: &BundleConfig) -> Outcome {
    let c = check(b, "critical-sqrt3-q2");
    let dist = WeightDistribution::parse(&c.dist).expect("law parses");
    let s = 3f64.sqrt();
    // Atoms are stored in increasing order.
    let literal_ok = (dist.atoms()[0] - (1.0 - 1.0 / s)).abs() < 1e-14
        && (dist.atoms()[1] - (1.0 + s)).abs() < 1e-14
        && dist.probs() == [0.75, 0.25];
    let (_, mut out) = run_verdicts(&[c], pinned_exact(c, 2.0, 0.01) && literal_ok);
    let table = cascade_moments(2, &dist, 2, 4096).expect("table");
    let worst = (0..=4096)
        .map(|n| {
            let want = 1.0 + n as f64 / 2.0;
            (table.value(n, 2) - want).abs() / want
        })
        .fold(0.0, f64::max);
    out.pass &= worst <= 1e-10;
    out.detail.push_str(&format!("; max |m_n - (1 + n/2)| / (1 + n/2) = {worst:e}"));
    out
}

fn critical_witness(b: &BundleConfig) -> Outcome {
    let c = check(b, "critical-witness-q4");
    let committed = WeightDistribution::parse(&c.dist).expect("law parses");
    let solved = critical_two_point(2, 4.0, 0.5).expect("solver converges");
    let same = committed
        .atoms()
        .iter()
        .chain(committed.probs())
        .zip(solved.atoms().iter().chain(solved.probs()))
        .all(|(x, y)| (x - y).abs() <= 1e-14);
    let (m1, m2, m4) = (committed.mean(), committed.moment(2.0), committed.moment(4.0));
    let law_ok = same
        && (m1 - 1.0).abs() < 1e-12
        && (m4 - 8.0).abs() < 1e-9
        && m2 < 2.0
        && !is_totally_critical(&committed, 2);
    let (_, mut out) = run_verdicts(&[c], pinned_exact(c, 4.0, 0.15) && law_ok);
    out.detail.push_str(&format!("; E[W^2] = {m2:.6}, E[W^4] = {m4:.12}, matches solver: {same}"));
    out
}

fn subcritical(b: &BundleConfig) -> Outcome {
    let (e, m) = (check(b, "subcritical-q2"), check(b, "subcritical-mc-q1_7"));
    let pinned = e.engine == Engine::Exact
        && e.q == 2.0
        && e.tolerance == 1e-9
        && m.engine == Engine::Mc
        && m.q == 1.7
        && m.tolerance == 0.05
        && m.window.is_some_and(|(_, hi)| hi <= 16);
    let (v, mut out) = run_verdicts(&[e, m], pinned);
    let sup = v[0].sup_moment.unwrap_or(f64::INFINITY);
    out.pass &= sup <= 4.0 / 3.0 + 1e-9;
    out.detail.push_str(&format!("; sup m_n(2) = {sup}"));
    out
}

fn supercritical(b: &BundleConfig) -> Outcome {
    let c = check(b, "supercritical-q2");
    let pinned = c.engine == Engine::Exact && c.q == 2.0 && c.tolerance == 1e-3 && c.levels == Some(4096);
    let (v, mut out) = run_verdicts(&[c], pinned);
    let dist = WeightDistribution::parse(&c.dist).expect("law parses");
    let table = cascade_moments(2, &dist, 2, 4096).expect("table");
    // ln(2·1.5^n − 1) without overflow; a log gap of ε is a relative gap of ε.
    let worst = (0..=4096)
        .map(|n| {
            let ln_want = n as f64 * 1.5f64.ln() + (2.0 - 1.5f64.powi(-(n as i32))).ln();
            (table.ln_value(n, 2) - ln_want).abs()
        })
        .fold(0.0, f64::max);
    let violations = v[0].lower_bound_violations.unwrap_or(usize::MAX);
    out.pass &= worst <= 1e-10 && violations == 0 && (v[0].target - 1.5f64.ln()).abs() < 1e-15;
    out.detail.push_str(&format!("; closed-law log error {worst:e}, lower-bound violations {violations}"));
    out
}

fn bounds(b: &BundleConfig) -> Outcome {
    let (configs, seed) = b
        .suites
        .iter()
        .find_map(|s| match s {
            SuiteSpec::Bounds { configs, seed } => Some((*configs, *seed)),
            _ => None,
        })
        .expect("bound suite configured");
    let r = bounds_suite(configs, seed).expect("suite runs");
    let pinned = BOUND_EXPONENTS == [1.25, 1.5, 2.0] && LINEAR_WINDOW == [64, 128, 256, 512, 1024] && LINEAR_DRIFT_TOL == 0.05;
    Outcome {
        pass: r.pass && configs >= 10 && pinned,
        detail: format!("{} checks, {} failures; {}", r.checks, r.failures, r.detail),
    }
}

fn run_cli(threads: usize, out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_cascade-lab"))
        .arg("--threads")
        .arg(threads.to_string())
        .arg("verify-theorems")
        .arg(manifest_dir().join("configs/acceptance.json"))
        .arg("--out-dir")
        .arg(out)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable").flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn reproducible(_: &BundleConfig) -> Outcome {
    let tmp = tempfile::tempdir().expect("temp dir");
    let (a, b) = (tmp.path().join("one"), tmp.path().join("four"));
    let ran = run_cli(1, &a) && run_cli(4, &b);
    let (fa, fb) = (read_tree(&a), read_tree(&b));
    let same = ran && !fa.is_empty() && fa == fb;
    Outcome {
        pass: same,
        detail: format!("--threads 1 vs --threads 4: {} files, byte-identical: {same}", fa.len()),
    }
}

type Criterion = (u32, &'static str, Option<Duration>, fn(&BundleConfig) -> Outcome);

fn main() {
    let bundle = bundle();
    let criteria: [Criterion; 11] = [
        (1, "square-function identity suite", Some(Duration::from_secs(30)), identity),
        (2, "martingale increment suite", Some(Duration::from_secs(30)), increments),
        (3, "totally critical, dyadic q = 2, 4", Some(Duration::from_secs(10)), tc_dyadic),
        (4, "totally critical, q = 3", Some(Duration::from_secs(10)), tc_integer),
        (5, "totally critical, q = 2.5 by Monte Carlo", Some(Duration::from_secs(300)), tc_fractional),
        (6, "critical q = 2, closed law", None, critical_sqrt3),
        (7, "critical q = 4 witness", None, critical_witness),
        (8, "subcritical boundedness", None, subcritical),
        (9, "supercritical geometric growth", None, supercritical),
        (10, "bound sandwich", None, bounds),
        (11, "reproducible artifacts", None, reproducible),
    ];
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        let start = Instant::now();
        let mut out = f(&bundle);
        let took = start.elapsed();
        if let Some(limit) = limit {
            if took > limit {
                out.pass = false;
                out.detail.push_str(&format!("; over the {limit:?} budget"));
            }
        }
        failed += usize::from(!out.pass);
        println!(
            "criterion {id:>2} {} {name} ({:.2} s): {}",
            if out.pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            out.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
