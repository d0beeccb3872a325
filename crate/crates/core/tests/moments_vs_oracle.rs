use cascade_core::exact_moments::theta_moments;
use cascade_core::tree::DEFAULT_VERTEX_CAP;
use cascade_core::{cascade_moments, EnumeratedSpace, SparseTree, SparseWeights, WeightDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean-one law with two or three atoms.
fn random_law(rng: &mut ChaCha8Rng) -> WeightDistribution {
    let two_point = |rng: &mut ChaCha8Rng| {
        let lo: f64 = rng.random_range(0.0..0.95);
        let hi: f64 = rng.random_range(1.05..3.5);
        let p_lo = (hi - 1.0) / (hi - lo);
        (lo, hi, p_lo)
    };
    let (lo, hi, p) = two_point(rng);
    if rng.random_bool(0.5) {
        return WeightDistribution::new(vec![lo, hi], vec![p, 1.0 - p]).unwrap();
    }
    // Mix with a point mass at one.
    let w: f64 = rng.random_range(0.2..0.8);
    WeightDistribution::new(vec![lo, 1.0, hi], vec![w * p, 1.0 - w, w * (1.0 - p)]).unwrap()
}

fn leaf_weights(base: u32, n: usize) -> SparseWeights<f64> {
    let tree = SparseTree::regular(base, n, DEFAULT_VERTEX_CAP).unwrap();
    let leaf = (base as f64).powi(-(n as i32));
    let alpha = (0..tree.len()).map(|v| if tree.depth(v) == n { leaf } else { 0.0 }).collect();
    SparseWeights::new(tree, alpha).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

#[test]
fn cascade_table_matches_enumeration_on_random_laws() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut checked = 0;
    for _ in 0..24 {
        let dist = random_law(&mut rng);
        let (base, n) = match (dist.len(), rng.random_bool(0.5)) {
            (2, true) => (2, 3),
            (2, false) => (3, 2),
            _ => (2, 2),
        };
        let table = cascade_moments(base, &dist, 4, n).unwrap();
        let w = leaf_weights(base, n);
        let space = EnumeratedSpace::from_distribution(w.tree().clone(), &dist).unwrap();
        for k in 1..=4 {
            let oracle = space.int_moment(&w, k).unwrap();
            assert!(rel(table.value(n, k), oracle) < 1e-12, "{dist} b={base} n={n} k={k}");
        }
        checked += 1;
    }
    assert!(checked >= 20);
}

#[test]
fn sparse_theta_moments_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..20 {
        let dist = random_law(&mut rng);
        let depth = if dist.len() == 2 { 3 } else { 2 };
        let tree = SparseTree::regular(2, depth, DEFAULT_VERTEX_CAP).unwrap();
        let alpha: Vec<f64> = (0..tree.len()).map(|_| rng.random_range(0.0..2.0)).collect();
        let w = SparseWeights::new(tree, alpha).unwrap();
        let dp = theta_moments(&w, &dist, 3).unwrap();
        let space = EnumeratedSpace::from_distribution(w.tree().clone(), &dist).unwrap();
        for k in 1..=3 {
            let oracle = space.int_moment(&w, k).unwrap();
            assert!(rel(dp.values[k], oracle) < 1e-12, "{dist} k={k}");
        }
    }
}

#[test]
fn fractional_oracle_brackets_integer_neighbours() {
    let dist = WeightDistribution::totally_critical(2);
    let w = leaf_weights(2, 3);
    let space = EnumeratedSpace::from_distribution(w.tree().clone(), &dist).unwrap();
    let m2 = space.int_moment(&w, 2).unwrap();
    let m3 = space.int_moment(&w, 3).unwrap();
    let m25 = space.exact_moment(&w, 2.5).unwrap();
    assert!(m2 < m25 && m25 < m3);
    // Log-convexity in q gives m_{2.5} ≤ sqrt(m_2 m_3).
    assert!(m25 <= (m2 * m3).sqrt() * (1.0 + 1e-12));
}
