use cascade_core::analysis::closed_second_moment;
use cascade_core::reduction::evaluate_bounds;
use cascade_core::tree::DEFAULT_VERTEX_CAP;
use cascade_core::{
    cascade_moments, critical_two_point, expand_profile, reduce, theta_moments, LevelProfile,
    WeightDistribution,
};

fn sqrt3_law() -> WeightDistribution {
    let s = 3f64.sqrt();
    WeightDistribution::new(vec![1.0 + s, 1.0 - 1.0 / s], vec![0.25, 0.75]).unwrap()
}

#[test]
fn closed_critical_law_to_ten_thousand_levels() {
    let table = cascade_moments(2, &sqrt3_law(), 2, 10_000).unwrap();
    for n in 0..=10_000 {
        let exact = 1.0 + n as f64 / 2.0;
        let got = table.value(n, 2);
        assert!((got - exact).abs() <= 1e-10 * exact, "n={n}: {got} vs {exact}");
    }
}

#[test]
fn closed_law_formula_agrees_with_the_table_in_every_regime() {
    let laws = [
        WeightDistribution::totally_critical(2),
        WeightDistribution::new(vec![0.5, 1.5], vec![0.5, 0.5]).unwrap(),
        WeightDistribution::new(vec![3.0, 0.0], vec![1.0 / 3.0, 2.0 / 3.0]).unwrap(),
    ];
    for dist in &laws {
        let table = cascade_moments(2, dist, 2, 300).unwrap();
        for n in [0, 1, 7, 64, 300] {
            let closed = closed_second_moment(2, dist, n);
            let got = table.value(n, 2);
            assert!((got - closed).abs() <= 1e-10 * closed, "{dist} n={n}");
        }
    }
}

#[test]
fn moments_increase_in_depth_and_are_log_convex_in_order() {
    let laws = [
        WeightDistribution::totally_critical(2),
        sqrt3_law(),
        WeightDistribution::new(vec![0.5, 1.5], vec![0.5, 0.5]).unwrap(),
        critical_two_point(2, 4.0, 0.5).unwrap(),
    ];
    for dist in &laws {
        let table = cascade_moments(2, dist, 6, 200).unwrap();
        for k in 2..=6 {
            for n in 1..=200 {
                assert!(table.ln_value(n, k) >= table.ln_value(n - 1, k) - 1e-12, "{dist} k={k} n={n}");
            }
        }
        for n in [1, 10, 200] {
            for k in 1..6 {
                let second = table.ln_value(n, k + 1) - 2.0 * table.ln_value(n, k) + table.ln_value(n, k - 1);
                assert!(second >= -1e-9, "{dist} n={n} k={k}");
            }
        }
    }
}

#[test]
fn depth_sum_lower_bound_never_exceeds_the_moment() {
    let laws = [
        WeightDistribution::totally_critical(2),
        sqrt3_law(),
        WeightDistribution::new(vec![0.5, 1.5], vec![0.5, 0.5]).unwrap(),
        WeightDistribution::new(vec![3.0, 0.0], vec![1.0 / 3.0, 2.0 / 3.0]).unwrap(),
    ];
    for dist in &laws {
        let table = cascade_moments(2, dist, 4, 128).unwrap();
        for k in 2..=4 {
            for n in 0..=128 {
                let lb = evaluate_bounds(&LevelProfile::cascade(2, n), dist, k as f64).unwrap();
                assert!(lb.ln_lower <= table.ln_value(n, k) + 1e-10, "{dist} k={k} n={n}");
            }
        }
    }
}

/// `E[Θ(X, α_n)^4] / E[Θ(X², β_n)^2]` stays within a bounded band along the
/// cascade profiles, as the square-function comparison predicts.
#[test]
fn fourth_moment_against_reduced_square_stays_bounded() {
    for dist in [critical_two_point(2, 4.0, 0.5).unwrap(), WeightDistribution::totally_critical(2)] {
        let ratios: Vec<f64> = (2..=8)
            .map(|n| {
                let alpha = LevelProfile::cascade(2, n);
                let red = reduce(&alpha, &dist);
                let top = theta_moments(&alpha, &dist, 4).unwrap().values[4];
                let bottom = theta_moments(&red.beta, &red.squared_dist, 2).unwrap().values[2];
                top / bottom
            })
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0f64), |(l, h), r| (l.min(*r), h.max(*r)));
        assert!(lo > 0.0 && hi / lo < 10.0, "{dist}: {ratios:?}");
    }
}

#[test]
fn profile_and_sparse_reductions_agree() {
    let dist = critical_two_point(2, 3.0, 0.4).unwrap();
    for profile in [LevelProfile::cascade(2, 5), LevelProfile::power_decay(2, 0.7, 5)] {
        let sparse = expand_profile(&profile, 5, DEFAULT_VERTEX_CAP).unwrap();
        let beta_p = reduce(&profile, &dist).beta;
        let beta_s = reduce(&sparse, &dist).beta;
        for v in 0..sparse.tree().len() {
            let want = beta_p.coeff(sparse.tree().depth(v));
            let got = *beta_s.get(v);
            assert!((got - want).abs() <= 1e-12 * want.max(1e-300), "v={v}: {got} vs {want}");
        }
        let mp = theta_moments(&profile, &dist, 3).unwrap();
        let ms = theta_moments(&sparse, &dist, 3).unwrap();
        for k in 0..=3 {
            assert!((mp.values[k] - ms.values[k]).abs() <= 1e-12 * mp.values[k]);
        }
    }
}
