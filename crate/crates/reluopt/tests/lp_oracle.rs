//! Cross-checks of the bounded-variable simplex against an independent
//! full-tableau implementation and against LP duality.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reluopt::lp::{LpModel, LpStatus, Relation, Sense, INF};

/// Random feasible bounded instances: objective must match the naive tableau
/// solver within 1e-6.
#[test]
fn random_lps_match_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    for case in 0..60 {
        let n = rng.gen_range(3..=20);
        let m = rng.gen_range(2..=30);
        let mut a = vec![vec![0.0; n]; m];
        let mut b = vec![0.0; m];
        for (i, row) in a.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            // x = 0 is feasible by construction.
            b[i] = rng.gen_range(0.5..4.0);
        }
        let ub: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..5.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();

        // Oracle sees the upper bounds as extra rows.
        let mut a_oracle = a.clone();
        let mut b_oracle = b.clone();
        for (j, &u) in ub.iter().enumerate() {
            let mut row = vec![0.0; n];
            row[j] = 1.0;
            a_oracle.push(row);
            b_oracle.push(u);
        }
        let expected = naive(&c, &a_oracle, &b_oracle);

        let mut lp = LpModel::new(n);
        for j in 0..n {
            lp.set_bounds(j, 0.0, ub[j]).unwrap();
        }
        for i in 0..m {
            let coeffs: Vec<(usize, f64)> = a[i].iter().copied().enumerate().collect();
            lp.add_row(coeffs, Relation::Le, b[i]).unwrap();
        }
        lp.set_objective(&c.iter().copied().enumerate().collect::<Vec<_>>(), Sense::Min).unwrap();
        let sol = lp.solve();
        assert_eq!(sol.status, LpStatus::Optimal, "case {case}");
        assert!(
            (sol.objective - expected).abs() <= 1e-6 * expected.abs().max(1.0),
            "case {case}: solver {} vs oracle {expected}",
            sol.objective
        );
    }
}

fn naive(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> f64 {
    common::naive_simplex_standard(c, a, b).expect("oracle instance must be bounded")
}

/// Strong duality on random feasible, bounded primal/dual pairs:
/// min c.x, A x >= b, x >= 0   vs   max b.y, A^T y <= c, y >= 0.
#[test]
fn duality_gap_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(7_777);
    for case in 0..40 {
        let n = rng.gen_range(2..=12);
        let m = rng.gen_range(2..=12);
        let mut a = vec![vec![0.0; n]; m];
        for row in a.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..2.0);
            }
        }
        // Feasible: b below A x0 for a nonnegative x0. Bounded: c > 0.
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|row| row.iter().zip(&x0).map(|(r, x)| r * x).sum::<f64>() - rng.gen_range(0.1..1.0))
            .collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..3.0)).collect();

        let mut primal = LpModel::new(n);
        for j in 0..n {
            primal.set_bounds(j, 0.0, INF).unwrap();
        }
        for i in 0..m {
            primal.add_row(a[i].iter().copied().enumerate().collect(), Relation::Ge, b[i]).unwrap();
        }
        primal.set_objective(&c.iter().copied().enumerate().collect::<Vec<_>>(), Sense::Min).unwrap();
        let p = primal.solve();
        assert_eq!(p.status, LpStatus::Optimal, "case {case} primal");

        let mut dual = LpModel::new(m);
        for i in 0..m {
            dual.set_bounds(i, 0.0, INF).unwrap();
        }
        for j in 0..n {
            let coeffs: Vec<(usize, f64)> = (0..m).map(|i| (i, a[i][j])).collect();
            dual.add_row(coeffs, Relation::Le, c[j]).unwrap();
        }
        dual.set_objective(&b.iter().copied().enumerate().collect::<Vec<_>>(), Sense::Max).unwrap();
        let d = dual.solve();
        assert_eq!(d.status, LpStatus::Optimal, "case {case} dual");

        assert!(
            (p.objective - d.objective).abs() <= 1e-6 * p.objective.abs().max(1.0),
            "case {case}: primal {} vs dual {}",
            p.objective,
            d.objective
        );
    }
}

/// Optimality certificate: the reported objective is consistent with c.x and
/// the point satisfies every row within the solver's feasibility tolerance.
#[test]
fn optimal_solution_is_feasible_and_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(31_415);
    for _ in 0..30 {
        let n = rng.gen_range(2..=15);
        let m = rng.gen_range(1..=20);
        let mut lp = LpModel::new(n);
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        for j in 0..n {
            lo[j] = rng.gen_range(-3.0..0.0);
            hi[j] = rng.gen_range(0.5..3.0);
            lp.set_bounds(j, lo[j], hi[j]).unwrap();
        }
        let mut rows = Vec::new();
        for _ in 0..m {
            let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
            // Keep 0 feasible: rhs > 0 for Le rows.
            let rhs = rng.gen_range(0.5..3.0);
            rows.push((coeffs.clone(), rhs));
            lp.add_row(coeffs, Relation::Le, rhs).unwrap();
        }
        let c: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-2.0..2.0))).collect();
        lp.set_objective(&c, Sense::Min).unwrap();
        let sol = lp.solve();
        assert_eq!(sol.status, LpStatus::Optimal);
        let cx: f64 = c.iter().map(|&(j, v)| v * sol.x[j]).sum();
        assert!((cx - sol.objective).abs() <= 1e-9 * cx.abs().max(1.0));
        for j in 0..n {
            assert!(sol.x[j] >= lo[j] - 1e-7 && sol.x[j] <= hi[j] + 1e-7);
        }
        for (coeffs, rhs) in rows {
            let ax: f64 = coeffs.iter().map(|&(j, v)| v * sol.x[j]).sum();
            assert!(ax <= rhs + 1e-7 * rhs.abs().max(1.0));
        }
    }
}
