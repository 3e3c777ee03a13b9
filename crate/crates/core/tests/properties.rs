use lplsp::estimation::{lowrank_expand, pack_full, select_rank, symmetric_collapse, symmetric_expand, unpack_full};
use lplsp::model::{detect_steps, forward_naive, forward_vectorized, ExcitationSeries, TimeGrid};
use lplsp::solver::{minimize, numeric_jacobian, FnResidual, SolverOptions};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Strictly increasing grid from positive increments, optionally uniform.
fn grid_strategy(max_len: usize) -> impl Strategy<Value = TimeGrid> {
    (2..=max_len, any::<bool>(), 0.01f64..5.0).prop_flat_map(|(len, uniform, dt)| {
        prop::collection::vec(0.05f64..3.0, len - 1).prop_map(move |incs| {
            if uniform {
                TimeGrid::uniform(len, dt).unwrap()
            } else {
                let mut t = vec![0.0];
                for inc in incs {
                    t.push(t.last().unwrap() + inc);
                }
                TimeGrid::new(t).unwrap()
            }
        })
    })
}

/// Piecewise-constant rows: each sample keeps the previous level or jumps.
fn rows_strategy(sources: usize, len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec((any::<bool>(), 0.0f64..10.0), len).prop_map(|draws| {
            let mut row = vec![0.0];
            for (jump, level) in draws.into_iter().skip(1) {
                let prev = *row.last().unwrap();
                row.push(if jump { level } else { prev });
            }
            row
        }),
        sources,
    )
}

#[derive(Debug, Clone)]
struct Instance {
    grid: TimeGrid,
    powers: ExcitationSeries,
    r: Vec<f64>,
    k: Vec<f64>,
    t0: f64,
}

fn instance(max_sources: usize, max_len: usize) -> impl Strategy<Value = Instance> {
    (1..=max_sources, grid_strategy(max_len)).prop_flat_map(|(n, grid)| {
        let len = grid.len();
        (
            Just(grid),
            rows_strategy(n, len),
            prop::collection::vec(0.01f64..10.0, n),
            prop::collection::vec(0.001f64..2.0, n),
            -40.0f64..120.0,
        )
            .prop_map(|(grid, rows, r, k, t0)| Instance {
                grid,
                powers: ExcitationSeries::new(rows).unwrap(),
                r,
                k,
                t0,
            })
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_input_is_t0(inst in instance(4, 60)) {
        let zeros = ExcitationSeries::zeros(inst.powers.source_count(), inst.grid.len()).unwrap();
        for trace in [
            forward_naive(&zeros, &inst.grid, &inst.r, &inst.k, inst.t0).unwrap(),
            forward_vectorized(&zeros, &inst.grid, &inst.r, &inst.k, inst.t0).unwrap(),
        ] {
            prop_assert!(trace.iter().all(|&v| v == inst.t0));
        }
    }

    #[test]
    fn amplitude_linearity(inst in instance(4, 60), alpha in 0.01f64..20.0) {
        let scaled = ExcitationSeries::new(
            inst.powers.rows().iter().map(|row| row.iter().map(|p| alpha * p).collect()).collect(),
        ).unwrap();
        let base = forward_vectorized(&inst.powers, &inst.grid, &inst.r, &inst.k, inst.t0).unwrap();
        let big = forward_vectorized(&scaled, &inst.grid, &inst.r, &inst.k, inst.t0).unwrap();
        let scale = base.iter().map(|v| (v - inst.t0).abs()).fold(0.0, f64::max).max(1.0) * alpha;
        for (b, s) in base.iter().zip(&big) {
            prop_assert!(((s - inst.t0) - alpha * (b - inst.t0)).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn source_superposition(inst in instance(4, 60)) {
        let n = inst.powers.source_count();
        let all = forward_vectorized(&inst.powers, &inst.grid, &inst.r, &inst.k, inst.t0).unwrap();
        let mut sum = vec![-(n as f64 - 1.0) * inst.t0; inst.grid.len()];
        for j in 0..n {
            let rows = (0..n)
                .map(|q| if q == j { inst.powers.row(q).to_vec() } else { vec![0.0; inst.grid.len()] })
                .collect();
            let single = forward_naive(&ExcitationSeries::new(rows).unwrap(), &inst.grid, &inst.r, &inst.k, inst.t0).unwrap();
            sum.iter_mut().zip(&single).for_each(|(s, v)| *s += v);
        }
        prop_assert!(max_abs_diff(&all, &sum) <= 1e-10);
    }

    #[test]
    fn naive_matches_vectorized(inst in instance(4, 200)) {
        let naive = forward_naive(&inst.powers, &inst.grid, &inst.r, &inst.k, inst.t0).unwrap();
        let vect = forward_vectorized(&inst.powers, &inst.grid, &inst.r, &inst.k, inst.t0).unwrap();
        prop_assert!(max_abs_diff(&naive, &vect) <= 1e-10);
    }

    #[test]
    fn single_positive_step_is_monotone(
        grid in grid_strategy(80),
        at in 1usize..80,
        level in 0.01f64..10.0,
        r in 0.01f64..10.0,
        k in 0.001f64..2.0,
    ) {
        let at = at.min(grid.len() - 1);
        let row = (0..grid.len()).map(|m| if m >= at { level } else { 0.0 }).collect();
        let powers = ExcitationSeries::new(vec![row]).unwrap();
        let trace = forward_vectorized(&powers, &grid, &[r], &[k], 20.0).unwrap();
        prop_assert!(trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn steady_state_limit(
        grid in grid_strategy(80),
        levels in prop::collection::vec(0.0f64..10.0, 1..4),
        rk in prop::collection::vec((0.01f64..10.0, 0.001f64..2.0), 4),
    ) {
        let n = levels.len();
        let rows = levels.iter().map(|&p| {
            (0..grid.len()).map(|m| if m >= 1 { p } else { 0.0 }).collect()
        }).collect();
        let powers = ExcitationSeries::new(rows).unwrap();
        let (r, k): (Vec<f64>, Vec<f64>) = rk[..n].iter().copied().unzip();
        let trace = forward_naive(&powers, &grid, &r, &k, 20.0).unwrap();
        let t = grid.times();
        let elapsed = t[t.len() - 1] - t[0];
        let steady = 20.0 + (0..n).map(|j| levels[j] * r[j]).sum::<f64>();
        let bound: f64 = (0..n).map(|j| (levels[j] * r[j]).abs() * (-k[j] * elapsed).exp()).sum();
        prop_assert!((trace[t.len() - 1] - steady).abs() <= bound + 1e-12 * steady.abs());
    }

    #[test]
    fn detect_steps_reconstructs_quantized_rows(
        grid in grid_strategy(100),
        seed_levels in prop::collection::vec((any::<bool>(), 0u32..(1 << 20)), 100),
    ) {
        // Levels on a 2^-10 W lattice below 1024 W: every difference and
        // partial sum is exact, so reconstruction is bitwise.
        let mut row = vec![0.0];
        for &(jump, q) in seed_levels.iter().take(grid.len()).skip(1) {
            let prev = *row.last().unwrap();
            row.push(if jump { q as f64 / 1024.0 } else { prev });
        }
        let steps = detect_steps(&row, &grid).unwrap();
        let mut rebuilt = vec![0.0; row.len()];
        let mut level = 0.0;
        let mut next = steps.iter().peekable();
        for (m, slot) in rebuilt.iter_mut().enumerate() {
            if let Some(step) = next.next_if(|s| s.index == m) {
                prop_assert!(step.delta_power != 0.0);
                prop_assert_eq!(step.onset_time, grid.times()[m - 1]);
                level += step.delta_power;
            }
            *slot = level;
        }
        prop_assert_eq!(rebuilt, row);
    }

    #[test]
    fn detect_steps_reconstructs_arbitrary_rows_to_rounding(
        inst in instance(1, 100),
    ) {
        let row = inst.powers.row(0);
        let steps = detect_steps(row, &inst.grid).unwrap();
        let mut level = 0.0;
        let mut next = steps.iter().peekable();
        let scale = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (m, &p) in row.iter().enumerate() {
            if let Some(step) = next.next_if(|s| s.index == m) {
                level += step.delta_power;
            }
            prop_assert!((level - p).abs() <= 4.0 * f64::EPSILON * scale * m as f64);
        }
    }

    #[test]
    fn select_rank_is_monotone_in_tau(
        mut sigma in prop::collection::vec(0.0f64..100.0, 1..12),
        a in 0.001f64..=1.0,
        b in 0.001f64..=1.0,
    ) {
        sigma.sort_by(|x, y| y.total_cmp(x));
        prop_assume!(sigma[0] > 0.0);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(select_rank(&sigma, lo).unwrap() <= select_rank(&sigma, hi).unwrap());
    }

    #[test]
    fn pack_unpack_round_trip(m in 1usize..6, n in 1usize..6, seed in prop::collection::vec(0.001f64..100.0, 72)) {
        let r = DMatrix::from_fn(m, n, |i, j| seed[i * n + j]);
        let k = DMatrix::from_fn(m, n, |i, j| seed[36 + i * n + j]);
        let theta = pack_full(&r, &k).unwrap();
        let (r2, k2) = unpack_full(&theta, m, n).unwrap();
        prop_assert_eq!(&r2, &r);
        prop_assert_eq!(&k2, &k);
        prop_assert_eq!(pack_full(&r2, &k2).unwrap(), theta);
    }

    #[test]
    fn symmetric_expand_collapse_round_trip(n in 1usize..7, seed in prop::collection::vec(-10.0f64..10.0, 56)) {
        let theta = seed[..n * (n + 1)].to_vec();
        let (r, k) = symmetric_expand(&theta, n).unwrap();
        prop_assert_eq!(&r, &r.transpose());
        prop_assert_eq!(&k, &k.transpose());
        prop_assert_eq!(symmetric_collapse(&r, &k).unwrap(), theta);
    }

    #[test]
    fn lowrank_expand_respects_rank(
        m in 1usize..9,
        n in 1usize..7,
        rank in 1usize..4,
        seed in prop::collection::vec(-2.0f64..2.0, 2 * 3 * 15),
    ) {
        let rank = rank.min(m.min(n));
        let theta = &seed[..2 * rank * (m + n)];
        let (r, k) = lowrank_expand(theta, m, n, rank).unwrap();
        let a = DMatrix::from_row_slice(m, rank, &theta[..m * rank]);
        let b = DMatrix::from_row_slice(n, rank, &theta[m * rank..(m + n) * rank]);
        prop_assert!((&r - &a * b.transpose()).abs().max() <= 1e-12);
        for mat in [&r, &k] {
            let sv = mat.clone().singular_values();
            let mut sv: Vec<f64> = sv.iter().copied().collect();
            sv.sort_by(|x, y| y.total_cmp(x));
            if sv[0] > 0.0 && sv.len() > rank {
                prop_assert!(sv[rank] <= 1e-10 * sv[0]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jacobian_of_polynomials(coef in prop::collection::vec(-3.0f64..3.0, 6), x in prop::collection::vec(-2.0f64..2.0, 2)) {
        // r0 = c0 x0^2 + c1 x0 x1 + c2 x1^3, r1 = c3 x0 + c4 x1^2 + c5 x0^2 x1
        let c = coef.clone();
        let f = FnResidual::new(2, 2, move |t: &[f64], out: &mut [f64]| {
            out[0] = c[0] * t[0] * t[0] + c[1] * t[0] * t[1] + c[2] * t[1].powi(3);
            out[1] = c[3] * t[0] + c[4] * t[1] * t[1] + c[5] * t[0] * t[0] * t[1];
        });
        let c = &coef;
        let analytic = [
            [2.0 * c[0] * x[0] + c[1] * x[1], c[1] * x[0] + 3.0 * c[2] * x[1] * x[1]],
            [c[3] + 2.0 * c[5] * x[0] * x[1], 2.0 * c[4] * x[1] + c[5] * x[0] * x[0]],
        ];
        let fd_step = 1e-6;
        let jac = numeric_jacobian(&f, &x, fd_step).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let scale = analytic[i][j].abs().max(1.0);
                prop_assert!((jac[(i, j)] - analytic[i][j]).abs() <= 10.0 * fd_step * scale,
                    "J[{i},{j}] = {} vs {}", jac[(i, j)], analytic[i][j]);
            }
        }
    }

    #[test]
    fn linear_residuals_reach_least_squares(
        p in 1usize..6,
        extra in 0usize..6,
        seed in prop::collection::vec(-1.0f64..1.0, 11 * 5 + 11),
    ) {
        let m = p + extra;
        // Diagonally boosted so the problem is well conditioned.
        let a = DMatrix::from_fn(m, p, |i, j| seed[i * 5 + j] + if i == j { 3.0 } else { 0.0 });
        let b = DVector::from_fn(m, |i, _| 5.0 * seed[55 + i]);
        let expected = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * &b));
        let (a2, b2) = (a.clone(), b.clone());
        let f = FnResidual::new(p, m, move |t: &[f64], out: &mut [f64]| {
            let r = &a2 * DVector::from_column_slice(t) - &b2;
            out.copy_from_slice(r.as_slice());
        });
        let res = minimize(&f, &vec![0.0; p], &SolverOptions::default()).unwrap();
        prop_assert!(res.iterations <= p.max(10));
        for (x, e) in res.theta_star.iter().zip(expected.iter()) {
            prop_assert!((x - e).abs() <= 1e-8, "{x} vs {e}");
        }
        prop_assert!(res.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn bounds_hold_at_every_evaluation(
        target in prop::collection::vec(-3.0f64..3.0, 3),
        start in prop::collection::vec(0.0f64..1.0, 3),
    ) {
        let lower = vec![0.0; 3];
        let upper = vec![1.0; 3];
        let violations = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
        let seen = violations.clone();
        let tgt = target.clone();
        let f = FnResidual::new(3, 4, move |t: &[f64], out: &mut [f64]| {
            if t.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                seen.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            }
            for i in 0..3 {
                out[i] = t[i] - tgt[i];
            }
            out[3] = t[0] * t[1] - 0.25;
        });
        let opts = SolverOptions {
            lower_bounds: Some(lower),
            upper_bounds: Some(upper),
            ..SolverOptions::default()
        };
        let res = minimize(&f, &start, &opts).unwrap();
        prop_assert_eq!(violations.load(std::sync::atomic::Ordering::Relaxed), 0);
        prop_assert!(res.theta_star.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(res.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }
}
