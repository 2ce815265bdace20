use super::*;
use num_complex::Complex64;
use proptest::prelude::*;

fn joint(weights: &[f64]) -> JointState {
    JointState::form(&QuantumState::from_weights(weights).unwrap())
}

/// Brute force over every integer vector summing to `m`: minimal L1 distance
/// to m·w, ties broken towards the lexicographically largest vector (extra
/// units to the lowest index).
fn brute_force_quantize(weights: &[f64], m: u64) -> Vec<u64> {
    fn rec(n: usize, left: u64, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if n == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=left).rev() {
            prefix.push(k);
            rec(n - 1, left - k, prefix, out);
            prefix.pop();
        }
    }
    let mut all = Vec::new();
    rec(weights.len(), m, &mut Vec::new(), &mut all);
    let cost = |k: &Vec<u64>| -> f64 {
        k.iter().zip(weights).map(|(&k, w)| (k as f64 - m as f64 * w).abs()).sum()
    };
    let best = all.iter().map(cost).fold(f64::INFINITY, f64::min);
    // `all` is generated in lexicographically decreasing order
    all.into_iter().find(|k| cost(k) <= best + 1e-9).unwrap()
}

#[test]
fn quantize_examples() {
    assert_eq!(quantize_weights(&[0.5, 0.5], 10).unwrap(), vec![5, 5]);
    assert_eq!(quantize_weights(&[0.3, 0.7], 1000).unwrap(), vec![300, 700]);
    let third = 1.0 / 3.0;
    let oracle = brute_force_quantize(&[third; 3], 10);
    assert_eq!(oracle, vec![4, 3, 3]);
    assert_eq!(quantize_weights(&[third; 3], 10).unwrap(), oracle);
}

#[test]
fn quantize_errors() {
    assert!(matches!(
        quantize_weights(&[0.01, 0.99], 10),
        Err(WalkError::DegenerateGrid { state: 0, resolution: 10, .. })
    ));
    // with a fine enough grid a tiny weight is allowed to round away
    assert_eq!(quantize_weights(&[0.001, 0.999], 100).unwrap(), vec![0, 100]);
    assert!(matches!(quantize_weights(&[0.5, 0.6], 10), Err(WalkError::State(_))));
    assert!(matches!(quantize_weights(&[0.5, 0.5], 1), Err(WalkError::InvalidConfig(_))));
}

proptest! {
    #[test]
    fn quantize_matches_brute_force(raw in prop::collection::vec(0.0f64..1.0, 2..5), m in 2u64..14) {
        let sum: f64 = raw.iter().sum();
        prop_assume!(sum > 1e-3);
        let w: Vec<f64> = raw.iter().map(|x| x / sum).collect();
        match quantize_weights(&w, m) {
            Ok(k) => {
                let oracle = brute_force_quantize(&w, m);
                let cost = |k: &[u64]| -> f64 {
                    k.iter().zip(&w).map(|(&k, w)| (k as f64 - m as f64 * w).abs()).sum()
                };
                prop_assert!((cost(&k) - cost(&oracle)).abs() < 1e-9);
                prop_assert_eq!(k.iter().sum::<u64>(), m);
            }
            Err(WalkError::DegenerateGrid { .. }) => prop_assert!(m < 10 * w.len() as u64),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn traced_and_fast_paths_agree(k0 in 1u64..200, m in 200u64..400, seed in any::<u64>()) {
        let config = WalkConfig::new(m, seed).unwrap();
        let w = [k0 as f64 / m as f64, (m - k0) as f64 / m as f64];
        let mut fast = joint(&w);
        let mut traced = joint(&w);
        let a = run_walk(&mut fast, &config, &mut trial_rng(seed, 0)).unwrap();
        let b = run_walk_traced(&mut traced, &config, &mut trial_rng(seed, 0), |_, _| {}).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(fast, traced);
    }
}

#[test]
fn single_step_from_one_one() {
    let mut rng = trial_rng(5, 0);
    let trials = 20_000;
    let mut first_wins = 0;
    for _ in 0..trials {
        let mut grid = [1u64, 1];
        let mut alive = [true, true];
        let gone = walk_step(&mut grid, &mut alive, &mut rng).unwrap();
        assert!(grid == [0, 2] || grid == [2, 0]);
        assert_eq!(gone, Some(if grid[0] == 0 { 0 } else { 1 }));
        assert!(!alive[gone.unwrap()]);
        first_wins += (grid[0] == 2) as u32;
    }
    let f = first_wins as f64 / trials as f64;
    assert!((f - 0.5).abs() < 4.0 * (0.25 / trials as f64).sqrt(), "f = {f}");
}

#[test]
fn walk_step_needs_a_pair() {
    let mut grid = [0u64, 10];
    let mut alive = [false, true];
    assert_eq!(
        walk_step(&mut grid, &mut alive, &mut trial_rng(0, 0)),
        Err(WalkError::NoAlivePair { alive: 1 })
    );
    assert_eq!(grid, [0, 10]);
}

#[test]
fn single_steps_are_a_martingale() {
    let start = [40u64, 25, 20, 15];
    let trials = 100_000;
    let mut rng = trial_rng(17, 3);
    let mut sums = [0f64; 4];
    let mut sq = [0f64; 4];
    for _ in 0..trials {
        let mut grid = start;
        let mut alive = [true; 4];
        walk_step(&mut grid, &mut alive, &mut rng).unwrap();
        assert_eq!(grid.iter().sum::<u64>(), 100);
        for i in 0..4 {
            let d = grid[i] as f64 - start[i] as f64;
            sums[i] += d;
            sq[i] += d * d;
        }
    }
    for i in 0..4 {
        let mean = sums[i] / trials as f64;
        let se = (sq[i] / trials as f64 - mean * mean).sqrt() / (trials as f64).sqrt();
        assert!(mean.abs() < 4.0 * se, "state {i}: mean drift {mean}, se {se}");
    }
}

#[test]
fn start_at_vertex() {
    let mut j = joint(&[1.0, 0.0]);
    let out = run_walk(&mut j, &WalkConfig::default(), &mut trial_rng(0, 0)).unwrap();
    assert_eq!(out.winner, 0);
    assert_eq!(out.steps_taken, 0);
    assert_eq!(out.elimination_order, vec![Elimination { state: 1, step: 0 }]);
    assert_eq!(j.cross(0, 1), Complex64::new(0.0, 0.0));
}

#[test]
fn outcome_structure() {
    let config = WalkConfig::new(60, 9).unwrap();
    for t in 0..200 {
        let mut j = joint(&[0.2, 0.3, 0.1, 0.4]);
        let out = run_walk(&mut j, &config, &mut trial_rng(9, t)).unwrap();
        assert_eq!(out.elimination_order.len(), 3);
        assert!(out.elimination_order.iter().all(|e| e.state != out.winner));
        assert!(out.elimination_order.windows(2).all(|w| w[0].step <= w[1].step));
        assert_eq!(j.weights()[out.winner], 1.0);
        assert_eq!(j.alive().iter().filter(|&&a| a).count(), 1);
    }
}

#[test]
fn trajectories_are_irreversible_and_cross_terms_consistent() {
    let raw = [
        Complex64::new(0.5, 0.1),
        Complex64::new(-0.2, 0.4),
        Complex64::new(0.3, -0.3),
        Complex64::new(0.1, 0.2),
    ];
    let state = QuantumState::normalize(&raw).unwrap();
    let config = WalkConfig::new(40, 1).unwrap();
    for t in 0..50 {
        let mut j = JointState::form(&state);
        let mut dead = [false; 4];
        let mut rows = 0;
        run_walk_traced(&mut j, &config, &mut trial_rng(1, t), |_, s| {
            rows += 1;
            assert!((s.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..4 {
                if dead[i] {
                    assert!(!s.is_alive(i));
                    assert_eq!(s.weights()[i], 0.0);
                }
                dead[i] |= !s.is_alive(i);
                for k in 0..4 {
                    if i == k {
                        continue;
                    }
                    let kappa = s.cross(i, k);
                    if s.is_alive(i) && s.is_alive(k) {
                        assert!((kappa.norm_sqr() - s.weights()[i] * s.weights()[k]).abs() < 1e-12);
                        let phase0 = raw[i] * raw[k].conj();
                        assert!((kappa / kappa.norm() - phase0 / phase0.norm()).norm() < 1e-9);
                    } else {
                        assert_eq!(kappa, Complex64::new(0.0, 0.0));
                    }
                }
            }
        })
        .unwrap();
        assert!(rows > 1);
        assert_eq!(dead.iter().filter(|&&d| d).count(), 3);
    }
}

#[test]
fn step_cap_is_enforced() {
    let config = WalkConfig::new(1000, 0).unwrap().with_max_steps(10).unwrap();
    let mut j = joint(&[0.5, 0.5]);
    assert!(matches!(
        run_walk(&mut j, &config, &mut trial_rng(0, 0)),
        Err(WalkError::MaxStepsExceeded { .. })
    ));
    let state = QuantumState::from_weights(&[0.5, 0.5]).unwrap();
    assert!(matches!(
        born_statistics(&state, 100, &config),
        Err(WalkError::TooManyExcluded { excluded: 100, attempted: 100 })
    ));
    assert!(WalkConfig::new(1, 0).is_err());
    assert!(WalkConfig::new(10, 0).unwrap().with_max_steps(0).is_err());
}

#[test]
fn born_statistics_two_state() {
    let state = QuantumState::from_weights(&[0.3, 0.7]).unwrap();
    let stats = born_statistics(&state, 100_000, &WalkConfig::default()).unwrap();
    assert_eq!(stats.trials, 100_000);
    assert_eq!(stats.winner_counts.iter().sum::<u64>(), stats.trials);
    let sigma = (0.3f64 * 0.7 / 1e5).sqrt();
    assert!((sigma - 0.00145).abs() < 1e-5);
    assert!((stats.frequencies[0] - 0.3).abs() < 4.0 * sigma, "{:?}", stats.frequencies);
}

#[test]
fn born_statistics_degenerate_state() {
    let state: QuantumState = "1,0;0,0".parse().unwrap();
    let stats = born_statistics(&state, 1000, &WalkConfig::default()).unwrap();
    assert_eq!(stats.frequencies, vec![1.0, 0.0]);
    assert_eq!(stats.mean_steps, 0.0);
}

#[test]
fn born_statistics_three_equal_states() {
    let state = QuantumState::from_weights(&[1.0 / 3.0; 3]).unwrap();
    let config = WalkConfig::new(300, 4).unwrap();
    let stats = born_statistics(&state, 30_000, &config).unwrap();
    let sigma = (1.0f64 / 3.0 * 2.0 / 3.0 / 30_000.0).sqrt();
    for f in &stats.frequencies {
        assert!((f - 1.0 / 3.0).abs() < 4.0 * sigma, "{:?}", stats.frequencies);
    }
    assert!((stats.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn two_state_absorption_matches_gamblers_ruin() {
    let m = 20u64;
    let trials = 10_000;
    for k0 in 1..m {
        let config = WalkConfig::new(m, 100 + k0).unwrap();
        let stats = grid_statistics(&[k0, m - k0], trials, &config).unwrap();
        let p = k0 as f64 / m as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!(
            (stats.frequencies[0] - p).abs() < 4.0 * sigma,
            "k0 = {k0}: {} vs {p}",
            stats.frequencies[0]
        );
        // expected duration of gambler's ruin is k0·(M − k0)
        let duration = (k0 * (m - k0)) as f64;
        assert!((stats.mean_steps - duration).abs() < 4.0 * stats.steps_stderr);
    }
}

#[test]
fn three_state_chain_is_exact() {
    for start in [[5u64, 3, 2], [4, 3, 3], [1, 1, 8], [7, 0, 3]] {
        let p = exact_absorption(&start).unwrap();
        for i in 0..3 {
            assert!((p[i] - start[i] as f64 / 10.0).abs() < 1e-10, "{start:?}: {p:?}");
        }
    }
}

#[test]
fn three_state_monte_carlo_matches_chain() {
    let start = [5u64, 3, 2];
    let exact = exact_absorption(&start).unwrap();
    let trials = 40_000;
    let stats = grid_statistics(&start, trials, &WalkConfig::new(10, 12).unwrap()).unwrap();
    for i in 0..3 {
        let sigma = (exact[i] * (1.0 - exact[i]) / trials as f64).sqrt();
        assert!((stats.frequencies[i] - exact[i]).abs() < 4.0 * sigma);
    }
}

#[test]
fn triple_table_moves_are_unit_transfers() {
    assert_eq!(TRIPLE_TABLE.len(), 243 << 5);
    for delta in TRIPLE_TABLE.iter() {
        assert_eq!(delta.iter().map(|&d| d as i64).sum::<i64>(), 0);
        assert!(delta.iter().all(|d| d.abs() <= 5));
    }
}

#[test]
fn three_state_blocks_match_chain() {
    let start = [15u64, 9, 6];
    let exact = exact_absorption(&start).unwrap();
    let trials = 100_000;
    let stats = grid_statistics(&start, trials, &WalkConfig::new(30, 5).unwrap()).unwrap();
    for i in 0..3 {
        let sigma = (exact[i] * (1.0 - exact[i]) / trials as f64).sqrt();
        assert!((stats.frequencies[i] - exact[i]).abs() < 4.0 * sigma, "{i}: {:?} vs {exact:?}", stats.frequencies);
    }
}

#[test]
fn statistics_do_not_depend_on_thread_count() {
    let state = QuantumState::from_weights(&[0.5, 0.3, 0.2]).unwrap();
    let config = WalkConfig::new(50, 77).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| born_statistics(&state, 3000, &config).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(2));
    assert_eq!(one, run(8));
}
