mod common;

use approx::assert_abs_diff_eq;
use asymgame::chain_sim::{RngStream, Trajectory, family};
use asymgame::hj_primal::{solve_primal, SolverConfig};
use asymgame::strategy_engine::*;
use asymgame::Error;
use proptest::prelude::*;

use common::*;

fn integer_grid(h: f64) -> TimeGrid {
    TimeGrid::regular(1.0, h).unwrap()
}

fn still(h: f64) -> Trajectory {
    Trajectory::new(0, vec![], h).unwrap()
}

#[test]
fn grids_are_validated_and_merged() {
    assert!(TimeGrid::new(vec![0.5], 1.0).is_err());
    assert!(TimeGrid::new(vec![0.0, 0.0], 1.0).is_err());
    let a = integer_grid(3.0);
    let b = TimeGrid::regular(0.5, 3.0).unwrap();
    let m = a.merge(&b);
    assert_eq!(m.times(), b.times());
    assert!(a.is_refined_by(&m) && b.is_refined_by(&m));
    assert!(!b.is_refined_by(&a));
    assert_eq!(TimeGrid::regular(0.1, 1.0).unwrap().len(), 10);
}

#[test]
fn constant_pair_gives_a_constant_path() {
    let a = PureStrategy::constant(Side::Player1, integer_grid(3.0), 1);
    let b = PureStrategy::constant(Side::Player2, TimeGrid::regular(0.5, 3.0).unwrap(), 0);
    let path = resolve_controls(&a, &b, &still(3.0)).unwrap();
    for t in [0.0, 0.3, 1.0, 1.7, 3.0] {
        assert_eq!(path.action_at(t), (1, 0));
    }
}

#[test]
fn echo_response_unrolls_by_induction() {
    let a = PureStrategy::table(Side::Player1, integer_grid(3.0), vec![1, 0, 1]).unwrap();
    let echo = PureStrategy::from_fn(Side::Player2, integer_grid(3.0), |o| Ok(o.last_opponent_action().unwrap_or(0)));
    let path = resolve_controls(&a, &echo, &still(3.0)).unwrap();
    // v_0 = default, v_i = u_{i-1}
    assert_eq!(path.actions(), &[(1, 0), (0, 1), (1, 0)]);
}

#[test]
fn first_interval_ignores_the_opponent() {
    let a = PureStrategy::from_fn(Side::Player1, integer_grid(2.0), |o| {
        Ok(if o.interval() == 0 { assert!(o.last_opponent_action().is_none()); 0 } else { 1 })
    });
    let b = PureStrategy::from_fn(Side::Player2, integer_grid(2.0), |o| {
        assert_eq!(o.interval() == 0, o.opponent_pieces().is_empty());
        Ok(0)
    });
    resolve_controls(&a, &b, &still(2.0)).unwrap();
}

#[test]
fn mixed_grids_keep_both_schedules() {
    let a = PureStrategy::table(Side::Player1, integer_grid(3.0), vec![0, 1, 0]).unwrap();
    let half = TimeGrid::regular(0.5, 3.0).unwrap();
    let b = PureStrategy::table(Side::Player2, half, vec![0, 1, 1, 0, 1, 0]).unwrap();
    let path = resolve_controls(&a, &b, &still(3.0)).unwrap();
    assert_eq!(path.len(), 6);
    for (i, &t) in path.times().iter().enumerate() {
        let mid = t + 0.25;
        assert_eq!(path.action_at(mid).0, [0, 1, 0][mid as usize]);
        assert_eq!(path.action_at(mid).1, [0, 1, 1, 0, 1, 0][i]);
    }
}

#[test]
fn information_boundaries_are_enforced() {
    let a = PureStrategy::constant(Side::Player1, integer_grid(2.0), 0);
    let nosy = PureStrategy::from_fn(Side::Player2, integer_grid(2.0), |o| o.state());
    assert!(matches!(resolve_controls(&a, &nosy, &still(2.0)), Err(Error::Protocol(_))));
    let ahead = PureStrategy::from_fn(Side::Player1, integer_grid(2.0), |o| o.state_at(o.time() + 0.5));
    let b = PureStrategy::constant(Side::Player2, integer_grid(2.0), 0);
    assert!(matches!(resolve_controls(&ahead, &b, &still(2.0)), Err(Error::Protocol(_))));
    let traj = Trajectory::new(0, vec![asymgame::chain_sim::Jump { time: 0.5, state: 1 }], 2.0).unwrap();
    let reader = PureStrategy::from_fn(Side::Player1, integer_grid(2.0), |o| o.state());
    let path = resolve_controls(&reader, &b, &traj).unwrap();
    assert_eq!(path.actions(), &[(0, 0), (1, 0)]);
}

fn branch(w: f64, q: Vec<f64>, action: usize) -> SplitBranch {
    SplitBranch { weight: w, posterior: q, strategy: PureStrategy::constant(Side::Player1, integer_grid(5.0), action) }
}

#[test]
fn single_branch_never_randomizes() {
    let s = build_splitting_strategy(&[0.3, 0.7], vec![branch(1.0, vec![0.3, 0.7], 1)]).unwrap();
    assert_eq!(s.conditional_lottery(), &[vec![1.0], vec![1.0]]);
}

#[test]
fn lottery_examples() {
    let full = build_splitting_strategy(&[0.5, 0.5], vec![branch(0.5, vec![1.0, 0.0], 0), branch(0.5, vec![0.0, 1.0], 1)]).unwrap();
    assert_eq!(full.conditional_lottery(), &[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let part = build_splitting_strategy(&[0.5, 0.5], vec![branch(0.5, vec![0.75, 0.25], 0), branch(0.5, vec![0.25, 0.75], 1)]).unwrap();
    let x = part.conditional_lottery();
    assert_abs_diff_eq!(x[0][0], 0.75, epsilon = 1e-12);
    assert_abs_diff_eq!(x[1][0], 0.25, epsilon = 1e-12);
}

#[test]
fn inconsistent_plans_are_rejected() {
    assert!(build_splitting_strategy(&[0.5, 0.5], vec![branch(0.5, vec![1.0, 0.0], 0), branch(0.5, vec![0.5, 0.5], 1)]).is_err());
    assert!(build_splitting_strategy(&[0.5, 0.5], vec![branch(0.6, vec![0.5, 0.5], 0)]).is_err());
    assert!(build_splitting_strategy(&[1.0, 0.0], vec![branch(0.5, vec![1.0, 0.0], 0), branch(0.5, vec![1.0, 0.0], 1)]).is_ok());
    assert!(build_splitting_strategy(&[0.5, 0.5], vec![]).is_err());
    let p2 = SplitBranch { weight: 1.0, posterior: vec![0.5, 0.5], strategy: PureStrategy::constant(Side::Player2, integer_grid(1.0), 0) };
    assert!(build_splitting_strategy(&[0.5, 0.5], vec![p2]).is_err());
}

#[test]
fn zero_prior_rows_go_to_the_first_branch() {
    let s = build_splitting_strategy(&[0.0, 0.4, 0.6], vec![branch(0.5, vec![0.0, 0.8, 0.2], 0), branch(0.5, vec![0.0, 0.0, 1.0], 1)]).unwrap();
    assert_eq!(s.conditional_lottery()[0], vec![1.0, 0.0]);
}

#[test]
fn device_draws_follow_the_lottery() {
    let s = build_splitting_strategy(&[0.5, 0.5], vec![branch(0.5, vec![0.75, 0.25], 0), branch(0.5, vec![0.25, 0.75], 1)]).unwrap();
    let beta = PureStrategy::constant(Side::Player2, integer_grid(5.0), 0);
    let n = 4000;
    let ones = (0..n)
        .map(|i| play_once(&reveal(), 0, &s, &beta, 0.5, 3, i).unwrap().controls.actions()[0].0)
        .sum::<usize>() as f64
        / n as f64;
    let sigma = (0.25 * 0.75 / n as f64).sqrt();
    assert!((ones - 0.25).abs() <= 3.0 * sigma, "{ones}");
}

#[test]
fn solver_strategy_on_the_constant_game() {
    let spec = trivial();
    let cfg = SolverConfig { n: 4, tau: 0.05, ..SolverConfig::default() };
    let (w, _) = solve_primal(&spec, &cfg, None).unwrap();
    let s = solver_strategy(&spec, &w, &cfg, &StrategyConfig::default()).unwrap();
    let eps = 1e-3;
    let responses = response_class(&spec, s.grid(), &TimeGrid::regular(2.0, s.grid().horizon()).unwrap());
    let rep = best_response_probe(&spec, &[0.5, 0.5], &s.at(&[0.5, 0.5]).unwrap(), &responses, eps, 50, 1).unwrap();
    assert_abs_diff_eq!(rep.worst_payoff, 0.5 * (1.0 - eps), epsilon = 1e-12);
    assert!(rep.stderr < 1e-12);
    assert_eq!(s.describe()["side"], "player1");
}

#[test]
fn static_game_pays_the_expected_payoff() {
    let spec = static_game();
    let cfg = SolverConfig { n: 4, tau: 0.05, ..SolverConfig::default() };
    let (w, _) = solve_primal(&spec, &cfg, None).unwrap();
    let s = solver_strategy(&spec, &w, &cfg, &StrategyConfig { step: 0.5, eps: 1e-3 }).unwrap();
    let responses = response_class(&spec, s.grid(), s.grid());
    assert_eq!(responses.len(), 1);
    let p = [0.3, 0.7];
    let rep = best_response_probe(&spec, &p, &s.at(&p).unwrap(), &responses, 1e-3, 4000, 2).unwrap();
    let want = (0.3 * 0.2 + 0.7 * 0.9) * (1.0 - 1e-3);
    assert!((rep.worst_payoff - want).abs() <= 3.0 * rep.stderr);
}

#[test]
fn full_revelation_plays_the_state() {
    let spec = reveal();
    let cfg = SolverConfig { n: 4, tau: 0.05, ..SolverConfig::default() };
    let (w, _) = solve_primal(&spec, &cfg, None).unwrap();
    let s = solver_strategy(&spec, &w, &cfg, &StrategyConfig::default()).unwrap();
    let alpha = s.at(&[0.5, 0.5]).unwrap();
    let beta = PureStrategy::constant(Side::Player2, s.grid().clone(), 1);
    for i in 0..50 {
        for k in 0..2 {
            let sim = play_once(&spec, k, &alpha, &beta, 2.0, 5, i).unwrap();
            assert!(sim.controls.actions().iter().all(|&(u, _)| u == k));
        }
    }
    let responses = response_class(&spec, s.grid(), &TimeGrid::regular(1.0, s.grid().horizon()).unwrap());
    let rep = best_response_probe(&spec, &[0.5, 0.5], &alpha, &responses, 1e-4, 200, 3).unwrap();
    let wp = asymgame::simplex_field::eval_envelope(&w, &[0.5, 0.5]).unwrap();
    assert!(rep.worst_payoff >= wp - 0.05);
}

#[test]
fn response_class_size() {
    let spec = reveal();
    let grid = TimeGrid::regular(0.1, 9.21).unwrap();
    let switches = TimeGrid::regular(1.0, 9.21).unwrap();
    let rc = response_class(&spec, &grid, &switches);
    assert_eq!(rc.len(), 2 + 2 * 9);
    assert_eq!(rc[0].id, "stationary:0");
    assert!(rc.iter().any(|r| r.id == "switch:1->0@3"));
    let p = PureStrategy::constant(Side::Player1, grid, 0);
    assert!(best_response_probe(&spec, &[0.5, 0.5], &p, &[], 1e-3, 10, 1).is_err());
}

#[test]
fn probes_are_deterministic() {
    let spec = asymmetric();
    let alpha = PureStrategy::from_fn(Side::Player1, TimeGrid::regular(0.5, 10.0).unwrap(), |o| o.state());
    let rc = response_class(&spec, alpha.grid(), &TimeGrid::regular(2.0, 10.0).unwrap());
    let a = best_response_probe(&spec, &[0.4, 0.6], &alpha, &rc, 1e-2, 300, 8).unwrap();
    let b = best_response_probe(&spec, &[0.4, 0.6], &alpha, &rc, 1e-2, 300, 8).unwrap();
    assert_eq!(a, b);
    let dev = RngStream::new(8, family::PLAYER1, 0);
    assert_eq!(MixedStrategy::side(&alpha), Side::Player1);
    assert!(alpha.realize(dev).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn joint_law_has_the_right_marginals(
        p in arb_belief(3),
        raw in proptest::collection::vec(arb_belief(3), 1..4),
        w in arb_belief(4),
    ) {
        // mix the prior with each raw posterior so the barycenter is exact
        let m = raw.len();
        let lam: Vec<f64> = { let s: f64 = w[..m].iter().sum(); w[..m].iter().map(|x| x / s).collect() };
        let c = 0.5;
        let mean: Vec<f64> = (0..3).map(|j| raw.iter().zip(&lam).map(|(q, l)| l * q[j]).sum()).collect();
        let qs: Vec<Vec<f64>> = raw.iter().map(|q| (0..3).map(|j| p[j] + c * (q[j] - mean[j])).collect()).collect();
        prop_assume!(qs.iter().all(|q| q.iter().all(|&x| x >= 0.0)));
        let branches = qs.iter().zip(&lam).enumerate().map(|(i, (q, &l))| branch(l, q.clone(), i % 2)).collect();
        let s = build_splitting_strategy(&p, branches).unwrap();
        let joint = s.joint_law();
        for k in 0..3 {
            prop_assert!((joint[k].iter().sum::<f64>() - p[k]).abs() < 1e-12);
        }
        for i in 0..m {
            let col: f64 = (0..3).map(|k| joint[k][i]).sum();
            prop_assert!((col - lam[i]).abs() < 1e-12);
            if lam[i] > 1e-9 {
                for k in 0..3 {
                    prop_assert!((joint[k][i] / col - qs[i][k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn refining_a_grid_does_not_change_the_controls(
        a in proptest::collection::vec(0usize..2, 4),
        b in proptest::collection::vec(0usize..2, 4),
        split in 1usize..4,
    ) {
        let coarse = integer_grid(4.0);
        let fine = TimeGrid::regular(1.0 / split as f64, 4.0).unwrap();
        let fine_table: Vec<usize> = fine.times().iter().map(|&t| a[(t + 1e-9) as usize]).collect();
        let alpha = PureStrategy::table(Side::Player1, coarse.clone(), a.clone()).unwrap();
        let alpha_fine = PureStrategy::table(Side::Player1, fine, fine_table).unwrap();
        let beta = PureStrategy::table(Side::Player2, coarse, b).unwrap();
        let x = resolve_controls(&alpha, &beta, &still(4.0)).unwrap();
        let y = resolve_controls(&alpha_fine, &beta, &still(4.0)).unwrap();
        for i in 0..40 {
            let t = i as f64 * 0.1 + 0.05;
            prop_assert_eq!(x.action_at(t), y.action_at(t));
        }
    }
}
