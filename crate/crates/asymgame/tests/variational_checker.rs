mod common;

use std::sync::Arc;

use approx::assert_abs_diff_eq;
use asymgame::game_model::{hamiltonian, GameSpec, HamiltonianQuery, MixedAction};
use asymgame::hj_primal::{solve_primal, SolverConfig};
use asymgame::simplex_field::{build_grid, ConcaveField};
use asymgame::variational_checker::*;
use asymgame::Error;
use proptest::prelude::*;

use common::*;

fn grid(k: usize, n: u32) -> Arc<asymgame::simplex_field::SimplexGrid> {
    Arc::new(build_grid(k, n).unwrap())
}

fn gp(spec: &GameSpec, p: &[f64], u: usize, nu: &MixedAction) -> f64 {
    nu.weights()
        .iter()
        .enumerate()
        .map(|(v, w)| w * (0..p.len()).map(|k| p[k] * spec.payoff(k, u, v)).sum::<f64>())
        .sum()
}

#[test]
fn without_rates_only_the_payoff_counts() {
    let spec = reveal();
    let raw = grid(2, 6).points().iter().map(|p| 0.3 * p[0] * p[1]).collect();
    let f = ConcaveField::from_raw(grid(2, 6), raw).unwrap();
    let nu = MixedAction::new(vec![0.3, 0.7]).unwrap();
    for i in 0..f.grid().len() {
        let p = f.grid().point(i);
        let want = (0..2).map(|u| gp(&spec, p, u, &nu)).fold(f64::NEG_INFINITY, f64::max) * spec.discount();
        assert_abs_diff_eq!(variational_hamiltonian(&spec, &f, i, &nu).unwrap(), want, epsilon = 1e-9);
    }
}

/// `sup_μ ⟨a, ᵀR(μ,ν)p⟩ + r g(p,μ,ν)`: linear in `μ`, so a max over rows.
fn linear_oracle(spec: &GameSpec, a: &[f64], p: &[f64], nu: &MixedAction) -> f64 {
    (0..spec.n_u())
        .map(|u| {
            let drift: f64 = nu
                .weights()
                .iter()
                .enumerate()
                .map(|(v, w)| {
                    let r = spec.rate(u, v);
                    w * (0..p.len()).map(|j| a[j] * (0..p.len()).map(|i| p[i] * r[(i, j)]).sum::<f64>()).sum::<f64>()
                })
                .sum();
            drift + spec.discount() * gp(spec, p, u, nu)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn linear_fields_reduce_to_a_row_maximum() {
    let a = [0.3, 0.8];
    let f = ConcaveField::linear(grid(2, 8), &a);
    for spec in [asymmetric(), pennies()] {
        for nu in [MixedAction::pure(2, 0), MixedAction::new(vec![0.4, 0.6]).unwrap()] {
            for i in 0..f.grid().len() {
                let want = linear_oracle(&spec, &a, f.grid().point(i), &nu);
                assert_abs_diff_eq!(variational_hamiltonian(&spec, &f, i, &nu).unwrap(), want, epsilon = 1e-9);
            }
        }
    }
}

#[test]
fn singleton_row_uses_the_directional_derivative() {
    let gen = vec![vec![-0.8, 0.8], vec![0.5, -0.5]];
    let spec = GameSpec::uniform_rates(1, 1, gen, vec![vec![vec![0.2]], vec![vec![0.9]]], 1.0).unwrap();
    // tent with its peak at (1/2, 1/2)
    let g = grid(2, 4);
    let raw = g.points().iter().map(|p| 1.0 - (p[0] - 0.5).abs()).collect();
    let f = ConcaveField::from_raw(g, raw).unwrap();
    let nu = MixedAction::pure(1, 0);
    let mid = f.grid().nearest(&[0.5, 0.5]);
    let p: [f64; 2] = [0.5, 0.5];
    // ᵀR p = (z1, -z1); the tent drops at unit rate in either direction of p1
    let z1 = p[0] * -0.8 + p[1] * 0.5;
    let deriv = -z1.abs();
    let want = deriv + 0.5 * 0.2 + 0.5 * 0.9;
    assert_abs_diff_eq!(variational_hamiltonian(&spec, &f, mid, &nu).unwrap(), want, epsilon = 1e-9);
}

fn nus(spec: &GameSpec) -> NuGrid {
    nu_grid(spec, 5).unwrap()
}

#[test]
fn residuals_vanish_on_exact_solutions() {
    let c = ConcaveField::constant(grid(2, 6), 0.5);
    let t = trivial();
    let lin = ConcaveField::linear(grid(2, 6), &[0.2, 0.9]);
    let s = static_game();
    for i in 0..c.grid().len() {
        assert_abs_diff_eq!(supvar_residual(&t, &c, i, &nus(&t)).unwrap(), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(supvar_residual(&s, &lin, i, &nus(&s)).unwrap(), 0.0, epsilon = 1e-6);
    }
    for v in [[1.0, 0.0], [0.0, 1.0]] {
        let i = lin.grid().nearest(&v);
        assert!(subvar_residual(&s, &lin, i, &nus(&s), lip_certificate(&s, &lin, i)).unwrap() <= 1e-6);
    }
}

#[test]
fn shifted_fields_move_the_residuals() {
    let s = static_game();
    let g = grid(2, 6);
    let up = ConcaveField::from_raw(g.clone(), g.points().iter().map(|p| 0.2 * p[0] + 0.9 * p[1] + 0.1).collect()).unwrap();
    let down = ConcaveField::from_raw(g.clone(), g.points().iter().map(|p| 0.2 * p[0] + 0.9 * p[1] - 0.1).collect()).unwrap();
    let r = s.discount();
    for i in 0..g.len() {
        assert!(supvar_residual(&s, &up, i, &nus(&s)).unwrap() >= 0.1 * r - 1e-9);
    }
    let v = g.nearest(&[1.0, 0.0]);
    let res = subvar_residual(&s, &down, v, &nus(&s), lip_certificate(&s, &down, v)).unwrap();
    assert!(res <= -0.1 * r + 1e-9);
}

#[test]
fn interior_points_of_a_linear_field_are_not_exposed() {
    let s = static_game();
    let lin = ConcaveField::linear(grid(2, 6), &[0.2, 0.9]);
    let i = lin.grid().nearest(&[0.5, 0.5]);
    assert!(matches!(subvar_residual(&s, &lin, i, &nus(&s), 0.0), Err(Error::NotExposed(_))));
}

#[test]
fn regularity_of_simple_fields() {
    let g = grid(2, 2);
    let tent = ConcaveField::from_raw(g.clone(), g.points().iter().map(|p| if p[0] == 0.5 { 1.0 } else { 0.0 }).collect()).unwrap();
    let reg = regularity_report(&tent, 0.5).unwrap();
    assert_abs_diff_eq!(reg.measured_lipschitz, 2f64.sqrt(), epsilon = 1e-12);
    assert!(reg.pass && reg.is_concave);
    let lin = ConcaveField::linear(grid(2, 10), &[0.1, 0.7]);
    let reg = regularity_report(&lin, 0.0).unwrap();
    assert_abs_diff_eq!(reg.measured_lipschitz, 0.6 / 2f64.sqrt(), epsilon = 1e-12);
    assert!(reg.pass);
}

#[test]
fn solver_output_is_regular_and_certified() {
    let spec = asymmetric();
    let cfg = SolverConfig { n: 12, tau: 0.02, ..SolverConfig::default() };
    let (w, _) = solve_primal(&spec, &cfg, None).unwrap();
    assert!(regularity_report(&w, 0.5).unwrap().pass);
    let rep = residual_report(&spec, &w, &CheckConfig::default()).unwrap();
    assert!(rep.exposed_count() >= 2);
    assert!(rep.min_supvar() >= -rep.tol_cert && rep.max_subvar() <= rep.tol_cert, "{} {}", rep.min_supvar(), rep.max_subvar());
    // recomputation is bitwise identical
    let again = residual_report(&spec, &w, &CheckConfig::default()).unwrap();
    let bits = |r: &ResidualReport| r.rows.iter().map(|x| (x.supvar.to_bits(), x.subvar.map(f64::to_bits))).collect::<Vec<_>>();
    assert_eq!(bits(&rep), bits(&again));
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), w.grid().len() + 1);
}

#[test]
fn uniqueness_probes() {
    let cfg = SolverConfig { n: 6, tau: 0.05, ..SolverConfig::default() };
    let tight = SolverConfig { tol_fp: 1e-12, ..cfg };
    let t = uniqueness_probe(&static_with(&[0.4, 0.4]), &tight, 7).unwrap();
    assert!(t.discrepancy <= 1e-9);
    for spec in [static_game(), asymmetric()] {
        let u = uniqueness_probe(&spec, &cfg, 7).unwrap();
        assert!(u.discrepancy <= u.bound);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// At an interior point of a linear field the superdifferential is a
    /// single class, and the value against the minimizer's optimal `ν`
    /// is the Hamiltonian itself.
    #[test]
    fn agrees_with_the_hamiltonian_where_differentiable(
        spec in arb_game_k(3),
        a in proptest::collection::vec(-1.0f64..1.0, 3),
        at in 0usize..3,
    ) {
        let f = ConcaveField::linear(grid(3, 4), &a);
        let interior = [[1, 2, 1], [2, 1, 1], [1, 1, 2]][at];
        let i = f.grid().index_of(&interior).unwrap();
        let q = HamiltonianQuery::new(f.grid().point(i).to_vec(), a.clone()).unwrap();
        let h = hamiltonian(&spec, &q).unwrap();
        let vh = variational_hamiltonian(&spec, &f, i, &h.nu).unwrap();
        prop_assert!((vh - h.value).abs() <= 1e-8);
    }
}
