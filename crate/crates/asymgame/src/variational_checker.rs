//! Residual certificates for the variational characterization of the value:
//! a supersolution inequality at every grid point, a subsolution inequality
//! at grid-exposed points, regularity, and a uniqueness probe.

use std::io::Write;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::{belief_drift, GameSpec, MixedAction};
use crate::hj_primal::{action_grid, solve_primal, SolverConfig};
use crate::lp;
use crate::simplex_field::{
    concavity_defect, default_exposed_bound, exposed_margin, grid_lipschitz, ConcaveField, EXPOSED_EPS,
};

/// `sup_μ [D env(p; ᵀR(μ,ν)p) + r g(p,μ,ν)]` at grid point `i`, as one LP
/// over `μ` and the dual weights of the superdifferential polytope.
pub fn variational_hamiltonian(spec: &GameSpec, field: &ConcaveField, i: usize, nu: &MixedAction) -> Result<f64> {
    let grid = field.grid();
    let k = grid.dim();
    if k != spec.n_states() || nu.len() != spec.n_v() {
        return Err(Error::InvalidArgument("field, game and mixed action disagree in size".into()));
    }
    let p = grid.point(i);
    let r = spec.discount();
    let n = grid.resolution() as f64;
    let env = field.envelope_values();
    let m = spec.n_u();

    let mut drift = Vec::with_capacity(m);
    let mut gain = Vec::with_capacity(m);
    for u in 0..m {
        let mut zu = vec![0.0; k];
        let mut gu = 0.0;
        for (v, &w) in nu.weights().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (a, b) in zu.iter_mut().zip(belief_drift(spec.rate(u, v), p)) {
                *a += w * b;
            }
            gu += w * (0..k).map(|s| p[s] * spec.payoff(s, u, v)).sum::<f64>();
        }
        drift.push(zu);
        gain.push(gu);
    }

    let mut pb = Problem::new(OptimizationDirection::Maximize);
    let qi = grid.q(i).to_vec();
    let ys: Vec<(usize, microlp::Variable)> = (0..grid.len())
        .filter(|&j| j != i)
        .map(|j| (j, pb.add_var(env[j] - env[i], (0.0, f64::INFINITY))))
        .collect();
    let mus: Vec<microlp::Variable> = gain.iter().map(|&g| pb.add_var(r * g, (0.0, f64::INFINITY))).collect();
    for c in 0..k.saturating_sub(1) {
        let mut e: Vec<(microlp::Variable, f64)> = ys
            .iter()
            .filter_map(|&(j, y)| {
                let d = (grid.q(j)[c] as f64 - qi[c] as f64) / n;
                (d != 0.0).then_some((y, d))
            })
            .collect();
        e.extend(mus.iter().zip(&drift).map(|(&mu, z)| (mu, -z[c])));
        pb.add_constraint(e, ComparisonOp::Eq, 0.0);
    }
    pb.add_constraint(mus.iter().map(|&v| (v, 1.0)), ComparisonOp::Eq, 1.0);
    Ok(lp::run(&pb)?.objective())
}

/// Finite sample of `Δ(V₀)` with its ℓ1 covering radius.
#[derive(Debug, Clone)]
pub struct NuGrid {
    pub actions: Vec<MixedAction>,
    /// Every `ν` lies within this ℓ1 distance of some grid action.
    pub mesh: f64,
}

/// Simplex grid of `Δ(V₀)` with `per_dim` points per dimension.
pub fn nu_grid(spec: &GameSpec, per_dim: usize) -> Result<NuGrid> {
    let l = spec.n_v();
    let res = per_dim.saturating_sub(1).max(1) as f64;
    let mesh = match l {
        1 => 0.0,
        2 => 1.0 / res,
        _ => 2.0 * (l / 2) as f64 / res,
    };
    Ok(NuGrid { actions: action_grid(l, per_dim)?, mesh })
}

/// Lipschitz constant of `ν ↦ VH(p, ν)` in ℓ1:
/// `½ (X S_z + r S_g)` where `X` bounds `|x|_∞` over supergradients with
/// `Σ x = 0`, `S_z = max |ᵀ(R(u,v) - R(u,v'))p|_1` and
/// `S_g = max |g(p,u,v) - g(p,u,v')|`.
pub fn lip_certificate(spec: &GameSpec, field: &ConcaveField, i: usize) -> f64 {
    let grid = field.grid();
    let p = grid.point(i);
    let k = grid.dim();
    let step = grid_lipschitz(grid, field.envelope_values()) * grid.adjacent_step();
    let n = grid.resolution() as f64;
    // two states: x = (a, -a) with |a| half the slope in p_1 (exact);
    // more states: adjacent differences bound x_a - x_b only (heuristic)
    let x_bound = if k == 2 { n * step / 2.0 } else { n * step };
    let (mut s_z, mut s_g) = (0.0f64, 0.0f64);
    for u in 0..spec.n_u() {
        for v in 0..spec.n_v() {
            for w in 0..spec.n_v() {
                let a = belief_drift(spec.rate(u, v), p);
                let b = belief_drift(spec.rate(u, w), p);
                s_z = s_z.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum());
                let ga: f64 = (0..k).map(|s| p[s] * spec.payoff(s, u, v)).sum();
                let gb: f64 = (0..k).map(|s| p[s] * spec.payoff(s, u, w)).sum();
                s_g = s_g.max((ga - gb).abs());
            }
        }
    }
    0.5 * (x_bound * s_z + spec.discount() * s_g)
}

fn min_vh(spec: &GameSpec, field: &ConcaveField, i: usize, nus: &NuGrid) -> Result<f64> {
    nus.actions
        .iter()
        .map(|nu| variational_hamiltonian(spec, field, i, nu))
        .try_fold(f64::INFINITY, |acc, v| v.map(|v| acc.min(v)))
}

/// `r env(p) - min_ν VH(p, ν)` over the sample; nonnegative values certify
/// the supersolution inequality at `p`.
pub fn supvar_residual(spec: &GameSpec, field: &ConcaveField, i: usize, nus: &NuGrid) -> Result<f64> {
    Ok(spec.discount() * field.envelope_values()[i] - min_vh(spec, field, i, nus)?)
}

/// `r env(p) - [min_ν VH(p, ν) - lip_cert · mesh]` at a grid-exposed `p`.
pub fn subvar_residual(spec: &GameSpec, field: &ConcaveField, i: usize, nus: &NuGrid, lip_cert: f64) -> Result<f64> {
    let margin = exposed_margin(field, i, default_exposed_bound(field))?;
    if margin <= EXPOSED_EPS {
        return Err(Error::NotExposed(margin));
    }
    Ok(spec.discount() * field.envelope_values()[i] - (min_vh(spec, field, i, nus)? - lip_cert * nus.mesh))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    /// Points per dimension of the `ν` sample.
    pub nu_per_dim: usize,
    pub tol_cert: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { nu_per_dim: 41, tol_cert: 5e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub point: Vec<f64>,
    pub exposed_margin: f64,
    pub supvar: f64,
    pub subvar: Option<f64>,
    pub lip_cert: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub rows: Vec<ResidualRow>,
    pub tol_cert: f64,
    pub nu_mesh: f64,
}

impl ResidualReport {
    pub fn min_supvar(&self) -> f64 {
        self.rows.iter().map(|r| r.supvar).fold(f64::INFINITY, f64::min)
    }

    pub fn max_subvar(&self) -> f64 {
        self.rows.iter().filter_map(|r| r.subvar).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn exposed_count(&self) -> usize {
        self.rows.iter().filter(|r| r.subvar.is_some()).count()
    }

    pub fn passes(&self) -> bool {
        self.min_supvar() >= -self.tol_cert && self.rows.iter().filter_map(|r| r.subvar).all(|s| s <= self.tol_cert)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let k = self.rows.first().map(|r| r.point.len()).unwrap_or(0);
        let mut header: Vec<String> = (1..=k).map(|j| format!("p{j}")).collect();
        header.extend(["exposed_margin", "supvar_residual", "subvar_residual", "lip_cert"].map(String::from));
        wr.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.point.iter().map(|x| x.to_string()).collect();
            rec.push(r.exposed_margin.to_string());
            rec.push(r.supvar.to_string());
            rec.push(r.subvar.map(|s| s.to_string()).unwrap_or_default());
            rec.push(r.lip_cert.to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Both residuals at every grid point (the sub-residual only where exposed).
pub fn residual_report(spec: &GameSpec, field: &ConcaveField, config: &CheckConfig) -> Result<ResidualReport> {
    let nus = nu_grid(spec, config.nu_per_dim)?;
    let bound = default_exposed_bound(field);
    let r = spec.discount();
    let rows = (0..field.grid().len())
        .into_par_iter()
        .map(|i| {
            let m = min_vh(spec, field, i, &nus)?;
            let margin = exposed_margin(field, i, bound)?;
            let lip = lip_certificate(spec, field, i);
            let rw = r * field.envelope_values()[i];
            Ok(ResidualRow {
                point: field.grid().point(i).to_vec(),
                exposed_margin: margin,
                supvar: rw - m,
                subvar: (margin > EXPOSED_EPS).then(|| rw - (m - lip * nus.mesh)),
                lip_cert: lip,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualReport { rows, tol_cert: config.tol_cert, nu_mesh: nus.mesh })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    pub is_concave: bool,
    pub concavity_defect: f64,
    pub measured_lipschitz: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Concavity (idempotence of concavification within `1e-10`) and grid
/// Lipschitz constant against `sqrt(K) + slack`.
pub fn regularity_report(field: &ConcaveField, slack: f64) -> Result<Regularity> {
    let defect = concavity_defect(field)?;
    let lip = grid_lipschitz(field.grid(), field.envelope_values());
    let bound = (field.grid().dim() as f64).sqrt() + slack;
    let is_concave = defect <= 1e-10;
    Ok(Regularity { is_concave, concavity_defect: defect, measured_lipschitz: lip, bound, pass: is_concave && lip <= bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub discrepancy: f64,
    pub bound: f64,
}

/// Solves from the zero field, the unit field and a seeded random concave
/// field; reports the largest pairwise sup-distance of the results.
pub fn uniqueness_probe(spec: &GameSpec, config: &SolverConfig, seed: u64) -> Result<UniquenessReport> {
    let grid = crate::hj_primal::primal_grid(spec, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
    let starts = vec![
        ConcaveField::constant(grid.clone(), 0.0),
        ConcaveField::constant(grid.clone(), 1.0),
        ConcaveField::from_raw(grid, raw)?,
    ];
    let outs = starts
        .into_iter()
        .map(|f| solve_primal(spec, config, Some(f)).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let mut d = 0.0f64;
    for a in 0..outs.len() {
        for b in a + 1..outs.len() {
            d = d.max(outs[a].sup_distance(&outs[b]));
        }
    }
    let beta = config.discount_factor(spec);
    Ok(UniquenessReport { discrepancy: d, bound: 2.0 * config.tol_fp / (1.0 - beta) })
}
