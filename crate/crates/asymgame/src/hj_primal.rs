//! Value iteration for the primal equation: a short-horizon stage game at
//! every grid belief, then concavification, repeated to a fixed point.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::{belief_drift, dot, mix_generator, mix_payoff_vector, GameSpec, MixedAction};
use crate::lp;
use crate::simplex_field::{self, build_grid, eval_envelope, ConcaveField, SimplexGrid};

/// How the sampled stage game is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum StageRule {
    /// Value of the sampled matrix game over lotteries on both grids.
    #[default]
    Lottery,
    /// `min_ν̂ max_μ̂` over the sampled actions: player 2 commits to one
    /// grid action for the step. Needs fine grids to match the lottery rule.
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Simplex grid resolution `N`.
    pub n: u32,
    /// Time step.
    pub tau: f64,
    /// Points per dimension of the mixed-action grid for player 1.
    pub m_hat: usize,
    /// Same for player 2.
    pub l_hat: usize,
    pub tol_fp: f64,
    pub max_iter: usize,
    pub stage: StageRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { n: 40, tau: 0.01, m_hat: 5, l_hat: 5, tol_fp: 1e-6, max_iter: 50_000, stage: StageRule::Lottery }
    }
}

impl SolverConfig {
    pub fn validate(&self, spec: &GameSpec) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("grid resolution must be at least 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("time step must be positive, got {}", self.tau)));
        }
        if !(self.tol_fp > 0.0) {
            return Err(Error::Config(format!("fixed-point tolerance must be positive, got {}", self.tol_fp)));
        }
        if self.m_hat == 0 || self.l_hat == 0 || self.max_iter == 0 {
            return Err(Error::Config("action grid sizes and max_iter must be at least 1".into()));
        }
        let step = self.tau * spec.max_exit_rate();
        if step > 1.0 {
            return Err(Error::Config(format!("tau * max exit rate = {step} exceeds 1; the belief step can leave the simplex")));
        }
        Ok(())
    }

    /// `e^{-r τ}`.
    pub fn discount_factor(&self, spec: &GameSpec) -> f64 {
        (-spec.discount() * self.tau).exp()
    }
}

/// Mixed actions `μ̂` on a simplex grid of `Δ(U₀)` with `per_dim` points per
/// dimension (pure actions only when `per_dim <= 2`).
pub fn action_grid(n_actions: usize, per_dim: usize) -> Result<Vec<MixedAction>> {
    let g = build_grid(n_actions, per_dim.saturating_sub(1).max(1) as u32)?;
    g.points().iter().map(|w| MixedAction::new(w.clone())).collect()
}

/// Precomputed per-pair data of the sampled stage game.
#[derive(Debug, Clone)]
pub(crate) struct StageContext {
    pub mus: Vec<MixedAction>,
    pub nus: Vec<MixedAction>,
    generators: Vec<DMatrix<f64>>,
    payoffs: Vec<Vec<f64>>,
    tau: f64,
    beta: f64,
    rule: StageRule,
}

impl StageContext {
    pub fn new(spec: &GameSpec, config: &SolverConfig) -> Result<Self> {
        config.validate(spec)?;
        let mus = action_grid(spec.n_u(), config.m_hat)?;
        let nus = action_grid(spec.n_v(), config.l_hat)?;
        let mut generators = Vec::with_capacity(mus.len() * nus.len());
        let mut payoffs = Vec::with_capacity(mus.len() * nus.len());
        for mu in &mus {
            for nu in &nus {
                generators.push(mix_generator(spec, mu, nu)?);
                payoffs.push(mix_payoff_vector(spec, mu, nu)?);
            }
        }
        Ok(Self { mus, nus, generators, payoffs, tau: config.tau, beta: config.discount_factor(spec), rule: config.stage })
    }

    fn transport(&self, pair: usize, p: &[f64]) -> Result<Vec<f64>> {
        let d = belief_drift(&self.generators[pair], p);
        let mut q: Vec<f64> = p.iter().zip(&d).map(|(a, b)| a + self.tau * b).collect();
        for x in q.iter_mut() {
            if *x < 0.0 {
                if *x < -1e-12 {
                    return Err(Error::Config(format!("belief transport left the simplex (coordinate {x})")));
                }
                *x = 0.0;
            }
        }
        Ok(q)
    }

    fn payoff_matrix(&self, field: &ConcaveField, p: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let l = self.nus.len();
        let mut a = vec![vec![0.0; l]; self.mus.len()];
        let mut transports = Vec::with_capacity(self.mus.len() * l);
        for (i, row) in a.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let pair = i * l + j;
                let q = self.transport(pair, p)?;
                *cell = (1.0 - self.beta) * dot(p, &self.payoffs[pair]) + self.beta * eval_envelope(field, &q)?;
                transports.push(q);
            }
        }
        Ok((a, transports))
    }

    pub fn solve(&self, field: &ConcaveField, p: &[f64], lexmin: bool) -> Result<StageGameResult> {
        let (a, transports) = self.payoff_matrix(field, p)?;
        if self.rule == StageRule::Relaxed {
            return Ok(relaxed_solution(&a, transports));
        }
        let s = if lexmin { lp::solve_matrix_game_lexmin(&a)? } else { lp::solve_matrix_game(&a)? };
        Ok(StageGameResult { value: s.value, row: s.row, col: s.col, gap: s.gap, transports })
    }
}

/// `min_j max_i a[i][j]`; player 1's reported action is the first maximin row.
fn relaxed_solution(a: &[Vec<f64>], transports: Vec<Vec<f64>>) -> StageGameResult {
    let col_max: Vec<f64> = (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let row_min: Vec<f64> = a.iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let j = lp::argmin(&col_max);
    let i = lp::argmax(&row_min);
    let mut row = vec![0.0; a.len()];
    let mut col = vec![0.0; a[0].len()];
    row[i] = 1.0;
    col[j] = 1.0;
    StageGameResult { value: col_max[j], row, col, gap: col_max[j] - row_min[i], transports }
}

#[derive(Debug, Clone)]
pub struct StageGameResult {
    pub value: f64,
    /// Optimal weights over the sampled `μ̂` grid.
    pub row: Vec<f64>,
    /// Optimal weights over the sampled `ν̂` grid.
    pub col: Vec<f64>,
    pub gap: f64,
    /// `Φ_τ(p, μ̂_i, ν̂_j)` at index `i * l̂ + j`.
    pub transports: Vec<Vec<f64>>,
}

/// Stage game at grid point `i` of the field.
pub fn stage_game_value(spec: &GameSpec, field: &ConcaveField, i: usize, config: &SolverConfig) -> Result<StageGameResult> {
    check_grid(spec, field)?;
    StageContext::new(spec, config)?.solve(field, field.grid().point(i), false)
}

fn check_grid(spec: &GameSpec, field: &ConcaveField) -> Result<()> {
    if field.grid().dim() != spec.n_states() {
        return Err(Error::InvalidArgument(format!(
            "field lives on {} states, game has {}",
            field.grid().dim(),
            spec.n_states()
        )));
    }
    Ok(())
}

pub(crate) fn apply_with(ctx: &StageContext, field: &ConcaveField) -> Result<ConcaveField> {
    let grid = field.grid();
    let raw = (0..grid.len())
        .into_par_iter()
        .map(|i| ctx.solve(field, grid.point(i), false).map(|s| s.value))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ConcaveField::from_raw(field.grid_arc(), raw)?.with_generation(field.generation() + 1))
}

/// One application of `Cav ∘ stage game`.
pub fn apply_operator(spec: &GameSpec, field: &ConcaveField, config: &SolverConfig) -> Result<ConcaveField> {
    check_grid(spec, field)?;
    apply_with(&StageContext::new(spec, config)?, field)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub residual: f64,
    pub apriori_bound: f64,
    pub wall_time_ms: u64,
}

/// Grid for a config on a given game.
pub fn primal_grid(spec: &GameSpec, config: &SolverConfig) -> Result<Arc<SimplexGrid>> {
    Ok(Arc::new(build_grid(spec.n_states(), config.n)?))
}

/// Iterates [`apply_operator`] from `initial` (the zero field when `None`).
pub fn solve_primal(
    spec: &GameSpec,
    config: &SolverConfig,
    initial: Option<ConcaveField>,
) -> Result<(ConcaveField, ConvergenceReport)> {
    let start = Instant::now();
    let ctx = StageContext::new(spec, config)?;
    let mut field = match initial {
        Some(f) => {
            check_grid(spec, &f)?;
            if f.grid().resolution() != config.n {
                return Err(Error::InvalidArgument("initial field resolution differs from the config".into()));
            }
            f
        }
        None => ConcaveField::constant(primal_grid(spec, config)?, 0.0),
    };
    let beta = config.discount_factor(spec);
    let mut residual = f64::INFINITY;
    for it in 1..=config.max_iter {
        let next = apply_with(&ctx, &field)?;
        residual = next.sup_distance(&field);
        field = next;
        if residual <= config.tol_fp {
            let report = ConvergenceReport {
                iterations: it,
                residual,
                apriori_bound: residual / (1.0 - beta),
                wall_time_ms: start.elapsed().as_millis() as u64,
            };
            return Ok((field, report));
        }
    }
    Err(Error::NoConvergence { iterations: config.max_iter, residual })
}

/// Lottery over sampled mixed actions: `(action, probability)`.
pub type ActionLottery = Vec<(MixedAction, f64)>;

#[derive(Debug, Clone)]
pub struct SplitComponent {
    pub weight: f64,
    pub posterior: Vec<f64>,
    /// Grid index of the posterior.
    pub posterior_index: usize,
    pub action: ActionLottery,
}

#[derive(Debug, Clone)]
pub struct SplittingPlan {
    pub prior: Vec<f64>,
    pub components: Vec<SplitComponent>,
}

impl SplittingPlan {
    /// `|Σ λ_i q_i - p|_∞`.
    pub fn barycenter_error(&self) -> f64 {
        let k = self.prior.len();
        (0..k)
            .map(|j| {
                let b: f64 = self.components.iter().map(|c| c.weight * c.posterior[j]).sum();
                (b - self.prior[j]).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn lottery(mus: &[MixedAction], weights: &[f64]) -> ActionLottery {
    let kept: Vec<(MixedAction, f64)> = mus
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 1e-12)
        .map(|(m, &w)| (m.clone(), w))
        .collect();
    let s: f64 = kept.iter().map(|(_, w)| w).sum();
    kept.into_iter().map(|(m, w)| (m, w / s)).collect()
}

pub(crate) fn splitting_with(ctx: &StageContext, field: &ConcaveField, i: usize) -> Result<SplittingPlan> {
    let grid = field.grid();
    let comps = simplex_field::active_combination(field, i)?;
    let components = comps
        .into_iter()
        .map(|(j, w)| {
            let q = grid.point(j).to_vec();
            let stage = ctx.solve(field, &q, true)?;
            Ok(SplitComponent { weight: w, posterior: q, posterior_index: j, action: lottery(&ctx.mus, &stage.row) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SplittingPlan { prior: grid.point(i).to_vec(), components })
}

/// Active convex combination behind the envelope at grid point `i`, with the
/// stage-game optimal action lottery at each posterior.
pub fn extract_splitting(spec: &GameSpec, field: &ConcaveField, i: usize, config: &SolverConfig) -> Result<SplittingPlan> {
    check_grid(spec, field)?;
    splitting_with(&StageContext::new(spec, config)?, field, i)
}
