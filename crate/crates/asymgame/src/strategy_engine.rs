//! Grid strategies, their resolution into controls, splitting strategies,
//! the strategy read off a converged field, and best-response probes.
//!
//! A pure strategy is a program run once per play: [`Rule::start`] gives a
//! fresh [`Decider`] that is asked for an action at each of its own grid
//! times, in order. It sees the past through an [`Observation`], which only
//! reveals what that side is entitled to.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain_sim::{
    family, flow_matrix, mean_stderr, payoff_samples, settle_belief, simulate_from, truncation_horizon, ControlPath,
    ControlResolver, History, RngStream, Step, Trajectory,
};
use crate::error::{Error, Result};
use crate::game_model::{check_belief, GameSpec};
use crate::hj_primal::{extract_splitting, SolverConfig, SplittingPlan};
use crate::simplex_field::{ConcaveField, SimplexGrid};

const TIME_TOL: f64 = 1e-9;
const PLAN_TOL: f64 = 1e-9;
/// Decision step of [`solver_strategy`].
pub const DEFAULT_STRATEGY_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Player1,
    Player2,
}

fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIME_TOL * a.abs().max(1.0)
}

/// Increasing grid `0 = t_0 < t_1 < ...` truncated at `horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>, horizon: f64) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(Error::InvalidArgument("time grid must start at 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
        }
        if !(horizon > *times.last().unwrap()) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon {horizon} must exceed the last grid time")));
        }
        Ok(Self { times, horizon })
    }

    /// `{0, dt, 2dt, ...}` below `horizon`.
    pub fn regular(dt: f64, horizon: f64) -> Result<Self> {
        if !(dt > 0.0) || !(horizon > 0.0) {
            return Err(Error::InvalidArgument("grid step and horizon must be positive".into()));
        }
        let times = (0..)
            .map(|i| i as f64 * dt)
            .take_while(|&t| t < horizon && !same_time(t, horizon))
            .collect();
        Self::new(times, horizon)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Union of both grids, cut at the smaller horizon.
    pub fn merge(&self, other: &TimeGrid) -> TimeGrid {
        let horizon = self.horizon.min(other.horizon);
        let mut all: Vec<f64> = self.times.iter().chain(&other.times).copied().filter(|&t| t < horizon).collect();
        all.sort_by(f64::total_cmp);
        let mut times: Vec<f64> = Vec::with_capacity(all.len());
        for t in all {
            if times.last().is_none_or(|&l| !same_time(l, t)) {
                times.push(t);
            }
        }
        TimeGrid { times, horizon }
    }

    /// Whether every time of `self` appears in `other`.
    pub fn is_refined_by(&self, other: &TimeGrid) -> bool {
        self.times.iter().filter(|&&t| t < other.horizon).all(|&t| other.times.iter().any(|&s| same_time(s, t)))
    }
}

/// What a side sees at one of its grid times.
pub struct Observation<'a> {
    side: Side,
    interval: usize,
    history: &'a History<'a>,
}

impl<'a> Observation<'a> {
    pub fn side(&self) -> Side {
        self.side
    }

    /// Index of the interval being decided, in the side's own grid.
    pub fn interval(&self) -> usize {
        self.interval
    }

    pub fn time(&self) -> f64 {
        self.history.time()
    }

    fn chain(&self) -> Result<&'a History<'a>> {
        match self.side {
            Side::Player1 => Ok(self.history),
            Side::Player2 => Err(Error::Protocol("player 2 does not observe the state".into())),
        }
    }

    /// Current state; player 1 only.
    pub fn state(&self) -> Result<usize> {
        Ok(self.chain()?.current_state())
    }

    /// State at a past time `s`; player 1 only.
    pub fn state_at(&self, s: f64) -> Result<usize> {
        self.chain()?.state_at(s)
    }

    /// Opponent actions so far as `(start, end, action)` pieces.
    pub fn opponent_pieces(&self) -> Vec<(f64, f64, usize)> {
        self.opponent_pieces_since(0.0)
    }

    /// Opponent pieces overlapping `[since, now)`, clipped to that window.
    pub fn opponent_pieces_since(&self, since: f64) -> Vec<(f64, f64, usize)> {
        let c = self.history.controls();
        let first = c.partition_point(|x| x.0 <= since).saturating_sub(1);
        (first..c.len())
            .map(|j| {
                let end = c.get(j + 1).map_or(self.history.time(), |x| x.0);
                let a = match self.side {
                    Side::Player1 => c[j].1 .1,
                    Side::Player2 => c[j].1 .0,
                };
                (c[j].0.max(since), end, a)
            })
            .filter(|x| x.1 > x.0)
            .collect()
    }

    /// Opponent action on the last piece before now.
    pub fn last_opponent_action(&self) -> Option<usize> {
        let c = self.history.controls().last()?;
        Some(match self.side {
            Side::Player1 => c.1 .1,
            Side::Player2 => c.1 .0,
        })
    }
}

/// One play of a pure strategy.
pub trait Decider: Send {
    fn decide(&mut self, obs: &Observation<'_>) -> Result<usize>;
}

pub trait Rule: Send + Sync {
    fn start(&self) -> Box<dyn Decider>;
}

struct FnDecider<F>(Arc<F>);

impl<F> Decider for FnDecider<F>
where
    F: Fn(&Observation<'_>) -> Result<usize> + Send + Sync,
{
    fn decide(&mut self, obs: &Observation<'_>) -> Result<usize> {
        (self.0)(obs)
    }
}

/// A stateless rule given by a function of the observation.
pub struct FnRule<F>(Arc<F>);

impl<F> Rule for FnRule<F>
where
    F: Fn(&Observation<'_>) -> Result<usize> + Send + Sync + 'static,
{
    fn start(&self) -> Box<dyn Decider> {
        Box::new(FnDecider(self.0.clone()))
    }
}

#[derive(Clone)]
pub struct PureStrategy {
    side: Side,
    grid: Arc<TimeGrid>,
    rule: Arc<dyn Rule>,
}

impl fmt::Debug for PureStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PureStrategy").field("side", &self.side).field("grid", &self.grid).finish_non_exhaustive()
    }
}

impl PureStrategy {
    pub fn new(side: Side, grid: TimeGrid, rule: Arc<dyn Rule>) -> Self {
        Self { side, grid: Arc::new(grid), rule }
    }

    pub fn from_fn<F>(side: Side, grid: TimeGrid, f: F) -> Self
    where
        F: Fn(&Observation<'_>) -> Result<usize> + Send + Sync + 'static,
    {
        Self::new(side, grid, Arc::new(FnRule(Arc::new(f))))
    }

    pub fn constant(side: Side, grid: TimeGrid, action: usize) -> Self {
        Self::from_fn(side, grid, move |_| Ok(action))
    }

    /// Open-loop table: `actions[i]` on interval `i`.
    pub fn table(side: Side, grid: TimeGrid, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != grid.len() {
            return Err(Error::InvalidArgument("table needs one action per grid interval".into()));
        }
        Ok(Self::from_fn(side, grid, move |o| Ok(actions[o.interval()])))
    }

    /// Plays `before` on intervals `< switch` and `after` from then on.
    pub fn one_switch(side: Side, grid: TimeGrid, before: usize, after: usize, switch: usize) -> Self {
        Self::from_fn(side, grid, move |o| Ok(if o.interval() < switch { before } else { after }))
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn start(&self) -> Box<dyn Decider> {
        self.rule.start()
    }
}

/// A pure strategy chosen by a draw of the randomization device.
pub trait MixedStrategy: Send + Sync {
    fn side(&self) -> Side;
    fn realize(&self, device: RngStream) -> Result<PureStrategy>;
}

/// Any pure strategy is a (degenerate) mixed one.
impl MixedStrategy for PureStrategy {
    fn side(&self) -> Side {
        self.side
    }

    fn realize(&self, _device: RngStream) -> Result<PureStrategy> {
        Ok(self.clone())
    }
}

/// Runs one decider on its own grid, asked at every time of a finer grid:
/// off-grid times repeat the previous action.
struct Cursor {
    side: Side,
    grid: Arc<TimeGrid>,
    decider: Box<dyn Decider>,
    next: usize,
    last: Option<usize>,
}

impl Cursor {
    fn new(s: &PureStrategy) -> Self {
        Self { side: s.side, grid: s.grid.clone(), decider: s.start(), next: 0, last: None }
    }

    fn act(&mut self, history: &History<'_>) -> Result<usize> {
        let t = history.time();
        if let Some(&g) = self.grid.times.get(self.next) {
            if same_time(g, t) {
                let obs = Observation { side: self.side, interval: self.next, history };
                let a = self.decider.decide(&obs)?;
                self.next += 1;
                self.last = Some(a);
                return Ok(a);
            }
            if g < t {
                return Err(Error::Protocol(format!("grid time {g} skipped at {t}")));
            }
        }
        self.last.ok_or_else(|| Error::Protocol(format!("no decision before {t}")))
    }
}

/// Plays a pair of pure strategies on their merged grid.
pub struct PairResolver {
    grid: TimeGrid,
    next: usize,
    p1: Cursor,
    p2: Cursor,
}

impl PairResolver {
    pub fn new(alpha: &PureStrategy, beta: &PureStrategy) -> Result<Self> {
        if alpha.side != Side::Player1 || beta.side != Side::Player2 {
            return Err(Error::InvalidArgument("pair must be (player 1, player 2)".into()));
        }
        Ok(Self { grid: alpha.grid.merge(&beta.grid), next: 0, p1: Cursor::new(alpha), p2: Cursor::new(beta) })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
}

impl ControlResolver for PairResolver {
    fn next_step(&mut self, history: &History<'_>) -> Result<Step> {
        let i = self.next;
        let t = *self.grid.times.get(i).ok_or_else(|| Error::Protocol("merged grid exhausted".into()))?;
        if !same_time(t, history.time()) {
            return Err(Error::Protocol(format!("asked at {} but next grid time is {t}", history.time())));
        }
        let u = self.p1.act(history)?;
        let v = self.p2.act(history)?;
        self.next += 1;
        let until = self.grid.times.get(i + 1).copied().unwrap_or(self.grid.horizon);
        Ok(Step { u, v, until })
    }
}

/// Controls produced by the pair on a given trajectory (forward induction
/// on the merged grid).
pub fn resolve_controls(alpha: &PureStrategy, beta: &PureStrategy, trajectory: &Trajectory) -> Result<ControlPath> {
    let mut res = PairResolver::new(alpha, beta)?;
    let horizon = res.grid.horizon.min(trajectory.horizon());
    let times: Vec<f64> = res.grid.times.iter().copied().filter(|&t| t < horizon).collect();
    let mut controls: Vec<(f64, (usize, usize))> = Vec::with_capacity(times.len());
    for &t in &times {
        let n = trajectory.jumps().partition_point(|j| j.time <= t);
        let history = History::new(t, trajectory.initial(), &trajectory.jumps()[..n], &controls);
        let step = res.next_step(&history)?;
        controls.push((t, (step.u, step.v)));
    }
    let (times, actions) = controls.into_iter().unzip();
    ControlPath::new(times, actions, horizon)
}

/// One posterior of a splitting with its follow-on strategy.
#[derive(Debug, Clone)]
pub struct SplitBranch {
    pub weight: f64,
    pub posterior: Vec<f64>,
    pub strategy: PureStrategy,
}

/// Player 1 draws a branch from the state-conditional lottery
/// `x_k(i) = λ_i q_ik / p_k` and follows it.
#[derive(Debug, Clone)]
pub struct SplittingStrategy {
    prior: Vec<f64>,
    branches: Vec<SplitBranch>,
    lottery: Vec<Vec<f64>>,
    grid: TimeGrid,
}

pub fn build_splitting_strategy(p: &[f64], branches: Vec<SplitBranch>) -> Result<SplittingStrategy> {
    let k = p.len();
    check_belief(p, k)?;
    if branches.is_empty() {
        return Err(Error::InvalidArgument("splitting needs at least one branch".into()));
    }
    for b in &branches {
        if b.strategy.side != Side::Player1 {
            return Err(Error::InvalidArgument("splitting branches must be player 1 strategies".into()));
        }
        check_belief(&b.posterior, k)?;
        if !(b.weight >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative branch weight {}", b.weight)));
        }
    }
    let wsum: f64 = branches.iter().map(|b| b.weight).sum();
    if (wsum - 1.0).abs() > PLAN_TOL {
        return Err(Error::InvalidArgument(format!("branch weights sum to {wsum}")));
    }
    for j in 0..k {
        let bary: f64 = branches.iter().map(|b| b.weight * b.posterior[j]).sum();
        if (bary - p[j]).abs() > PLAN_TOL {
            return Err(Error::InvalidArgument(format!("barycenter misses the prior in coordinate {j}")));
        }
        if p[j] == 0.0 && branches.iter().any(|b| b.weight > 0.0 && b.posterior[j] > 0.0) {
            return Err(Error::InvalidArgument(format!("posterior charges state {j} which has prior 0")));
        }
    }
    let lottery = (0..k)
        .map(|j| {
            if p[j] > 0.0 {
                branches.iter().map(|b| b.weight * b.posterior[j] / p[j]).collect()
            } else {
                (0..branches.len()).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect()
            }
        })
        .collect();
    let grid = branches[1..].iter().fold((*branches[0].strategy.grid).clone(), |g, b| g.merge(&b.strategy.grid));
    Ok(SplittingStrategy { prior: p.to_vec(), branches, lottery, grid })
}

impl SplittingStrategy {
    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn branches(&self) -> &[SplitBranch] {
        &self.branches
    }

    /// `x_k(i)`: row `k` is the law of the branch given initial state `k`.
    pub fn conditional_lottery(&self) -> &[Vec<f64>] {
        &self.lottery
    }

    /// Exact joint law `P(X_0 = k, branch = i) = p_k x_k(i)`.
    pub fn joint_law(&self) -> Vec<Vec<f64>> {
        self.lottery.iter().zip(&self.prior).map(|(row, &pk)| row.iter().map(|x| pk * x).collect()).collect()
    }
}

struct SplitDecider {
    lottery: Vec<Vec<f64>>,
    branches: Vec<PureStrategy>,
    device: RngStream,
    chosen: Option<Cursor>,
}

impl Decider for SplitDecider {
    fn decide(&mut self, obs: &Observation<'_>) -> Result<usize> {
        if self.chosen.is_none() {
            let k = obs.state()?;
            let i = self.device.categorical(&self.lottery[k]);
            self.chosen = Some(Cursor::new(&self.branches[i]));
        }
        self.chosen.as_mut().unwrap().act(obs.history)
    }
}

struct SplitRule {
    lottery: Vec<Vec<f64>>,
    branches: Vec<PureStrategy>,
    device: RngStream,
}

impl Rule for SplitRule {
    fn start(&self) -> Box<dyn Decider> {
        Box::new(SplitDecider {
            lottery: self.lottery.clone(),
            branches: self.branches.clone(),
            device: self.device.clone(),
            chosen: None,
        })
    }
}

impl MixedStrategy for SplittingStrategy {
    fn side(&self) -> Side {
        Side::Player1
    }

    fn realize(&self, device: RngStream) -> Result<PureStrategy> {
        let rule = SplitRule {
            lottery: self.lottery.clone(),
            branches: self.branches.iter().map(|b| b.strategy.clone()).collect(),
            device,
        };
        Ok(PureStrategy::new(Side::Player1, self.grid.clone(), Arc::new(rule)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    /// Decision step.
    pub step: f64,
    /// Truncation parameter; the horizon is `ln(1/eps)/r`.
    pub eps: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self { step: DEFAULT_STRATEGY_STEP, eps: crate::chain_sim::DEFAULT_HORIZON_EPS }
    }
}

#[derive(Debug, Clone, Serialize)]
struct CompiledBranch {
    weight: f64,
    posterior: Vec<f64>,
    /// Player 1's law on `U` in this branch.
    action: Vec<f64>,
    #[serde(skip)]
    flows: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, Serialize)]
struct CompiledPlan {
    prior: Vec<f64>,
    branches: Vec<CompiledBranch>,
}

#[derive(Debug)]
struct SolverData {
    spec: GameSpec,
    grid: Arc<SimplexGrid>,
    plans: Vec<CompiledPlan>,
    step: f64,
}

/// Player 1's strategy read off a converged field: at each decision time,
/// split the public belief by the plan of its nearest grid point, then play
/// the branch's action for one step.
#[derive(Debug, Clone)]
pub struct SolverStrategy {
    data: Arc<SolverData>,
    grid: TimeGrid,
}

fn mixed_generator(spec: &GameSpec, mu: &[f64], v: usize) -> DMatrix<f64> {
    let k = spec.n_states();
    mu.iter().enumerate().fold(DMatrix::zeros(k, k), |acc, (u, &w)| acc + spec.rate(u, v) * w)
}

fn compile(spec: &GameSpec, plan: &SplittingPlan, step: f64) -> CompiledPlan {
    let branches = plan
        .components
        .iter()
        .map(|c| {
            let mut action = vec![0.0; spec.n_u()];
            for (mu, w) in &c.action {
                for (a, x) in action.iter_mut().zip(mu.weights()) {
                    *a += w * x;
                }
            }
            let flows = (0..spec.n_v()).map(|v| flow_matrix(&mixed_generator(spec, &action, v), step)).collect();
            CompiledBranch { weight: c.weight, posterior: c.posterior.clone(), action, flows }
        })
        .collect();
    CompiledPlan { prior: plan.prior.clone(), branches }
}

pub fn solver_strategy(
    spec: &GameSpec,
    field: &ConcaveField,
    solver: &SolverConfig,
    config: &StrategyConfig,
) -> Result<SolverStrategy> {
    if !(config.step > 0.0) {
        return Err(Error::InvalidArgument("strategy step must be positive".into()));
    }
    let horizon = truncation_horizon(spec.discount(), config.eps)?;
    let grid = field.grid_arc();
    let plans = (0..grid.len())
        .into_par_iter()
        .map(|i| extract_splitting(spec, field, i, solver).map(|p| compile(spec, &p, config.step)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SolverStrategy {
        data: Arc::new(SolverData { spec: spec.clone(), grid, plans, step: config.step }),
        grid: TimeGrid::regular(config.step, horizon)?,
    })
}

impl SolverStrategy {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// JSON description `{side, grid, rule}` with the plan table as rule.
    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "side": Side::Player1,
            "grid": { "step": self.data.step, "horizon": self.grid.horizon },
            "rule": { "splitting_plans": self.data.plans },
        })
    }
}

struct SolverDecider {
    data: Arc<SolverData>,
    device: RngStream,
    belief: Vec<f64>,
    /// Plan and branch played on the previous interval.
    playing: Option<(usize, usize)>,
    last_time: f64,
}

impl SolverDecider {
    fn transport(&mut self, obs: &Observation<'_>) -> Result<()> {
        let Some((pi, bi)) = self.playing else { return Ok(()) };
        let branch = &self.data.plans[pi].branches[bi];
        let mut x = DVector::from_column_slice(&self.belief);
        for (a, b, v) in obs.opponent_pieces_since(self.last_time) {
            x = if same_time(b - a, self.data.step) {
                &branch.flows[v] * x
            } else {
                flow_matrix(&mixed_generator(&self.data.spec, &branch.action, v), b - a) * x
            };
        }
        self.belief = settle_belief(x.as_slice().to_vec())?;
        Ok(())
    }
}

impl Decider for SolverDecider {
    fn decide(&mut self, obs: &Observation<'_>) -> Result<usize> {
        self.transport(obs)?;
        self.last_time = obs.time();
        let k = obs.state()?;
        let pi = self.data.grid.nearest(&self.belief);
        let plan = &self.data.plans[pi];
        let x: Vec<f64> = if plan.prior[k] > 0.0 {
            plan.branches.iter().map(|b| b.weight * b.posterior[k] / plan.prior[k]).collect()
        } else {
            (0..plan.branches.len()).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect()
        };
        let bi = self.device.categorical(&x);
        // Bayes update of the public belief given the drawn branch.
        let post: Vec<f64> = (0..self.belief.len())
            .map(|j| {
                let xj = if plan.prior[j] > 0.0 {
                    plan.branches[bi].weight * plan.branches[bi].posterior[j] / plan.prior[j]
                } else {
                    f64::from(u8::from(bi == 0))
                };
                xj * self.belief[j]
            })
            .collect();
        let s: f64 = post.iter().sum();
        if s > 0.0 {
            self.belief = post.into_iter().map(|y| y / s).collect();
        }
        self.playing = Some((pi, bi));
        Ok(self.device.categorical(&plan.branches[bi].action))
    }
}

struct SolverRule {
    data: Arc<SolverData>,
    prior: Vec<f64>,
    device: RngStream,
}

impl Rule for SolverRule {
    fn start(&self) -> Box<dyn Decider> {
        Box::new(SolverDecider {
            data: self.data.clone(),
            device: self.device.clone(),
            belief: self.prior.clone(),
            playing: None,
            last_time: 0.0,
        })
    }
}

impl SolverStrategy {
    /// The strategy started from public belief `p`.
    pub fn at(&self, p: &[f64]) -> Result<SolverStrategyAt> {
        check_belief(p, self.data.spec.n_states())?;
        Ok(SolverStrategyAt { inner: self.clone(), prior: p.to_vec() })
    }
}

/// [`SolverStrategy`] with its initial public belief fixed.
#[derive(Debug, Clone)]
pub struct SolverStrategyAt {
    inner: SolverStrategy,
    prior: Vec<f64>,
}

impl MixedStrategy for SolverStrategyAt {
    fn side(&self) -> Side {
        Side::Player1
    }

    fn realize(&self, device: RngStream) -> Result<PureStrategy> {
        let rule = SolverRule { data: self.inner.data.clone(), prior: self.prior.clone(), device };
        Ok(PureStrategy::new(Side::Player1, self.inner.grid.clone(), Arc::new(rule)))
    }
}

/// A named player-2 response.
#[derive(Debug, Clone)]
pub struct Response {
    pub id: String,
    pub strategy: PureStrategy,
}

/// Stationary pure responses plus every one-switch response whose switch
/// happens at a time of `switch_grid`.
pub fn response_class(spec: &GameSpec, grid: &TimeGrid, switch_grid: &TimeGrid) -> Vec<Response> {
    let l = spec.n_v();
    let mut out: Vec<Response> = (0..l)
        .map(|v| Response { id: format!("stationary:{v}"), strategy: PureStrategy::constant(Side::Player2, grid.clone(), v) })
        .collect();
    for &ts in switch_grid.times().iter().skip(1) {
        let Some(s) = grid.times().iter().position(|&t| same_time(t, ts)) else { continue };
        for a in 0..l {
            for b in (0..l).filter(|&b| b != a) {
                out.push(Response {
                    id: format!("switch:{a}->{b}@{ts}"),
                    strategy: PureStrategy::one_switch(Side::Player2, grid.clone(), a, b, s),
                });
            }
        }
    }
    out
}

/// Probe report `{worst_payoff, stderr, argmin_response_id}` plus the full
/// per-response table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub worst_payoff: f64,
    pub stderr: f64,
    pub argmin_response_id: String,
    pub n_paths: usize,
    pub horizon: f64,
    pub seed: u64,
    pub responses: Vec<(String, f64, f64)>,
}

/// Payoff of a player-1 mixed strategy against one pure response. Path `i`
/// uses chain stream `i` and device stream `i` for player 1.
pub fn evaluate_pair(
    spec: &GameSpec,
    p: &[f64],
    alpha: &dyn MixedStrategy,
    beta: &PureStrategy,
    eps: f64,
    n_paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if alpha.side() != Side::Player1 || beta.side() != Side::Player2 {
        return Err(Error::InvalidArgument("pair must be (player 1, player 2)".into()));
    }
    let horizon = truncation_horizon(spec.discount(), eps)?;
    let make = |i: u64| {
        let a = alpha.realize(RngStream::new(seed, family::PLAYER1, i))?;
        PairResolver::new(&a, beta)
    };
    let samples = payoff_samples(spec, p, &make, horizon, n_paths, seed)?;
    Ok(mean_stderr(&samples))
}

/// Evaluates `alpha` against every response with common random numbers and
/// reports the worst one.
pub fn best_response_probe(
    spec: &GameSpec,
    p: &[f64],
    alpha: &dyn MixedStrategy,
    responses: &[Response],
    eps: f64,
    n_paths: usize,
    seed: u64,
) -> Result<ProbeReport> {
    if responses.is_empty() {
        return Err(Error::InvalidArgument("response class is empty".into()));
    }
    check_belief(p, spec.n_states())?;
    let horizon = truncation_horizon(spec.discount(), eps)?;
    let mut table = Vec::with_capacity(responses.len());
    for r in responses {
        let (m, se) = evaluate_pair(spec, p, alpha, &r.strategy, eps, n_paths, seed)?;
        table.push((r.id.clone(), m, se));
    }
    let worst = table.iter().enumerate().min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0))).unwrap().0;
    Ok(ProbeReport {
        worst_payoff: table[worst].1,
        stderr: table[worst].2,
        argmin_response_id: table[worst].0.clone(),
        n_paths,
        horizon,
        seed,
        responses: table,
    })
}

/// Plays one realized pair from a fixed initial state; used to inspect
/// single plays.
pub fn play_once(
    spec: &GameSpec,
    initial: usize,
    alpha: &dyn MixedStrategy,
    beta: &PureStrategy,
    horizon: f64,
    seed: u64,
    index: u64,
) -> Result<crate::chain_sim::Simulation> {
    let a = alpha.realize(RngStream::new(seed, family::PLAYER1, index))?;
    let mut res = PairResolver::new(&a, beta)?;
    let mut rng = RngStream::new(seed, family::CHAIN, index);
    simulate_from(spec, initial, &mut res, horizon, &mut rng)
}
