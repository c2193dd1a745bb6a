//! Exact simulation of the controlled chain, belief flows, densities and
//! Monte-Carlo payoffs.
//!
//! Controls are piecewise constant and left-continuous: the pair chosen at
//! grid time `t_i` acts on `(t_i, t_{i+1}]`. Between grid times the chain is
//! simulated exactly with exponential holding times.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::{check_belief, GameSpec};

/// Drift from the simplex tolerated before renormalizing is refused.
pub const DRIFT_TOL: f64 = 1e-10;
/// Smallest accepted sample size for the martingale probe.
pub const MIN_PROBE_PATHS: usize = 100;
/// Default truncation parameter of the discounted integral.
pub const DEFAULT_HORIZON_EPS: f64 = 1e-4;

/// Stream families. Each consumer of randomness owns one, so adding draws in
/// one place never shifts the draws of another.
pub mod family {
    pub const CHAIN: u64 = 1;
    pub const PROBE: u64 = 2;
    pub const PLAYER1: u64 = 3;
    pub const PLAYER2: u64 = 4;
    pub const FIELD: u64 = 5;
}

/// Seeded, indexed random stream. The key is `(seed, family)` and `index`
/// selects an independent ChaCha stream under that key.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    family: u64,
    index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, family: u64, index: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&family.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        Self { seed, family, index, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn family(&self) -> u64 {
        self.family
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Position in the keystream, in 32-bit words.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Exponential draw with the given rate; `+∞` for rate 0.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        if rate <= 0.0 {
            return f64::INFINITY;
        }
        -(1.0 - self.uniform()).ln() / rate
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let target = self.uniform() * total;
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            last = i;
            if target < acc {
                return i;
            }
        }
        last
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Piecewise-constant pure controls: `actions[i]` acts on
/// `(times[i], times[i+1]]`, the last one up to `horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    times: Vec<f64>,
    actions: Vec<(usize, usize)>,
    horizon: f64,
}

impl ControlPath {
    pub fn new(times: Vec<f64>, actions: Vec<(usize, usize)>, horizon: f64) -> Result<Self> {
        if times.is_empty() || times.len() != actions.len() {
            return Err(Error::InvalidArgument("control path needs one action per grid time".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidArgument("control grid must start at 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("control grid must be strictly increasing".into()));
        }
        if !(horizon > *times.last().unwrap()) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon {horizon} must exceed the last grid time")));
        }
        Ok(Self { times, actions, horizon })
    }

    pub fn constant(u: usize, v: usize, horizon: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![(u, v)], horizon)
    }

    /// Regular grid of step `dt` with the given per-interval actions; the
    /// horizon is `actions.len() * dt`.
    pub fn regular(dt: f64, actions: Vec<(usize, usize)>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("grid step must be positive".into()));
        }
        let horizon = dt * actions.len() as f64;
        let times = (0..actions.len()).map(|i| i as f64 * dt).collect();
        Self::new(times, actions, horizon)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn actions(&self) -> &[(usize, usize)] {
        &self.actions
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

    /// End of interval `i`.
    pub fn interval_end(&self, i: usize) -> f64 {
        self.times.get(i + 1).copied().unwrap_or(self.horizon)
    }

    /// Action pair in force at `t` (left-continuous; `t = 0` maps to the
    /// first interval).
    pub fn action_at(&self, t: f64) -> (usize, usize) {
        let i = self.times.partition_point(|&s| s < t).saturating_sub(1);
        self.actions[i]
    }

    fn check_actions(&self, spec: &GameSpec) -> Result<()> {
        for &(u, v) in &self.actions {
            if u >= spec.n_u() || v >= spec.n_v() {
                return Err(Error::InvalidArgument(format!("action pair ({u},{v}) out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub state: usize,
}

/// Càdlàg path of the chain on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    initial: usize,
    jumps: Vec<Jump>,
    horizon: f64,
}

impl Trajectory {
    pub fn new(initial: usize, jumps: Vec<Jump>, horizon: f64) -> Result<Self> {
        let mut last = 0.0;
        let mut state = initial;
        for j in &jumps {
            if !(j.time > last) || j.time > horizon {
                return Err(Error::InvalidArgument("jump times must be strictly increasing in (0, horizon]".into()));
            }
            if j.state == state {
                return Err(Error::InvalidArgument(format!("jump at {} does not change the state", j.time)));
            }
            last = j.time;
            state = j.state;
        }
        Ok(Self { initial, jumps, horizon })
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn state_at(&self, t: f64) -> usize {
        let n = self.jumps.partition_point(|j| j.time <= t);
        if n == 0 {
            self.initial
        } else {
            self.jumps[n - 1].state
        }
    }

    /// `counts[i][j]`: number of jumps from `i` to `j` up to `t`.
    pub fn jump_counts(&self, k: usize, t: f64) -> Vec<Vec<usize>> {
        let mut counts = vec![vec![0; k]; k];
        let mut state = self.initial;
        for j in self.jumps.iter().take_while(|j| j.time <= t) {
            counts[state][j.state] += 1;
            state = j.state;
        }
        counts
    }

    /// CSV with header `jump_time,new_state`; the first row is the initial
    /// state at time 0.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["jump_time", "new_state"])?;
        w.write_record([format!("{}", 0.0), self.initial.to_string()])?;
        for j in &self.jumps {
            w.write_record([format!("{}", j.time), j.state.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Information revealed to a resolver at a grid time.
#[derive(Debug)]
pub struct History<'a> {
    time: f64,
    initial: usize,
    jumps: &'a [Jump],
    controls: &'a [(f64, (usize, usize))],
}

impl<'a> History<'a> {
    /// History at `time`; jumps and controls after `time` are cut off.
    pub fn new(time: f64, initial: usize, jumps: &'a [Jump], controls: &'a [(f64, (usize, usize))]) -> Self {
        let jumps = &jumps[..jumps.partition_point(|j| j.time <= time)];
        let controls = &controls[..controls.partition_point(|c| c.0 < time)];
        Self { time, initial, jumps, controls }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn initial_state(&self) -> usize {
        self.initial
    }

    pub fn current_state(&self) -> usize {
        self.jumps.last().map_or(self.initial, |j| j.state)
    }

    /// State at `s`; asking about the future is a protocol violation.
    pub fn state_at(&self, s: f64) -> Result<usize> {
        if s > self.time {
            return Err(Error::Protocol(format!("state queried at {s} from time {}", self.time)));
        }
        let n = self.jumps.partition_point(|j| j.time <= s);
        Ok(if n == 0 { self.initial } else { self.jumps[n - 1].state })
    }

    pub fn jumps(&self) -> &'a [Jump] {
        self.jumps
    }

    /// Grid times and pairs chosen so far.
    pub fn controls(&self) -> &'a [(f64, (usize, usize))] {
        self.controls
    }
}

/// Pair played on the next interval, up to `until`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub u: usize,
    pub v: usize,
    pub until: f64,
}

/// Feedback controls. Called at each grid time with the history so far.
pub trait ControlResolver {
    fn next_step(&mut self, history: &History<'_>) -> Result<Step>;
}

/// Replays a fixed control path.
#[derive(Debug, Clone)]
pub struct OpenLoop<'a> {
    path: &'a ControlPath,
    next: usize,
}

impl<'a> OpenLoop<'a> {
    pub fn new(path: &'a ControlPath) -> Self {
        Self { path, next: 0 }
    }
}

impl ControlResolver for OpenLoop<'_> {
    fn next_step(&mut self, _history: &History<'_>) -> Result<Step> {
        let i = self.next;
        if i >= self.path.len() {
            return Err(Error::Protocol("open-loop path exhausted".into()));
        }
        self.next += 1;
        let (u, v) = self.path.actions[i];
        Ok(Step { u, v, until: self.path.interval_end(i) })
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub trajectory: Trajectory,
    pub controls: ControlPath,
}

/// Samples `X_0 ~ p` and runs the chain to `horizon` under the resolver.
pub fn simulate_chain<C: ControlResolver + ?Sized>(
    spec: &GameSpec,
    p: &[f64],
    resolver: &mut C,
    horizon: f64,
    rng: &mut RngStream,
) -> Result<Simulation> {
    check_belief(p, spec.n_states())?;
    let initial = rng.categorical(p);
    simulate_from(spec, initial, resolver, horizon, rng)
}

/// As [`simulate_chain`] from a known initial state.
pub fn simulate_from<C: ControlResolver + ?Sized>(
    spec: &GameSpec,
    initial: usize,
    resolver: &mut C,
    horizon: f64,
    rng: &mut RngStream,
) -> Result<Simulation> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive and finite, got {horizon}")));
    }
    let k = spec.n_states();
    let mut jumps = Vec::new();
    let mut controls: Vec<(f64, (usize, usize))> = Vec::new();
    let mut state = initial;
    let mut t = 0.0;
    let mut row = vec![0.0; k];
    while t < horizon {
        let step = {
            let history = History { time: t, initial, jumps: &jumps, controls: &controls };
            resolver.next_step(&history)?
        };
        if step.u >= spec.n_u() || step.v >= spec.n_v() {
            return Err(Error::Protocol(format!("resolver chose ({},{}) out of range", step.u, step.v)));
        }
        if !(step.until > t) {
            return Err(Error::Protocol(format!("resolver grid does not advance past {t}")));
        }
        controls.push((t, (step.u, step.v)));
        let end = step.until.min(horizon);
        let r = spec.rate(step.u, step.v);
        loop {
            let exit = -r[(state, state)];
            let hold = rng.exponential(exit);
            if t + hold > end {
                break;
            }
            t += hold;
            for (j, w) in row.iter_mut().enumerate() {
                *w = if j == state { 0.0 } else { r[(state, j)] };
            }
            state = rng.categorical(&row);
            jumps.push(Jump { time: t, state });
        }
        t = end;
    }
    let (times, actions) = controls.into_iter().unzip();
    Ok(Simulation {
        trajectory: Trajectory { initial, jumps, horizon },
        controls: ControlPath { times, actions, horizon },
    })
}

/// `e^{dt ᵀR}`, the belief propagator over one constant-control interval.
pub fn flow_matrix(r: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    (r.transpose() * dt).exp()
}

/// Renormalizes `p` if it lies within [`DRIFT_TOL`] of the simplex.
pub fn settle_belief(mut p: Vec<f64>) -> Result<Vec<f64>> {
    let sum: f64 = p.iter().sum();
    let neg = p.iter().fold(0.0f64, |m, &x| m.min(x));
    if (sum - 1.0).abs() > DRIFT_TOL || neg < -DRIFT_TOL || p.iter().any(|x| !x.is_finite()) {
        return Err(Error::BeliefDrift((sum - 1.0).abs().max(-neg)));
    }
    for x in p.iter_mut() {
        *x = x.max(0.0);
    }
    let s: f64 = p.iter().sum();
    for x in p.iter_mut() {
        *x /= s;
    }
    Ok(p)
}

/// Public belief at time `t` under an open-loop control path.
pub fn belief_flow(spec: &GameSpec, p: &[f64], path: &ControlPath, t: f64) -> Result<Vec<f64>> {
    check_belief(p, spec.n_states())?;
    path.check_actions(spec)?;
    if !(0.0..=path.horizon).contains(&t) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, {}]", path.horizon)));
    }
    let mut x = DVector::from_column_slice(p);
    for i in 0..path.len() {
        let a = path.times[i];
        let b = path.interval_end(i).min(t);
        if b <= a {
            break;
        }
        let (u, v) = path.actions[i];
        x = flow_matrix(spec.rate(u, v), b - a) * x;
    }
    settle_belief(x.as_slice().to_vec())
}

/// Walks `[0, t]` in pieces of constant state and control. `piece` gets
/// `(state, (u, v), start, end)`, `jump` gets `(from, to, (u, v))`; a jump
/// callback returning false stops the walk.
fn walk<P, J>(traj: &Trajectory, path: &ControlPath, t: f64, mut piece: P, mut jump: J)
where
    P: FnMut(usize, (usize, usize), f64, f64),
    J: FnMut(usize, usize, (usize, usize)) -> bool,
{
    let mut state = traj.initial;
    let mut cur = 0.0;
    let mut next_jump = 0;
    for i in 0..path.len() {
        let end = path.interval_end(i).min(t);
        if end <= path.times[i] {
            break;
        }
        let act = path.actions[i];
        while next_jump < traj.jumps.len() && traj.jumps[next_jump].time <= end {
            let j = traj.jumps[next_jump];
            piece(state, act, cur, j.time);
            if !jump(state, j.state, act) {
                return;
            }
            cur = j.time;
            state = j.state;
            next_jump += 1;
        }
        piece(state, act, cur, end);
        cur = end;
    }
}

/// Likelihood of the trajectory on `[0, t]` against the reference chain with
/// unit off-diagonal rates.
pub fn girsanov_density(spec: &GameSpec, traj: &Trajectory, path: &ControlPath, t: f64) -> Result<f64> {
    path.check_actions(spec)?;
    if t > path.horizon.min(traj.horizon) || t < 0.0 {
        return Err(Error::InvalidArgument(format!("t = {t} beyond the horizon")));
    }
    let k = spec.n_states();
    let log_l = std::cell::Cell::new(0.0);
    let mut zero = false;
    walk(
        traj,
        path,
        t,
        |s, (u, v), a, b| {
            let r = spec.rate(u, v);
            let excess: f64 = (0..k).filter(|&j| j != s).map(|j| 1.0 - r[(s, j)]).sum();
            log_l.set(log_l.get() + (b - a) * excess);
        },
        |from, to, (u, v)| {
            let rate = spec.rate(u, v)[(from, to)];
            if rate <= 0.0 {
                zero = true;
                return false;
            }
            log_l.set(log_l.get() + rate.ln());
            true
        },
    );
    Ok(if zero { 0.0 } else { log_l.get().exp() })
}

/// Fixed-order pairwise sum: the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Splits `n` paths across states in proportion to `p` (largest remainder,
/// at least 2 per state in the support).
fn allocate(p: &[f64], n: usize) -> Vec<usize> {
    let support = p.iter().filter(|&&x| x > 0.0).count();
    let spare = n.saturating_sub(2 * support);
    let raw: Vec<f64> = p.iter().map(|&x| x * spare as f64).collect();
    let mut alloc: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let mut left = spare - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in &order {
        if left == 0 {
            break;
        }
        if p[i] > 0.0 {
            alloc[i] += 1;
            left -= 1;
        }
    }
    for (a, &x) in alloc.iter_mut().zip(p) {
        if x > 0.0 {
            *a += 2;
        }
    }
    alloc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    /// Estimate of `E[e^{-∫ᵀR} δ_{X_t}]`; equals `p` up to sampling error.
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Empirical law of `X_t`; matches the belief flow up to sampling error.
    pub marginal: Vec<f64>,
    pub marginal_stderr: Vec<f64>,
    pub n_paths: usize,
}

impl MartingaleReport {
    /// `max_k |estimate_k - p_k| - z·stderr_k`; nonpositive means the check holds.
    pub fn excess(&self, p: &[f64], z: f64) -> f64 {
        self.estimate
            .iter()
            .zip(&self.stderr)
            .zip(p)
            .map(|((e, s), q)| (e - q).abs() - z * s)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Stratified Monte-Carlo probe of the martingale `e^{-∫ᵀR} δ_{X_t}` under
/// an open-loop path. Paths start in state `k` in proportion to `p_k` and the
/// strata are recombined with weights `p`.
pub fn martingale_probe(
    spec: &GameSpec,
    p: &[f64],
    path: &ControlPath,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<MartingaleReport> {
    check_belief(p, spec.n_states())?;
    path.check_actions(spec)?;
    if n_paths < MIN_PROBE_PATHS {
        return Err(Error::InvalidArgument(format!("martingale probe needs at least {MIN_PROBE_PATHS} paths")));
    }
    if !(t > 0.0) || t > path.horizon {
        return Err(Error::InvalidArgument(format!("t = {t} outside (0, {}]", path.horizon)));
    }
    let k = spec.n_states();
    let mut inverse = DMatrix::<f64>::identity(k, k);
    for i in 0..path.len() {
        let a = path.times[i];
        let b = path.interval_end(i).min(t);
        if b <= a {
            break;
        }
        let (u, v) = path.actions[i];
        inverse *= flow_matrix(spec.rate(u, v), -(b - a));
    }
    let alloc = allocate(p, n_paths);
    let mut estimate = vec![0.0; k];
    let mut var = vec![0.0; k];
    let mut marginal = vec![0.0; k];
    let mut marginal_var = vec![0.0; k];
    let mut offset = 0u64;
    for (s0, &n_s) in alloc.iter().enumerate() {
        if n_s == 0 {
            continue;
        }
        let finals: Vec<usize> = (0..n_s as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = RngStream::new(seed, family::PROBE, offset + i);
                let mut ctl = OpenLoop::new(path);
                simulate_from(spec, s0, &mut ctl, path.horizon, &mut rng).map(|s| s.trajectory.state_at(t))
            })
            .collect::<Result<_>>()?;
        offset += n_s as u64;
        for c in 0..k {
            let weighted: Vec<f64> = finals.iter().map(|&x| inverse[(c, x)]).collect();
            let (m, se) = mean_stderr(&weighted);
            estimate[c] += p[s0] * m;
            var[c] += p[s0] * p[s0] * se * se;
            let hits: Vec<f64> = finals.iter().map(|&x| f64::from(u8::from(x == c))).collect();
            let (m, se) = mean_stderr(&hits);
            marginal[c] += p[s0] * m;
            marginal_var[c] += p[s0] * p[s0] * se * se;
        }
    }
    Ok(MartingaleReport {
        estimate,
        stderr: var.into_iter().map(f64::sqrt).collect(),
        marginal,
        marginal_stderr: marginal_var.into_iter().map(f64::sqrt).collect(),
        n_paths,
    })
}

/// Truncation time `ln(1/eps)/r` of the discounted integral.
pub fn truncation_horizon(discount: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("horizon eps must lie in (0,1), got {eps}")));
    }
    Ok((1.0 / eps).ln() / discount)
}

/// `∫_0^t r e^{-rs} g(X_s, u_s, v_s) ds`, exact on each constant piece.
pub fn discounted_payoff(spec: &GameSpec, sim: &Simulation, t: f64) -> f64 {
    let r = spec.discount();
    let mut pieces = Vec::new();
    walk(
        &sim.trajectory,
        &sim.controls,
        t,
        |s, (u, v), a, b| {
            if b > a {
                pieces.push(spec.payoff(s, u, v) * ((-r * a).exp() - (-r * b).exp()));
            }
        },
        |_, _, _| true,
    );
    pairwise_sum(&pieces)
}

/// Simulation report: `{mean, stderr, n_paths, horizon, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffReport {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub horizon: f64,
    pub seed: u64,
}

/// Monte-Carlo estimate of the discounted payoff, truncated at
/// `ln(1/eps)/r`. `make` builds the resolver for path `i`; path `i` also uses
/// chain stream `i`, so two calls with the same seed share random numbers.
pub fn payoff_estimate<C, F>(spec: &GameSpec, p: &[f64], make: F, eps: f64, n_paths: usize, seed: u64) -> Result<PayoffReport>
where
    C: ControlResolver,
    F: Fn(u64) -> Result<C> + Sync,
{
    check_belief(p, spec.n_states())?;
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be positive".into()));
    }
    let horizon = truncation_horizon(spec.discount(), eps)?;
    let samples = payoff_samples(spec, p, &make, horizon, n_paths, seed)?;
    let (mean, stderr) = mean_stderr(&samples);
    Ok(PayoffReport { mean, stderr, n_paths, horizon, seed })
}

/// Per-path discounted payoffs, in path order.
pub fn payoff_samples<C, F>(spec: &GameSpec, p: &[f64], make: &F, horizon: f64, n_paths: usize, seed: u64) -> Result<Vec<f64>>
where
    C: ControlResolver,
    F: Fn(u64) -> Result<C> + Sync,
{
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, family::CHAIN, i);
            let mut ctl = make(i)?;
            let sim = simulate_chain(spec, p, &mut ctl, horizon, &mut rng)?;
            Ok(discounted_payoff(spec, &sim, horizon))
        })
        .collect()
}

/// Writes a JSON value with a trailing newline.
pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_covers_support() {
        let a = allocate(&[0.5, 0.0, 0.5], 101);
        assert_eq!(a.iter().sum::<usize>(), 101);
        assert_eq!(a[1], 0);
    }

    #[test]
    fn streams_differ_by_index() {
        let mut a = RngStream::new(7, family::CHAIN, 0);
        let mut b = RngStream::new(7, family::CHAIN, 1);
        let mut c = RngStream::new(7, family::CHAIN, 0);
        let x = a.uniform();
        assert_ne!(x, b.uniform());
        assert_eq!(x, c.uniform());
    }

    #[test]
    fn action_lookup_is_left_continuous() {
        let path = ControlPath::new(vec![0.0, 1.0], vec![(0, 0), (1, 1)], 2.0).unwrap();
        assert_eq!(path.action_at(0.0), (0, 0));
        assert_eq!(path.action_at(1.0), (0, 0));
        assert_eq!(path.action_at(1.0 + 1e-12), (1, 1));
    }
}
