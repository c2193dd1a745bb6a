//! Grids on the belief simplex and concave fields living on them.
//!
//! A [`ConcaveField`] keeps raw grid data next to its upper concave envelope.
//! Off-grid values, supergradients, directional derivatives and exposedness
//! margins are all read from the envelope through small linear programs.
//! On two states the envelope is a 1-D upper hull and evaluation is direct.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game_model::check_belief;
use crate::lp;

/// Default cap on the number of grid points.
pub const DEFAULT_GRID_CAP: usize = 2_000_000;
/// Margin above which a grid point counts as exposed.
pub const EXPOSED_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SimplexGrid {
    k: usize,
    n: u32,
    points: Vec<Vec<u32>>,
    coords: Vec<Vec<f64>>,
    index: HashMap<Vec<u32>, usize>,
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

fn enumerate(k: usize, n: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if k == 1 {
        prefix.push(n);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in 0..=n {
        prefix.push(first);
        enumerate(k - 1, n - first, prefix, out);
        prefix.pop();
    }
}

/// All points `q / N` of the simplex in `K` coordinates, lexicographic in `q`.
pub fn build_grid(k: usize, n: u32) -> Result<SimplexGrid> {
    build_grid_capped(k, n, DEFAULT_GRID_CAP)
}

pub fn build_grid_capped(k: usize, n: u32, cap: usize) -> Result<SimplexGrid> {
    if k == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("grid needs K >= 1 and N >= 1, got K={k}, N={n}")));
    }
    let count = binomial(n as u128 + k as u128 - 1, k as u128 - 1);
    if count > cap as u128 {
        return Err(Error::GridTooLarge { count, cap });
    }
    let mut points = Vec::with_capacity(count as usize);
    enumerate(k, n, &mut Vec::with_capacity(k), &mut points);
    let coords = points
        .iter()
        .map(|q| q.iter().map(|&c| c as f64 / n as f64).collect())
        .collect();
    let index = points.iter().enumerate().map(|(i, q)| (q.clone(), i)).collect();
    Ok(SimplexGrid { k, n, points, coords, index })
}

impl SimplexGrid {
    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn resolution(&self) -> u32 {
        self.n
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn q(&self, i: usize) -> &[u32] {
        &self.points[i]
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.coords
    }

    pub fn index_of(&self, q: &[u32]) -> Option<usize> {
        self.index.get(q).copied()
    }

    /// Grid point closest to `b` by largest-remainder rounding of `N b`.
    pub fn nearest(&self, b: &[f64]) -> usize {
        let n = self.n as f64;
        let scaled: Vec<f64> = b.iter().map(|x| x.max(0.0) * n).collect();
        let mut q: Vec<u32> = scaled.iter().map(|x| x.floor() as u32).collect();
        let mut left = self.n as i64 - q.iter().map(|&x| x as i64).sum::<i64>();
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by(|&a, &c| {
            let ra = scaled[a] - scaled[a].floor();
            let rc = scaled[c] - scaled[c].floor();
            rc.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&c))
        });
        let mut idx = 0;
        while left > 0 {
            q[order[idx % self.k]] += 1;
            left -= 1;
            idx += 1;
        }
        while left < 0 {
            // only reachable when b sums above one; trim the largest coordinate
            let j = (0..self.k).max_by_key(|&j| q[j]).unwrap_or(0);
            q[j] -= 1;
            left += 1;
        }
        self.index[&q]
    }

    /// Pairs `(i, j)`, `i < j`, with `q_j = q_i + e_a - e_b`.
    pub fn adjacent_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, q) in self.points.iter().enumerate() {
            for a in 0..self.k {
                for b in 0..self.k {
                    if a == b || q[b] == 0 {
                        continue;
                    }
                    let mut q2 = q.clone();
                    q2[a] += 1;
                    q2[b] -= 1;
                    let j = self.index[&q2];
                    if i < j {
                        out.push((i, j));
                    }
                }
            }
        }
        out
    }

    /// Euclidean distance between adjacent grid points.
    pub fn adjacent_step(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.n as f64
    }

    fn reduced(&self, p: &[f64]) -> Vec<f64> {
        p[..self.k - 1].to_vec()
    }

    fn reduced_points(&self) -> Vec<Vec<f64>> {
        self.coords.iter().map(|p| self.reduced(p)).collect()
    }
}

/// Upper concave hull of 1-D data, evaluated piecewise linearly and
/// extended linearly past both ends.
#[derive(Debug, Clone)]
pub(crate) struct LineHull {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl LineHull {
    fn build(grid: &SimplexGrid, raw: &[f64]) -> Self {
        Self::from_sorted((0..raw.len()).map(|i| (grid.point(i)[0], raw[i])))
    }

    /// Points must come in increasing `x`.
    pub(crate) fn from_sorted(points: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for (x, y) in points {
            while xs.len() >= 2 {
                let n = xs.len();
                let cross = (xs[n - 1] - xs[n - 2]) * (y - ys[n - 2]) - (ys[n - 1] - ys[n - 2]) * (x - xs[n - 2]);
                if cross >= 0.0 {
                    xs.pop();
                    ys.pop();
                } else {
                    break;
                }
            }
            xs.push(x);
            ys.push(y);
        }
        Self { xs, ys }
    }

    pub(crate) fn eval(&self, x: f64) -> f64 {
        if self.xs.len() == 1 {
            return self.ys[0];
        }
        let j = self.xs.partition_point(|&t| t < x);
        if j < self.xs.len() && self.xs[j] == x {
            return self.ys[j];
        }
        let j = j.clamp(1, self.xs.len() - 1);
        let (x0, x1, y0, y1) = (self.xs[j - 1], self.xs[j], self.ys[j - 1], self.ys[j]);
        let t = (x - x0) / (x1 - x0);
        y0 + t * (y1 - y0)
    }
}

/// Upper concave envelope of grid data, evaluated back on the grid.
pub fn concavify(grid: &SimplexGrid, raw: &[f64]) -> Result<Vec<f64>> {
    if raw.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{} values for a grid of {} points",
            raw.len(),
            grid.len()
        )));
    }
    match grid.dim() {
        1 => Ok(raw.to_vec()),
        2 => {
            let hull = LineHull::build(grid, raw);
            Ok((0..grid.len()).map(|i| hull.eval(grid.point(i)[0]).max(raw[i])).collect())
        }
        _ => {
            let pts = grid.reduced_points();
            (0..grid.len())
                .into_par_iter()
                .map(|i| {
                    let h = lp::hull_value(&pts, raw, &grid.reduced(grid.point(i)))?;
                    Ok(h.value.max(raw[i]))
                })
                .collect()
        }
    }
}

/// Raw grid data together with its upper concave envelope.
#[derive(Debug, Clone)]
pub struct ConcaveField {
    grid: Arc<SimplexGrid>,
    raw: Vec<f64>,
    env: Vec<f64>,
    generation: u64,
    line: Option<LineHull>,
    reduced: Option<Arc<Vec<Vec<f64>>>>,
}

impl ConcaveField {
    pub fn from_raw(grid: Arc<SimplexGrid>, raw: Vec<f64>) -> Result<Self> {
        let env = concavify(&grid, &raw)?;
        Ok(Self::assemble(grid, raw, env, 0))
    }

    fn assemble(grid: Arc<SimplexGrid>, raw: Vec<f64>, env: Vec<f64>, generation: u64) -> Self {
        let line = (grid.dim() == 2).then(|| LineHull::build(&grid, &env));
        let reduced = (grid.dim() >= 3).then(|| Arc::new(grid.reduced_points()));
        Self { grid, raw, env, generation, line, reduced }
    }

    pub fn constant(grid: Arc<SimplexGrid>, c: f64) -> Self {
        let n = grid.len();
        Self::assemble(grid, vec![c; n], vec![c; n], 0)
    }

    /// Field of the linear function `p ↦ ⟨a, p⟩`.
    pub fn linear(grid: Arc<SimplexGrid>, a: &[f64]) -> Self {
        let vals: Vec<f64> = grid.points().iter().map(|p| p.iter().zip(a).map(|(x, y)| x * y).sum()).collect();
        Self::assemble(grid, vals.clone(), vals, 0)
    }

    pub fn with_generation(mut self, generation: u64) -> Self {
        self.generation = generation;
        self
    }

    pub fn grid(&self) -> &SimplexGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> Arc<SimplexGrid> {
        Arc::clone(&self.grid)
    }

    pub fn raw_values(&self) -> &[f64] {
        &self.raw
    }

    pub fn envelope_values(&self) -> &[f64] {
        &self.env
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Sup-norm distance between the envelopes of two fields on one grid.
    pub fn sup_distance(&self, other: &ConcaveField) -> f64 {
        self.env.iter().zip(&other.env).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.grid.dim()).map(|k| format!("k{k}")).collect();
        header.push("raw_value".into());
        header.push("envelope_value".into());
        wr.write_record(&header)?;
        for i in 0..self.grid.len() {
            let mut rec: Vec<String> = self.grid.q(i).iter().map(|c| c.to_string()).collect();
            rec.push(self.raw[i].to_string());
            rec.push(self.env[i].to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a field written by [`write_csv`](Self::write_csv); the resolution
    /// is recovered from the coordinate sums.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let k = rd.headers()?.len().saturating_sub(2);
        let mut qs = Vec::new();
        let mut raw = Vec::new();
        let mut env = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad number {s:?}: {e}")));
            let q: Vec<u32> = (0..k)
                .map(|j| rec[j].parse::<u32>().map_err(|e| Error::InvalidArgument(format!("bad coordinate: {e}"))))
                .collect::<Result<_>>()?;
            raw.push(parse(&rec[k])?);
            env.push(parse(&rec[k + 1])?);
            qs.push(q);
        }
        let n = qs.first().map(|q| q.iter().sum::<u32>()).ok_or_else(|| Error::InvalidArgument("empty field file".into()))?;
        let grid = build_grid(k, n)?;
        if qs.len() != grid.len() || qs.iter().enumerate().any(|(i, q)| q.as_slice() != grid.q(i)) {
            return Err(Error::InvalidArgument("field rows do not match the grid order".into()));
        }
        Ok(Self::assemble(Arc::new(grid), raw, env, 0))
    }
}

/// Value of the envelope at any belief.
pub fn eval_envelope(field: &ConcaveField, p: &[f64]) -> Result<f64> {
    let grid = field.grid();
    check_belief(p, grid.dim())?;
    match grid.dim() {
        1 => Ok(field.env[0]),
        2 => Ok(field.line.as_ref().map(|h| h.eval(p[0].clamp(0.0, 1.0))).unwrap_or(field.env[0])),
        _ => {
            let mut t: Vec<f64> = p.iter().map(|x| x.max(0.0)).collect();
            let s: f64 = t.iter().sum();
            t.iter_mut().for_each(|x| *x /= s);
            let pts = field.reduced.as_ref().expect("reduced points for K >= 3");
            Ok(lp::hull_value(pts, &field.env, &t[..grid.dim() - 1])?.value)
        }
    }
}

/// Convex combination of grid points realizing the envelope at grid point
/// `i`, with the lexicographically smallest support. Returns `(index, weight)`.
pub fn active_combination(field: &ConcaveField, i: usize) -> Result<Vec<(usize, f64)>> {
    if field.raw[i] >= field.env[i] - 1e-12 || field.grid.dim() == 1 {
        return Ok(vec![(i, 1.0)]);
    }
    let grid = field.grid();
    let pts = grid.reduced_points();
    let h = lp::hull_value_lexmin(&pts, &field.raw, &grid.reduced(grid.point(i)))?;
    let s: f64 = h.weights.iter().map(|(_, w)| w).sum();
    Ok(h.weights.into_iter().map(|(j, w)| (j, w / s)).collect())
}

/// Max deviation of the envelope from its own concavification.
pub fn concavity_defect(field: &ConcaveField) -> Result<f64> {
    let again = concavify(field.grid(), &field.env)?;
    Ok(again.iter().zip(&field.env).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Max of `|Δvalue| / |Δp|` over adjacent grid pairs (Euclidean).
pub fn grid_lipschitz(grid: &SimplexGrid, values: &[f64]) -> f64 {
    let step = grid.adjacent_step();
    grid.adjacent_pairs()
        .into_iter()
        .map(|(i, j)| (values[i] - values[j]).abs() / step)
        .fold(0.0, f64::max)
}

/// Direction `z` at a grid point, with `Σ z = 0` and a feasible positive step.
#[derive(Debug, Clone)]
pub struct TangentDirection {
    base: usize,
    direction: Vec<f64>,
}

impl TangentDirection {
    pub fn new(grid: &SimplexGrid, base: usize, direction: Vec<f64>) -> Result<Self> {
        if base >= grid.len() || direction.len() != grid.dim() {
            return Err(Error::InvalidArgument("tangent direction does not fit the grid".into()));
        }
        let s: f64 = direction.iter().sum();
        if s.abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("direction sums to {s}, not 0")));
        }
        let p = grid.point(base);
        if p.iter().zip(&direction).any(|(&pk, &zk)| pk == 0.0 && zk < -1e-12) {
            return Err(Error::InvalidArgument("direction leaves the simplex immediately".into()));
        }
        Ok(Self { base, direction })
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }
}

/// `(p' - p, env(p') - env(p))` for every grid point `p' ≠ p`.
fn increments(field: &ConcaveField, i: usize) -> Vec<(Vec<f64>, f64)> {
    let grid = field.grid();
    let n = grid.resolution() as f64;
    let qi = grid.q(i);
    (0..grid.len())
        .filter(|&j| j != i)
        .map(|j| {
            let d = grid.q(j).iter().zip(qi).map(|(&a, &b)| (a as f64 - b as f64) / n).collect();
            (d, field.env[j] - field.env[i])
        })
        .collect()
}

/// Minimum of `⟨x, z⟩` over the superdifferential of the envelope at the base
/// point (with `Σ x = 0`): the one-sided derivative along `z`.
pub fn directional_derivative(field: &ConcaveField, td: &TangentDirection) -> Result<f64> {
    let k = field.grid().dim();
    if k == 1 {
        return Ok(0.0);
    }
    let mut pb = Problem::new(OptimizationDirection::Minimize);
    let x: Vec<Variable> = td.direction.iter().map(|&z| pb.add_var(z, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    for (d, dv) in increments(field, td.base) {
        pb.add_constraint(x.iter().copied().zip(d), ComparisonOp::Ge, dv);
    }
    pb.add_constraint(x.iter().map(|&v| (v, 1.0)), ComparisonOp::Eq, 0.0);
    Ok(lp::run(&pb)?.objective())
}

/// Default bound `B = 2 max|env| N sqrt(K)` on supporting covectors (with
/// `max|env|` floored at 1 so a zero field still gets a usable box).
pub fn default_exposed_bound(field: &ConcaveField) -> f64 {
    let m = field.env.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1.0);
    2.0 * m * field.grid().resolution() as f64 * (field.grid().dim() as f64).sqrt()
}

/// Largest `t` such that some `x` with `|x|_∞ ≤ B` satisfies
/// `⟨x, p' - p⟩ ≥ env(p') - env(p) + t` for every other grid point: the
/// margin by which `p` is the unique minimizer of `⟨x, ·⟩ - env`.
pub fn exposed_margin(field: &ConcaveField, i: usize, bound: f64) -> Result<f64> {
    if bound <= 0.0 {
        return Err(Error::InvalidArgument("exposed-margin bound must be positive".into()));
    }
    let k = field.grid().dim();
    let mut pb = Problem::new(OptimizationDirection::Maximize);
    let x: Vec<Variable> = (0..k).map(|_| pb.add_var(0.0, (-bound, bound))).collect();
    let t = pb.add_var(1.0, (f64::NEG_INFINITY, bound));
    for (d, dv) in increments(field, i) {
        let mut e: Vec<(Variable, f64)> = x.iter().copied().zip(d).collect();
        e.push((t, -1.0));
        pb.add_constraint(e, ComparisonOp::Ge, dv);
    }
    Ok(lp::run(&pb)?.objective())
}

/// `max_{p'} env(p') - M |y - p'|` over grid points.
pub fn moreau_yosida_eval(field: &ConcaveField, m: f64, y: &[f64]) -> f64 {
    field
        .grid()
        .points()
        .iter()
        .zip(&field.env)
        .map(|(p, &v)| {
            let d: f64 = p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            v - m * d
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Measured grid Lipschitz constant plus one.
pub fn default_moreau_constant(field: &ConcaveField) -> f64 {
    grid_lipschitz(field.grid(), &field.env) + 1.0
}

/// `min_p ⟨x, p⟩ - env(p)` over grid points.
pub fn concave_conjugate(field: &ConcaveField, x: &[f64]) -> f64 {
    field
        .grid()
        .points()
        .iter()
        .zip(&field.env)
        .map(|(p, &v)| p.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - v)
        .fold(f64::INFINITY, f64::min)
}
