//! Thin layer over `microlp` for the three linear programs the crate keeps
//! solving: matrix games, concave-hull values, and support selection.

use microlp::{ComparisonOp, OptimizationDirection, Problem, Solution, Variable};

use crate::error::{Error, Result};

/// Saddle-point certificate demanded of every matrix-game solve.
pub const GAP_TOL: f64 = 1e-9;

const FREE: (f64, f64) = (f64::NEG_INFINITY, f64::INFINITY);
const NONNEG: (f64, f64) = (0.0, f64::INFINITY);
const OPT_SLACK: f64 = 1e-10;
const POSITIVE: f64 = 1e-9;

pub(crate) fn run(pb: &Problem) -> Result<Solution> {
    let outcome = pb.solve().map_err(|e| Error::Lp(e.to_string()))?;
    outcome
        .into_solution()
        .map_err(|e| Error::Lp(format!("interrupted: {:?}", e.termination_reason())))
}

fn row(vars: &[Variable], coeffs: impl IntoIterator<Item = f64>) -> Vec<(Variable, f64)> {
    vars.iter().copied().zip(coeffs).collect()
}

/// Optimal strategies of a zero-sum matrix game, row player maximizing.
#[derive(Debug, Clone)]
pub struct GameSolution {
    pub value: f64,
    pub row: Vec<f64>,
    pub col: Vec<f64>,
    /// `max_i (A col)_i - min_j (row^T A)_j`, always `>= 0` up to rounding.
    pub gap: f64,
}

fn clean_distribution(w: &mut [f64]) {
    for x in w.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let s: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= s;
    }
}

fn row_guarantee(a: &[Vec<f64>], mu: &[f64]) -> f64 {
    let cols = a[0].len();
    (0..cols)
        .map(|j| a.iter().zip(mu).map(|(r, m)| r[j] * m).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn col_guarantee(a: &[Vec<f64>], nu: &[f64]) -> f64 {
    a.iter()
        .map(|r| r.iter().zip(nu).map(|(x, n)| x * n).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn maximin_lp(a: &[Vec<f64>]) -> Result<Vec<f64>> {
    let (m, n) = (a.len(), a[0].len());
    let mut pb = Problem::new(OptimizationDirection::Maximize);
    let mu: Vec<Variable> = (0..m).map(|_| pb.add_var(0.0, NONNEG)).collect();
    let v = pb.add_var(1.0, FREE);
    for j in 0..n {
        let mut e = row(&mu, a.iter().map(|r| r[j]));
        e.push((v, -1.0));
        pb.add_constraint(e, ComparisonOp::Ge, 0.0);
    }
    pb.add_constraint(row(&mu, std::iter::repeat(1.0)), ComparisonOp::Eq, 1.0);
    let sol = run(&pb)?;
    let mut w: Vec<f64> = mu.iter().map(|&x| sol.var_value(x)).collect();
    clean_distribution(&mut w);
    Ok(w)
}

fn transpose_negate(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (m, n) = (a.len(), a[0].len());
    (0..n).map(|j| (0..m).map(|i| -a[i][j]).collect()).collect()
}

/// Solves `max_mu min_nu mu^T A nu` over mixed strategies.
///
/// Fails with [`Error::Certificate`] when the recovered pair is not a saddle
/// point within [`GAP_TOL`].
pub fn solve_matrix_game(a: &[Vec<f64>]) -> Result<GameSolution> {
    if a.is_empty() || a[0].is_empty() {
        return Err(Error::InvalidArgument("empty payoff matrix".into()));
    }
    let (m, n) = (a.len(), a[0].len());
    let (row_w, col_w) = if m == 1 || n == 1 {
        // degenerate shapes: one side has nothing to mix
        let mut row_w = vec![0.0; m];
        let mut col_w = vec![0.0; n];
        if m == 1 {
            row_w[0] = 1.0;
            col_w[argmin(&a[0])] = 1.0;
        } else {
            let c: Vec<f64> = a.iter().map(|r| r[0]).collect();
            col_w[0] = 1.0;
            row_w[argmax(&c)] = 1.0;
        }
        (row_w, col_w)
    } else {
        (maximin_lp(a)?, maximin_lp(&transpose_negate(a))?)
    };
    let lower = row_guarantee(a, &row_w);
    let upper = col_guarantee(a, &col_w);
    let gap = upper - lower;
    if gap > GAP_TOL {
        return Err(Error::Certificate { gap, tol: GAP_TOL });
    }
    Ok(GameSolution { value: 0.5 * (lower + upper), row: row_w, col: col_w, gap: gap.max(0.0) })
}

pub(crate) fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmin(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v < x[best] {
            best = i;
        }
    }
    best
}

/// Greedy search for the lexicographically smallest sorted support.
///
/// `probe(required, allowed)` answers whether some optimal solution puts
/// positive mass on every index of `required` and none outside `allowed`.
pub(crate) fn lexmin_support(
    candidates: &[usize],
    mut probe: impl FnMut(&[usize], &[usize]) -> Result<bool>,
) -> Result<Vec<usize>> {
    let mut support: Vec<usize> = Vec::new();
    let mut start = 0;
    loop {
        if !support.is_empty() && probe(&support, &support)? {
            return Ok(support);
        }
        let mut grown = false;
        for pos in start..candidates.len() {
            let mut req = support.clone();
            req.push(candidates[pos]);
            let mut allowed = support.clone();
            allowed.extend_from_slice(&candidates[pos..]);
            if probe(&req, &allowed)? {
                support = req;
                start = pos + 1;
                grown = true;
                break;
            }
        }
        if !grown {
            if support.is_empty() {
                return Err(Error::Lp("no optimal support found".into()));
            }
            return Ok(support);
        }
    }
}

fn row_support_lp(
    a: &[Vec<f64>],
    value: f64,
    required: &[usize],
    allowed: &[usize],
) -> Result<Option<(f64, Vec<f64>)>> {
    let (m, n) = (a.len(), a[0].len());
    let mut pb = Problem::new(OptimizationDirection::Maximize);
    let mu: Vec<Variable> = (0..m)
        .map(|i| {
            let hi = if allowed.contains(&i) { f64::INFINITY } else { 0.0 };
            pb.add_var(0.0, (0.0, hi))
        })
        .collect();
    let t = pb.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    for &i in required {
        pb.add_constraint([(mu[i], 1.0), (t, -1.0)], ComparisonOp::Ge, 0.0);
    }
    for j in 0..n {
        pb.add_constraint(row(&mu, a.iter().map(|r| r[j])), ComparisonOp::Ge, value - OPT_SLACK);
    }
    pb.add_constraint(row(&mu, std::iter::repeat(1.0)), ComparisonOp::Eq, 1.0);
    match pb.solve() {
        Err(microlp::Error::Infeasible) => Ok(None),
        Err(e) => Err(Error::Lp(e.to_string())),
        Ok(out) => {
            let sol = out.into_solution().map_err(|_| Error::Lp("interrupted".into()))?;
            let mut w: Vec<f64> = mu.iter().map(|&x| sol.var_value(x)).collect();
            clean_distribution(&mut w);
            Ok(Some((sol.var_value(t), w)))
        }
    }
}

/// Optimal row strategy with the lexicographically smallest support; among
/// strategies on that support, the one maximizing its smallest weight.
pub fn lexmin_row_strategy(a: &[Vec<f64>], value: f64) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..a.len()).collect();
    let support = lexmin_support(&all, |req, allowed| {
        Ok(matches!(row_support_lp(a, value, req, allowed)?, Some((t, _)) if t > POSITIVE))
    })?;
    match row_support_lp(a, value, &support, &support)? {
        Some((_, w)) => Ok(w),
        None => Err(Error::Lp("selected support became infeasible".into())),
    }
}

/// Column counterpart of [`lexmin_row_strategy`].
pub fn lexmin_col_strategy(a: &[Vec<f64>], value: f64) -> Result<Vec<f64>> {
    lexmin_row_strategy(&transpose_negate(a), -value)
}

/// Solves the game and replaces both optimal strategies by their
/// lexicographically smallest-support versions. If the simplex code breaks
/// down on a degenerate support probe, the plain optimal strategy is kept.
pub fn solve_matrix_game_lexmin(a: &[Vec<f64>]) -> Result<GameSolution> {
    let base = solve_matrix_game(a)?;
    let row_w = lexmin_row_strategy(a, base.value).unwrap_or_else(|_| base.row.clone());
    let col_w = lexmin_col_strategy(a, base.value).unwrap_or_else(|_| base.col.clone());
    let lower = row_guarantee(a, &row_w);
    let upper = col_guarantee(a, &col_w);
    let gap = upper - lower;
    if gap > GAP_TOL {
        return Ok(base);
    }
    Ok(GameSolution { value: base.value, row: row_w, col: col_w, gap: gap.max(0.0) })
}

/// Maximum of `sum_i l_i v_i` over `l` in the standard simplex with
/// `sum_i l_i x_i = target`: the upper concave envelope of the data at `target`.
#[derive(Debug, Clone)]
pub struct HullValue {
    pub value: f64,
    /// `(point index, weight)` for the weights above `1e-12`.
    pub weights: Vec<(usize, f64)>,
}

fn hull_problem(
    points: &[Vec<f64>],
    values: &[f64],
    target: &[f64],
    allowed: Option<&[usize]>,
    value_objective: bool,
) -> (Problem, Vec<Variable>) {
    let mut pb = Problem::new(OptimizationDirection::Maximize);
    let lam: Vec<Variable> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let hi = match allowed {
                Some(a) if !a.contains(&i) => 0.0,
                _ => f64::INFINITY,
            };
            pb.add_var(if value_objective { v } else { 0.0 }, (0.0, hi))
        })
        .collect();
    for (d, &t) in target.iter().enumerate() {
        pb.add_constraint(row(&lam, points.iter().map(|x| x[d])), ComparisonOp::Eq, t);
    }
    pb.add_constraint(row(&lam, std::iter::repeat(1.0)), ComparisonOp::Eq, 1.0);
    (pb, lam)
}

pub fn hull_value(points: &[Vec<f64>], values: &[f64], target: &[f64]) -> Result<HullValue> {
    let (pb, lam) = hull_problem(points, values, target, None, true);
    let sol = run(&pb)?;
    let weights = lam
        .iter()
        .enumerate()
        .map(|(i, &x)| (i, sol.var_value(x)))
        .filter(|(_, w)| *w > 1e-12)
        .collect();
    Ok(HullValue { value: sol.objective(), weights })
}

/// Supporting affine function `<x, .> + c` of the hull at `target`; returns
/// `(x, c)`.
fn hull_support(points: &[Vec<f64>], values: &[f64], target: &[f64]) -> Result<(Vec<f64>, f64)> {
    let d = target.len();
    let mut pb = Problem::new(OptimizationDirection::Minimize);
    let x: Vec<Variable> = target.iter().map(|&t| pb.add_var(t, FREE)).collect();
    let c = pb.add_var(1.0, FREE);
    for (p, &v) in points.iter().zip(values) {
        let mut e = row(&x, p.iter().copied().take(d));
        e.push((c, 1.0));
        pb.add_constraint(e, ComparisonOp::Ge, v);
    }
    let sol = run(&pb)?;
    Ok((x.iter().map(|&v| sol.var_value(v)).collect(), sol.var_value(c)))
}

/// Hull value at `target` realized by the lexicographically smallest support
/// among optimal convex combinations. Falls back to the plain optimal
/// combination if a support probe breaks down.
pub fn hull_value_lexmin(points: &[Vec<f64>], values: &[f64], target: &[f64]) -> Result<HullValue> {
    let base = hull_value(points, values, target)?;
    Ok(hull_lexmin_weights(points, values, target, base.value).map_or(base.clone(), |weights| HullValue { value: base.value, weights }))
}

fn hull_lexmin_weights(points: &[Vec<f64>], values: &[f64], target: &[f64], best: f64) -> Result<Vec<(usize, f64)>> {
    let (x, c) = hull_support(points, values, target)?;
    let contact: Vec<usize> = (0..points.len())
        .filter(|&i| {
            let aff: f64 = x.iter().zip(&points[i]).map(|(a, b)| a * b).sum::<f64>() + c;
            aff - values[i] <= 1e-9
        })
        .collect();
    let probe_lp = |req: &[usize], allowed: &[usize]| -> Result<Option<Vec<(usize, f64)>>> {
        let (mut pb, lam) = hull_problem(points, values, target, Some(allowed), false);
        pb.add_constraint(row(&lam, values.iter().copied()), ComparisonOp::Ge, best - 1e-10);
        // maximize the smallest required weight
        let t = pb.add_var(1.0, (f64::NEG_INFINITY, 1.0));
        for &i in req {
            pb.add_constraint([(lam[i], 1.0), (t, -1.0)], ComparisonOp::Ge, 0.0);
        }
        match pb.solve() {
            Err(microlp::Error::Infeasible) => Ok(None),
            Err(e) => Err(Error::Lp(e.to_string())),
            Ok(out) => {
                let sol = out.into_solution().map_err(|_| Error::Lp("interrupted".into()))?;
                if sol.var_value(t) <= POSITIVE {
                    return Ok(None);
                }
                Ok(Some(
                    lam.iter()
                        .enumerate()
                        .map(|(i, &v)| (i, sol.var_value(v)))
                        .filter(|(_, w)| *w > 1e-12)
                        .collect(),
                ))
            }
        }
    };
    let support = lexmin_support(&contact, |req, allowed| Ok(probe_lp(req, allowed)?.is_some()))?;
    probe_lp(&support, &support)?.ok_or_else(|| Error::Lp("selected hull support became infeasible".into()))
}
