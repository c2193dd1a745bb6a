//! Game instances and the Hamiltonian of the infinitesimal game.
//!
//! Players act through mixed extensions of finite action sets, so the
//! one-shot game behind `H(p, z)` always has a value and the solver only
//! needs a certified saddle point.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::lp;

const ROW_SUM_TOL: f64 = 1e-12;
const MIXED_TOL: f64 = 1e-12;
const BELIEF_TOL: f64 = 1e-10;

/// `states` may be given as a count or as a list of labels.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum States {
    Count(usize),
    Labels(Vec<String>),
}

impl States {
    pub fn len(&self) -> usize {
        match self {
            States::Count(n) => *n,
            States::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// On-disk shape of a game: `rates[u][v]` is a K×K matrix, `payoff[k][u][v]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub states: States,
    pub actions_u: Vec<String>,
    pub actions_v: Vec<String>,
    pub rates: Vec<Vec<Vec<Vec<f64>>>>,
    pub payoff: Vec<Vec<Vec<f64>>>,
    pub discount: f64,
}

/// Validated game instance. Immutable once built.
#[derive(Debug, Clone)]
pub struct GameSpec {
    n_states: usize,
    actions_u: Vec<String>,
    actions_v: Vec<String>,
    rates: Vec<DMatrix<f64>>,
    payoff: Vec<f64>,
    discount: f64,
}

/// Checks every invariant and returns all violations at once.
pub fn validate_spec(file: SpecFile) -> Result<GameSpec> {
    let k = file.states.len();
    let (m, l) = (file.actions_u.len(), file.actions_v.len());
    let mut bad = Vec::new();
    let mut shape = |location: String, constraint: &'static str, observed: usize| {
        bad.push(Violation { location, constraint, observed: observed as f64 })
    };
    if k == 0 {
        shape("states".into(), "at least one state", 0);
    }
    if m == 0 {
        shape("actions_u".into(), "at least one action", 0);
    }
    if l == 0 {
        shape("actions_v".into(), "at least one action", 0);
    }
    if file.rates.len() != m {
        shape("rates".into(), "one entry per action of player 1", file.rates.len());
    }
    for (u, per_v) in file.rates.iter().enumerate() {
        if per_v.len() != l {
            shape(format!("rates[u={u}]"), "one matrix per action of player 2", per_v.len());
        }
        for (v, mat) in per_v.iter().enumerate() {
            if mat.len() != k {
                shape(format!("rates[u={u}][v={v}]"), "K rows", mat.len());
            }
            for (i, r) in mat.iter().enumerate() {
                if r.len() != k {
                    shape(format!("rates[u={u}][v={v}] row {i}"), "K columns", r.len());
                }
            }
        }
    }
    if file.payoff.len() != k {
        shape("payoff".into(), "one entry per state", file.payoff.len());
    }
    for (s, per_u) in file.payoff.iter().enumerate() {
        if per_u.len() != m {
            shape(format!("payoff[k={s}]"), "one row per action of player 1", per_u.len());
        }
        for (u, r) in per_u.iter().enumerate() {
            if r.len() != l {
                shape(format!("payoff[k={s}][u={u}]"), "one entry per action of player 2", r.len());
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::InvalidSpec(bad));
    }

    for u in 0..m {
        for v in 0..l {
            for i in 0..k {
                let r = &file.rates[u][v][i];
                for (j, &x) in r.iter().enumerate() {
                    if i != j && !(x >= 0.0 && x.is_finite()) {
                        bad.push(Violation {
                            location: format!("rates[u={u}][v={v}] row {i} col {j}"),
                            constraint: "off-diagonal rate must be nonnegative",
                            observed: x,
                        });
                    }
                }
                let s: f64 = r.iter().sum();
                if !(s.abs() <= ROW_SUM_TOL) {
                    bad.push(Violation {
                        location: format!("rates[u={u}][v={v}] row {i}"),
                        constraint: "row sum must be 0",
                        observed: s,
                    });
                }
            }
        }
    }
    for s in 0..k {
        for u in 0..m {
            for v in 0..l {
                let g = file.payoff[s][u][v];
                if !(0.0..=1.0).contains(&g) {
                    bad.push(Violation {
                        location: format!("payoff[k={s}][u={u}][v={v}]"),
                        constraint: "payoff range [0,1]",
                        observed: g,
                    });
                }
            }
        }
    }
    if !(file.discount > 0.0 && file.discount.is_finite()) {
        bad.push(Violation {
            location: "discount".into(),
            constraint: "discount must be positive",
            observed: file.discount,
        });
    }
    if !bad.is_empty() {
        return Err(Error::InvalidSpec(bad));
    }

    let rates = file
        .rates
        .iter()
        .flat_map(|per_v| per_v.iter())
        .map(|mat| DMatrix::from_fn(k, k, |i, j| mat[i][j]))
        .collect();
    let mut payoff = Vec::with_capacity(k * m * l);
    for s in 0..k {
        for u in 0..m {
            payoff.extend_from_slice(&file.payoff[s][u]);
        }
    }
    Ok(GameSpec {
        n_states: k,
        actions_u: file.actions_u,
        actions_v: file.actions_v,
        rates,
        payoff,
        discount: file.discount,
    })
}

impl GameSpec {
    /// Builds and validates from nested arrays (`rates[u][v][i][j]`, `payoff[k][u][v]`).
    pub fn new(
        actions_u: Vec<String>,
        actions_v: Vec<String>,
        rates: Vec<Vec<Vec<Vec<f64>>>>,
        payoff: Vec<Vec<Vec<f64>>>,
        discount: f64,
    ) -> Result<Self> {
        validate_spec(SpecFile {
            states: States::Count(payoff.len()),
            actions_u,
            actions_v,
            rates,
            payoff,
            discount,
        })
    }

    /// Same generator for every action pair; labels `u0, u1, ...`.
    pub fn uniform_rates(
        m: usize,
        l: usize,
        generator: Vec<Vec<f64>>,
        payoff: Vec<Vec<Vec<f64>>>,
        discount: f64,
    ) -> Result<Self> {
        let rates = vec![vec![generator; l]; m];
        Self::new(labels("u", m), labels("v", l), rates, payoff, discount)
    }

    pub fn to_file(&self) -> SpecFile {
        let (k, m, l) = (self.n_states, self.n_u(), self.n_v());
        SpecFile {
            states: States::Count(k),
            actions_u: self.actions_u.clone(),
            actions_v: self.actions_v.clone(),
            rates: (0..m)
                .map(|u| {
                    (0..l)
                        .map(|v| {
                            let r = self.rate(u, v);
                            (0..k).map(|i| (0..k).map(|j| r[(i, j)]).collect()).collect()
                        })
                        .collect()
                })
                .collect(),
            payoff: (0..k)
                .map(|s| (0..m).map(|u| (0..l).map(|v| self.payoff(s, u, v)).collect()).collect())
                .collect(),
            discount: self.discount,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_u(&self) -> usize {
        self.actions_u.len()
    }

    pub fn n_v(&self) -> usize {
        self.actions_v.len()
    }

    pub fn actions_u(&self) -> &[String] {
        &self.actions_u
    }

    pub fn actions_v(&self) -> &[String] {
        &self.actions_v
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn rate(&self, u: usize, v: usize) -> &DMatrix<f64> {
        &self.rates[u * self.n_v() + v]
    }

    pub fn payoff(&self, k: usize, u: usize, v: usize) -> f64 {
        self.payoff[(k * self.n_u() + u) * self.n_v() + v]
    }

    /// `ḡ(u, v) = (g(k, u, v))_k`.
    pub fn payoff_vector(&self, u: usize, v: usize) -> Vec<f64> {
        (0..self.n_states).map(|k| self.payoff(k, u, v)).collect()
    }

    /// Largest exit rate `max |R[u][v]_{ii}|`.
    pub fn max_exit_rate(&self) -> f64 {
        self.rates
            .iter()
            .flat_map(|r| (0..self.n_states).map(move |i| r[(i, i)].abs()))
            .fold(0.0, f64::max)
    }

    /// Largest Frobenius norm over the action pairs.
    pub fn rate_norm(&self) -> f64 {
        self.rates.iter().map(|r| r.norm()).fold(0.0, f64::max)
    }

    /// `C = ||R|| sqrt(K) + r sqrt(K)` used as an explicit Lipschitz envelope
    /// for the Hamiltonian.
    pub fn hamiltonian_lipschitz_bound(&self) -> f64 {
        let sk = (self.n_states as f64).sqrt();
        self.rate_norm() * sk + self.discount * sk
    }
}

pub(crate) fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Probability vector over a finite action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MixedAction(Vec<f64>);

impl MixedAction {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("mixed action over an empty set".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("negative weight in {weights:?}")));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > MIXED_TOL {
            return Err(Error::InvalidArgument(format!("weights sum to {s}, not 1")));
        }
        Ok(Self(weights))
    }

    pub fn pure(n: usize, i: usize) -> Self {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Self(w)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for MixedAction {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<MixedAction> for Vec<f64> {
    fn from(m: MixedAction) -> Self {
        m.0
    }
}

/// Checks `p` against the simplex within `1e-10`.
pub fn check_belief(p: &[f64], k: usize) -> Result<()> {
    let s: f64 = p.iter().sum();
    if p.len() != k || p.iter().any(|x| !(*x >= -BELIEF_TOL)) || (s - 1.0).abs() > BELIEF_TOL {
        return Err(Error::OffSimplex(p.to_vec()));
    }
    Ok(())
}

fn check_action(a: &MixedAction, n: usize, side: &str) -> Result<()> {
    if a.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{side} mixed action has {} weights, expected {n}",
            a.len()
        )));
    }
    Ok(())
}

/// `Σ_{u,v} μ_u ν_v R[u][v]`.
pub fn mix_generator(spec: &GameSpec, mu: &MixedAction, nu: &MixedAction) -> Result<DMatrix<f64>> {
    check_action(mu, spec.n_u(), "player 1")?;
    check_action(nu, spec.n_v(), "player 2")?;
    let k = spec.n_states();
    let mut out = DMatrix::zeros(k, k);
    for (u, &a) in mu.weights().iter().enumerate() {
        for (v, &b) in nu.weights().iter().enumerate() {
            if a * b != 0.0 {
                out += spec.rate(u, v) * (a * b);
            }
        }
    }
    Ok(out)
}

/// `ḡ(μ, ν)`: state-wise expected payoff.
pub fn mix_payoff_vector(spec: &GameSpec, mu: &MixedAction, nu: &MixedAction) -> Result<Vec<f64>> {
    check_action(mu, spec.n_u(), "player 1")?;
    check_action(nu, spec.n_v(), "player 2")?;
    Ok((0..spec.n_states())
        .map(|k| {
            let mut s = 0.0;
            for (u, &a) in mu.weights().iter().enumerate() {
                for (v, &b) in nu.weights().iter().enumerate() {
                    s += a * b * spec.payoff(k, u, v);
                }
            }
            s
        })
        .collect())
}

/// `g(p, μ, ν) = Σ_k p_k ḡ_k(μ, ν)`.
pub fn mix_payoff(spec: &GameSpec, p: &[f64], mu: &MixedAction, nu: &MixedAction) -> Result<f64> {
    check_belief(p, spec.n_states())?;
    Ok(dot(p, &mix_payoff_vector(spec, mu, nu)?))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `⟨ᵀR p, z⟩ = pᵀ R z`.
pub(crate) fn transport_pairing(r: &DMatrix<f64>, p: &[f64], z: &[f64]) -> f64 {
    let k = p.len();
    let mut s = 0.0;
    for i in 0..k {
        if p[i] == 0.0 {
            continue;
        }
        let mut rz = 0.0;
        for j in 0..k {
            rz += r[(i, j)] * z[j];
        }
        s += p[i] * rz;
    }
    s
}

/// `ᵀR p`: the belief drift under generator `r`.
pub fn belief_drift(r: &DMatrix<f64>, p: &[f64]) -> Vec<f64> {
    let k = p.len();
    (0..k).map(|j| (0..k).map(|i| r[(i, j)] * p[i]).sum()).collect()
}

#[derive(Debug, Clone)]
pub struct HamiltonianQuery {
    belief: Vec<f64>,
    covector: Vec<f64>,
}

impl HamiltonianQuery {
    pub fn new(belief: Vec<f64>, covector: Vec<f64>) -> Result<Self> {
        check_belief(&belief, belief.len())?;
        if covector.len() != belief.len() {
            return Err(Error::InvalidArgument("covector and belief differ in length".into()));
        }
        Ok(Self { belief, covector })
    }

    pub fn belief(&self) -> &[f64] {
        &self.belief
    }

    pub fn covector(&self) -> &[f64] {
        &self.covector
    }
}

/// Pure-action payoff matrix `A(u,v) = ⟨ᵀR[u][v] p, z⟩ + r g(p,u,v)`.
pub fn hamiltonian_matrix(spec: &GameSpec, query: &HamiltonianQuery) -> Result<Vec<Vec<f64>>> {
    let (p, z) = (query.belief(), query.covector());
    if p.len() != spec.n_states() {
        return Err(Error::InvalidArgument("query dimension differs from the game".into()));
    }
    let r = spec.discount();
    Ok((0..spec.n_u())
        .map(|u| {
            (0..spec.n_v())
                .map(|v| {
                    let g: f64 = (0..p.len()).map(|k| p[k] * spec.payoff(k, u, v)).sum();
                    transport_pairing(spec.rate(u, v), p, z) + r * g
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct HamiltonianValue {
    pub value: f64,
    pub mu: MixedAction,
    pub nu: MixedAction,
    /// Certified duality gap of the returned pair.
    pub gap: f64,
}

/// Value of the infinitesimal game over mixed extensions, with the saddle
/// point of lexicographically smallest support.
pub fn hamiltonian(spec: &GameSpec, query: &HamiltonianQuery) -> Result<HamiltonianValue> {
    let a = hamiltonian_matrix(spec, query)?;
    let s = lp::solve_matrix_game_lexmin(&a)?;
    Ok(HamiltonianValue {
        value: s.value,
        mu: MixedAction(s.row),
        nu: MixedAction(s.col),
        gap: s.gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IsaacsReport {
    pub pure_sup_inf: f64,
    pub pure_inf_sup: f64,
    pub pure_gap: f64,
}

/// Pure-action lower and upper values of the infinitesimal game.
pub fn isaacs_report(spec: &GameSpec, query: &HamiltonianQuery) -> Result<IsaacsReport> {
    let a = hamiltonian_matrix(spec, query)?;
    let sup_inf = a.iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).fold(f64::NEG_INFINITY, f64::max);
    let inf_sup = (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min);
    Ok(IsaacsReport { pure_sup_inf: sup_inf, pure_inf_sup: inf_sup, pure_gap: inf_sup - sup_inf })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pennies() -> GameSpec {
        GameSpec::uniform_rates(2, 2, vec![vec![0.0]], vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]], 1.0)
            .unwrap()
    }

    #[test]
    fn pennies_value_and_pure_gap() {
        let q = HamiltonianQuery::new(vec![1.0], vec![0.0]).unwrap();
        let h = hamiltonian(&pennies(), &q).unwrap();
        assert!((h.value - 0.5).abs() < 1e-12);
        assert!((h.mu.weights()[0] - 0.5).abs() < 1e-9);
        let rep = isaacs_report(&pennies(), &q).unwrap();
        assert_eq!((rep.pure_sup_inf, rep.pure_inf_sup, rep.pure_gap), (0.0, 1.0, 1.0));
    }

    #[test]
    fn row_sum_violation_is_located() {
        let err = GameSpec::uniform_rates(1, 1, vec![vec![-1.0, 1.1], vec![1.0, -1.0]], vec![vec![vec![0.5]]; 2], 1.0)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rates[u=0][v=0] row 0"), "{msg}");
        assert!(msg.contains("row sum"), "{msg}");
    }
}
