//! Dual dynamic program for the concave conjugate `W*(x) = min_p ⟨x,p⟩ - W(p)`.
//!
//! `W*(x + c·1) = W*(x) + c`, so the field is stored in reduced coordinates
//! `y_j = x_j - x_K` (`j < K`) as `φ(y) = W*(y, 0)`, and `W*(x) = x_K + φ(y)`.
//! The lattice covers a box `[-L, L]^{K-1}` in `y`.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::{mix_generator, mix_payoff_vector, GameSpec, MixedAction};
use crate::hj_primal::{action_grid, SolverConfig};
use crate::simplex_field::{build_grid, ConcaveField, LineHull};

/// How the step map `Z_τ` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum StepMode {
    /// Matrix exponential of the augmented generator.
    #[default]
    Exact,
    /// `x + τ (r x - R x - r ḡ)`.
    FirstOrder,
}

/// Regular lattice on `[-L, L]^{K-1}` with `per_axis` points per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGrid {
    k: usize,
    half_width: f64,
    per_axis: usize,
}

impl DualGrid {
    pub fn new(k: usize, half_width: f64, per_axis: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("dual grid needs K >= 1".into()));
        }
        // reduced coordinates of [-1, 2]^K span [-3, 3]
        if !(half_width >= 3.0) {
            return Err(Error::InvalidArgument(format!("dual box half-width {half_width} does not cover [-1, 2]^K")));
        }
        if per_axis < 2 && k > 1 {
            return Err(Error::InvalidArgument("dual lattice needs at least 2 points per axis".into()));
        }
        let count = (per_axis as f64).powi(k as i32 - 1);
        if count > 5e6 {
            return Err(Error::GridTooLarge { count: count as u128, cap: 5_000_000 });
        }
        Ok(Self { k, half_width, per_axis })
    }

    /// Default box half-width `4 sqrt(K) + 1`, with 801 points per axis for
    /// `K = 2` and 61 otherwise.
    pub fn default_for(k: usize) -> Result<Self> {
        let per_axis = if k <= 2 { 801 } else { 61 };
        Self::new(k, 4.0 * (k as f64).sqrt() + 1.0, per_axis)
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// Reduced dimension `K - 1`.
    pub fn reduced_dim(&self) -> usize {
        self.k - 1
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.per_axis - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.per_axis.pow(self.reduced_dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn axis(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Reduced coordinates of lattice point `idx` (first axis slowest).
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let d = self.reduced_dim();
        let mut out = vec![0.0; d];
        let mut rest = idx;
        for j in (0..d).rev() {
            out[j] = self.axis(rest % self.per_axis);
            rest /= self.per_axis;
        }
        out
    }

    /// Full covector `(y, 0)` of lattice point `idx`.
    pub fn covector(&self, idx: usize) -> Vec<f64> {
        let mut x = self.point(idx);
        x.push(0.0);
        x
    }
}

#[derive(Debug, Clone)]
pub struct DualField {
    grid: Arc<DualGrid>,
    values: Vec<f64>,
    hull: Option<LineHull>,
}

impl DualField {
    pub fn from_values(grid: Arc<DualGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!("{} values for a lattice of {}", values.len(), grid.len())));
        }
        let hull = (grid.reduced_dim() == 1).then(|| {
            LineHull::from_sorted(values.iter().enumerate().map(|(i, &v)| (grid.axis(i), v)))
        });
        Ok(Self { grid, values, hull })
    }

    /// `x ↦ min_k x_k - 1`.
    pub fn initial(grid: Arc<DualGrid>) -> Self {
        let values = (0..grid.len())
            .map(|i| grid.point(i).into_iter().fold(0.0, f64::min) - 1.0)
            .collect();
        Self::from_values(grid, values).expect("lattice-sized values")
    }

    /// Conjugate of a primal field sampled on the lattice.
    pub fn from_primal(grid: Arc<DualGrid>, field: &ConcaveField) -> Result<Self> {
        if field.grid().dim() != grid.dim() {
            return Err(Error::InvalidArgument("primal and dual dimensions differ".into()));
        }
        let values = (0..grid.len())
            .map(|i| crate::simplex_field::concave_conjugate(field, &grid.covector(i)))
            .collect();
        Self::from_values(grid, values)
    }

    pub fn grid(&self) -> &DualGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> Arc<DualGrid> {
        Arc::clone(&self.grid)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `φ(y)` and whether `y` lies outside the box. Outside, the value at the
    /// clamped point is extended by `min(0, min_j (y_j - c_j))`, the smallest
    /// slope compatible with `∇φ ∈ {p ≥ 0, Σ p ≤ 1}`.
    pub fn eval_reduced(&self, y: &[f64]) -> (f64, bool) {
        let w = self.grid.half_width;
        if let [y0] = y {
            let c = y0.clamp(-w, w);
            return (self.interpolate(&[c]) + (y0 - c).min(0.0), (y0 - c).abs() > 1e-12);
        }
        let c: Vec<f64> = y.iter().map(|v| v.clamp(-w, w)).collect();
        let outside = y.iter().zip(&c).any(|(a, b)| (a - b).abs() > 1e-12);
        let ext = y.iter().zip(&c).map(|(a, b)| a - b).fold(0.0, f64::min);
        (self.interpolate(&c) + ext, outside)
    }

    fn interpolate(&self, y: &[f64]) -> f64 {
        let g = &*self.grid;
        match g.reduced_dim() {
            0 => self.values[0],
            1 => self.hull.as_ref().map(|h| h.eval(y[0])).unwrap_or(self.values[0]),
            d => {
                let h = g.spacing();
                let n = g.per_axis;
                let mut cell = vec![0usize; d];
                let mut frac = vec![0.0; d];
                for j in 0..d {
                    let s = (y[j] + g.half_width) / h;
                    let c = (s.floor().max(0.0) as usize).min(n - 2);
                    cell[j] = c;
                    frac[j] = (s - c as f64).clamp(0.0, 1.0);
                }
                let mut acc = 0.0;
                for corner in 0..(1usize << d) {
                    let mut w = 1.0;
                    let mut idx = 0;
                    for j in 0..d {
                        let up = (corner >> j) & 1 == 1;
                        w *= if up { frac[j] } else { 1.0 - frac[j] };
                        idx = idx * n + cell[j] + up as usize;
                    }
                    acc += w * self.values[idx];
                }
                acc
            }
        }
    }

    /// `W*(x)` and the out-of-box flag.
    pub fn eval(&self, x: &[f64]) -> (f64, bool) {
        let k = self.grid.dim();
        let xk = x[k - 1];
        let y: Vec<f64> = x[..k - 1].iter().map(|c| c - xk).collect();
        let (v, out) = self.eval_reduced(&y);
        (xk + v, out)
    }

    pub fn sup_distance(&self, other: &DualField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// CSV with columns `x1..xK` (with `x_K = 0`) and `value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.grid.dim()).map(|k| format!("x{k}")).collect();
        header.push("value".into());
        wr.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let mut rec: Vec<String> = self.grid.covector(i).iter().map(|c| c.to_string()).collect();
            rec.push(v.to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Affine step `Z = A x + b` for one action pair.
#[derive(Debug, Clone)]
pub struct AffineStep {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl AffineStep {
    pub fn new(spec: &GameSpec, mu: &MixedAction, nu: &MixedAction, tau: f64, mode: StepMode) -> Result<Self> {
        let k = spec.n_states();
        let r = spec.discount();
        let rm = mix_generator(spec, mu, nu)?;
        let g = DVector::from_vec(mix_payoff_vector(spec, mu, nu)?);
        let bmat = DMatrix::identity(k, k) * r - &rm;
        Ok(match mode {
            StepMode::FirstOrder => Self { a: DMatrix::identity(k, k) + &bmat * tau, b: g * (-tau * r) },
            StepMode::Exact => {
                let mut aug = DMatrix::zeros(k + 1, k + 1);
                aug.view_mut((0, 0), (k, k)).copy_from(&bmat);
                aug.view_mut((0, k), (k, 1)).copy_from(&g);
                let e = (aug * tau).exp();
                Self { a: e.view((0, 0), (k, k)).into_owned(), b: e.view((0, k), (k, 1)).column(0) * (-r) }
            }
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let z = &self.a * DVector::from_column_slice(x) + &self.b;
        z.iter().copied().collect()
    }
}

/// `Z_τ(x, μ, ν) = e^{rτ}(e^{-τR} x - ∫_0^τ r e^{-rt} e^{-(τ-t)R} ḡ dt)` with
/// `R` and `ḡ` averaged over the mixed actions.
pub fn dual_step_map(
    spec: &GameSpec,
    x: &[f64],
    mu: &MixedAction,
    nu: &MixedAction,
    tau: f64,
    mode: StepMode,
) -> Result<Vec<f64>> {
    if x.len() != spec.n_states() {
        return Err(Error::InvalidArgument("covector dimension differs from the game".into()));
    }
    Ok(AffineStep::new(spec, mu, nu, tau, mode)?.apply(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualConfig {
    pub tau: f64,
    pub m_hat: usize,
    pub l_hat: usize,
    pub tol_fp: f64,
    pub max_iter: usize,
    pub mode: StepMode,
    /// Resolution of the simplex grid used to project each iterate onto
    /// conjugates of functions on `Δ(K)`; `None` skips the projection.
    pub projection: Option<u32>,
}

/// Player 1's sampled actions in the dual step: pure actions suffice, since
/// the minimized map is concave in `μ` up to `O(τ²)`.
pub const DUAL_M_HAT: usize = 2;
/// Player 2's samples per dimension in the dual step.
pub const DUAL_L_HAT: usize = 41;

impl From<&SolverConfig> for DualConfig {
    fn from(c: &SolverConfig) -> Self {
        Self {
            tau: c.tau,
            m_hat: DUAL_M_HAT,
            l_hat: DUAL_L_HAT,
            tol_fp: c.tol_fp,
            max_iter: c.max_iter,
            mode: StepMode::Exact,
            projection: Some(c.n),
        }
    }
}

impl Default for DualConfig {
    fn default() -> Self {
        Self::from(&SolverConfig::default())
    }
}

/// Step images of every lattice point under every sampled action pair.
#[derive(Debug, Clone)]
pub struct DualContext {
    grid: Arc<DualGrid>,
    n_nu: usize,
    n_mu: usize,
    /// Per lattice point, per pair (`ν̂`-major): `Z_K` then the reduced `y'`.
    images: Vec<f64>,
    outside: Vec<bool>,
    beta: f64,
    projection: Option<Projection>,
}

/// Lattice-to-simplex pairing table `⟨(y_i, 0), p_j⟩`.
#[derive(Debug, Clone)]
struct Projection {
    n_p: usize,
    pairing: Vec<f64>,
}

impl Projection {
    fn new(grid: &DualGrid, resolution: u32) -> Result<Self> {
        let pg = build_grid(grid.dim(), resolution)?;
        let pairing = (0..grid.len())
            .flat_map(|i| {
                let y = grid.point(i);
                pg.points().iter().map(move |p| y.iter().zip(p).map(|(a, b)| a * b).sum::<f64>()).collect::<Vec<_>>()
            })
            .collect();
        Ok(Self { n_p: pg.len(), pairing })
    }

    /// `φ ↦ φ**` with the inner conjugate taken over the simplex grid.
    fn apply(&self, values: &[f64]) -> Vec<f64> {
        let n_p = self.n_p;
        let conj: Vec<f64> = (0..n_p)
            .into_par_iter()
            .map(|j| {
                values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| self.pairing[i * n_p + j] - v)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        (0..values.len())
            .into_par_iter()
            .map(|i| {
                let row = &self.pairing[i * n_p..(i + 1) * n_p];
                row.iter().zip(&conj).map(|(a, c)| a - c).fold(f64::INFINITY, f64::min)
            })
            .collect()
    }
}

impl DualContext {
    pub fn new(spec: &GameSpec, grid: Arc<DualGrid>, config: &DualConfig) -> Result<Self> {
        if !(config.tau > 0.0) || !(config.tol_fp > 0.0) || config.max_iter == 0 {
            return Err(Error::Config("dual solver needs tau > 0, tol_fp > 0, max_iter >= 1".into()));
        }
        if grid.dim() != spec.n_states() {
            return Err(Error::InvalidArgument("dual grid dimension differs from the game".into()));
        }
        let mus = action_grid(spec.n_u(), config.m_hat)?;
        let nus = action_grid(spec.n_v(), config.l_hat)?;
        let mut steps = Vec::with_capacity(mus.len() * nus.len());
        for nu in &nus {
            for mu in &mus {
                steps.push(AffineStep::new(spec, mu, nu, config.tau, config.mode)?);
            }
        }
        let k = grid.dim();
        let w = grid.half_width;
        let per_point: Vec<(Vec<f64>, bool)> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let x = grid.covector(i);
                let mut buf = Vec::with_capacity(steps.len() * k);
                let mut out = false;
                for s in &steps {
                    let z = s.apply(&x);
                    let zk = z[k - 1];
                    buf.push(zk);
                    for &zj in &z[..k - 1] {
                        out |= (zj - zk).abs() > w + 1e-12;
                        buf.push(zj - zk);
                    }
                }
                (buf, out)
            })
            .collect();
        let outside = per_point.iter().map(|p| p.1).collect();
        let images = per_point.into_iter().flat_map(|p| p.0).collect();
        let projection = config.projection.map(|n| Projection::new(&grid, n)).transpose()?;
        Ok(Self {
            grid,
            n_nu: nus.len(),
            n_mu: mus.len(),
            images,
            outside,
            beta: (-spec.discount() * config.tau).exp(),
            projection,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DualOperatorOutput {
    pub field: DualField,
    /// Lattice points whose step images left the box for some action pair.
    pub extrapolated: Vec<usize>,
}

fn dual_apply_with(ctx: &DualContext, field: &DualField) -> Result<DualOperatorOutput> {
    if *field.grid != *ctx.grid {
        return Err(Error::InvalidArgument("dual field lattice differs from the operator lattice".into()));
    }
    let k = ctx.grid.dim();
    let stride = ctx.n_nu * ctx.n_mu * k;
    let values: Vec<f64> = (0..ctx.grid.len())
        .into_par_iter()
        .map(|i| {
            let img = &ctx.images[i * stride..(i + 1) * stride];
            let mut best = f64::NEG_INFINITY;
            for j in 0..ctx.n_nu {
                let mut worst = f64::INFINITY;
                for m in 0..ctx.n_mu {
                    let e = &img[(j * ctx.n_mu + m) * k..(j * ctx.n_mu + m + 1) * k];
                    let (v, _) = field.eval_reduced(&e[1..]);
                    worst = worst.min(ctx.beta * (e[0] + v));
                }
                best = best.max(worst);
            }
            best
        })
        .collect();
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NoConvergence { iterations: 0, residual: *bad });
    }
    let values = match &ctx.projection {
        Some(p) => p.apply(&values),
        None => values,
    };
    let extrapolated = ctx.outside.iter().enumerate().filter(|(_, &o)| o).map(|(i, _)| i).collect();
    Ok(DualOperatorOutput { field: DualField::from_values(Arc::clone(&ctx.grid), values)?, extrapolated })
}

/// `φ_new(x) = max_ν̂ min_μ̂ e^{-rτ} W*(Z_τ(x, μ̂, ν̂))` over the sampled grids.
pub fn apply_dual_operator(spec: &GameSpec, field: &DualField, config: &DualConfig) -> Result<DualOperatorOutput> {
    if field.grid().dim() != spec.n_states() {
        return Err(Error::InvalidArgument("dual field dimension differs from the game".into()));
    }
    dual_apply_with(&DualContext::new(spec, field.grid_arc(), config)?, field)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualReport {
    pub iterations: usize,
    pub residual: f64,
    pub apriori_bound: f64,
    pub wall_time_ms: u64,
    /// Lattice points that needed extrapolation in the final sweep.
    pub extrapolated_points: usize,
}

/// Iterates the dual operator from `x ↦ min_k x_k - 1` (or `initial`).
pub fn solve_dual(
    spec: &GameSpec,
    grid: Arc<DualGrid>,
    config: &DualConfig,
    initial: Option<DualField>,
) -> Result<(DualField, DualReport)> {
    let start = Instant::now();
    let ctx = DualContext::new(spec, Arc::clone(&grid), config)?;
    let mut field = initial.unwrap_or_else(|| DualField::initial(Arc::clone(&grid)));
    let mut residual = f64::INFINITY;
    for it in 1..=config.max_iter {
        let out = dual_apply_with(&ctx, &field).map_err(|e| match e {
            Error::NoConvergence { residual, .. } => Error::NoConvergence { iterations: it, residual },
            e => e,
        })?;
        residual = out.field.sup_distance(&field);
        field = out.field;
        if residual <= config.tol_fp {
            let report = DualReport {
                iterations: it,
                residual,
                apriori_bound: residual / (1.0 - ctx.beta),
                wall_time_ms: start.elapsed().as_millis() as u64,
                extrapolated_points: out.extrapolated.len(),
            };
            return Ok((field, report));
        }
    }
    Err(Error::NoConvergence { iterations: config.max_iter, residual })
}

/// `min_y ⟨(y,0), p⟩ - φ(y)` over lattice points.
pub fn dual_conjugate_at(dual: &DualField, p: &[f64]) -> f64 {
    let g = dual.grid();
    (0..g.len())
        .map(|i| {
            let y = g.point(i);
            y.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() - dual.values[i]
        })
        .fold(f64::INFINITY, f64::min)
}

/// `max_p |(dual)*(p) - env(p)|` over the primal grid.
pub fn duality_gap(primal: &ConcaveField, dual: &DualField) -> Result<f64> {
    if primal.grid().dim() != dual.grid().dim() {
        return Err(Error::InvalidArgument("primal and dual dimensions differ".into()));
    }
    let g = primal.grid();
    Ok((0..g.len())
        .into_par_iter()
        .map(|i| (dual_conjugate_at(dual, g.point(i)) - primal.envelope_values()[i]).abs())
        .reduce(|| 0.0, f64::max))
}
