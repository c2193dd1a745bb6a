//! Spec loading, subcommand pipelines and artifact bookkeeping.
//!
//! Every artifact a run writes is hashed into `manifest.json`. Wall-clock
//! times are printed to stderr only, so identical runs give byte-identical
//! files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain_sim::{
    martingale_probe, payoff_estimate, simulate_chain, truncation_horizon, write_json, ControlPath, OpenLoop,
    RngStream, DEFAULT_HORIZON_EPS,
};
use crate::error::{Error, Result};
use crate::game_model::{validate_spec, GameSpec, SpecFile};
use crate::hj_dual::{duality_gap, solve_dual, DualConfig, DualGrid};
use crate::hj_primal::{solve_primal, SolverConfig};
use crate::simplex_field::ConcaveField;
use crate::strategy_engine::{best_response_probe, response_class, solver_strategy, StrategyConfig, TimeGrid};
use crate::variational_checker::{regularity_report, residual_report, uniqueness_probe, CheckConfig};

/// Default seed of every subcommand.
pub const DEFAULT_SEED: u64 = 42;
/// Slack over `sqrt(K)` allowed in the regularity report.
pub const LIPSCHITZ_SLACK: f64 = 0.5;
/// Default Monte-Carlo sample size of `simulate` and `evaluate`.
pub const DEFAULT_PATHS: usize = 10_000;
/// Trajectories dumped by `simulate`.
pub const DUMPED_TRAJECTORIES: usize = 10;
/// Spacing of the switch times in the `evaluate` response class.
pub const SWITCH_SPACING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    SolveDual,
    Check,
    Simulate,
    Evaluate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::SolveDual => "solve-dual",
            Command::Check => "check",
            Command::Simulate => "simulate",
            Command::Evaluate => "evaluate",
        }
    }
}

/// Values given on the command line; `None` keeps the default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub n: Option<u32>,
    pub tau: Option<f64>,
    pub eps: Option<f64>,
    pub belief: Option<Vec<f64>>,
    pub paths: Option<usize>,
    pub field: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec: PathBuf,
    pub subcommand: Command,
    pub overrides: Overrides,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// sha256 of each input file.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of each written artifact, by file name.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(subcommand: Command, spec: PathBuf, out_dir: PathBuf, seed: u64, overrides: Overrides) -> Self {
        Self { spec, subcommand, overrides, seed, out_dir, inputs: BTreeMap::new(), outputs: BTreeMap::new() }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses and validates a spec file. Parse errors carry line and column;
/// validation errors name the offending entry.
pub fn load_spec(path: &Path) -> Result<GameSpec> {
    let text = fs::read_to_string(path)?;
    parse_spec(&text)
}

pub fn parse_spec(text: &str) -> Result<GameSpec> {
    let file: SpecFile = serde_json::from_str(text)?;
    validate_spec(file)
}

/// Plot table of the envelope: `p2,W` for two states, `p1,p2,p3,W` for
/// three, `p1..pK,W` otherwise. Rows follow the grid order.
pub fn export_plot_data<W: Write>(field: &ConcaveField, w: W) -> Result<()> {
    let k = field.grid().dim();
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = if k == 2 { vec!["p2".into()] } else { (1..=k).map(|j| format!("p{j}")).collect() };
    header.push("W".into());
    wr.write_record(&header)?;
    for (i, &v) in field.envelope_values().iter().enumerate() {
        let p = field.grid().point(i);
        let mut rec: Vec<String> = if k == 2 { vec![p[1].to_string()] } else { p.iter().map(|x| x.to_string()).collect() };
        rec.push(v.to_string());
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Tracks written files so a failed run can remove them.
struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    fn file(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        self.written.push(name.to_string());
        let mut w = BufWriter::new(fs::File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.written.push(name.to_string());
        write_json(&self.dir.join(name), value)
    }

    fn cleanup(&self) {
        for name in &self.written {
            let _ = fs::remove_file(self.dir.join(name));
        }
        let _ = fs::remove_file(self.dir.join("manifest.json"));
    }
}

#[derive(Serialize)]
struct PrimalSummary {
    iterations: usize,
    residual: f64,
    apriori_bound: f64,
    config: SolverConfig,
}

fn solver_config(spec: &GameSpec, o: &Overrides) -> Result<SolverConfig> {
    let mut c = SolverConfig::default();
    if let Some(n) = o.n {
        c.n = n;
    }
    if let Some(t) = o.tau {
        c.tau = t;
    }
    c.validate(spec)?;
    Ok(c)
}

fn belief(spec: &GameSpec, o: &Overrides) -> Result<Vec<f64>> {
    let k = spec.n_states();
    let p = o.belief.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]);
    crate::game_model::check_belief(&p, k)?;
    Ok(p)
}

/// Field from `--field`, or a fresh solve written as `primal_field.csv`.
fn primal_field(spec: &GameSpec, cfg: &SolverConfig, m: &mut RunManifest, a: &mut Artifacts) -> Result<ConcaveField> {
    if let Some(path) = &m.overrides.field {
        let bytes = fs::read(path)?;
        m.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        let f = ConcaveField::read_csv(bytes.as_slice())?;
        if f.grid().dim() != spec.n_states() {
            return Err(Error::InvalidArgument("field dimension differs from the spec".into()));
        }
        return Ok(f);
    }
    let (f, rep) = solve_primal(spec, cfg, None)?;
    eprintln!("primal: {} iterations, residual {:e}, {} ms", rep.iterations, rep.residual, rep.wall_time_ms);
    a.file("primal_field.csv", |w| f.write_csv(w))?;
    let summary = PrimalSummary { iterations: rep.iterations, residual: rep.residual, apriori_bound: rep.apriori_bound, config: *cfg };
    a.json("convergence.json", &summary)?;
    Ok(f)
}

fn dispatch(spec: &GameSpec, m: &mut RunManifest, a: &mut Artifacts) -> Result<()> {
    let cfg = solver_config(spec, &m.overrides)?;
    let eps = m.overrides.eps.unwrap_or(DEFAULT_HORIZON_EPS);
    let n_paths = m.overrides.paths.unwrap_or(DEFAULT_PATHS);
    match m.subcommand {
        Command::Solve => {
            let saved = m.overrides.field.take();
            let f = primal_field(spec, &cfg, m, a);
            m.overrides.field = saved;
            let f = f?;
            a.file("plot.csv", |w| export_plot_data(&f, w))?;
        }
        Command::SolveDual => {
            let f = primal_field(spec, &cfg, m, a)?;
            let dcfg = DualConfig::from(&cfg);
            let grid = Arc::new(DualGrid::default_for(spec.n_states())?);
            let (d, rep) = solve_dual(spec, grid, &dcfg, None)?;
            eprintln!("dual: {} iterations, residual {:e}, {} ms", rep.iterations, rep.residual, rep.wall_time_ms);
            a.file("dual_field.csv", |w| d.write_csv(w))?;
            let gap = duality_gap(&f, &d)?;
            a.json(
                "duality.json",
                &serde_json::json!({
                    "duality_gap": gap,
                    "iterations": rep.iterations,
                    "residual": rep.residual,
                    "apriori_bound": rep.apriori_bound,
                    "extrapolated_points": rep.extrapolated_points,
                    "config": dcfg,
                }),
            )?;
        }
        Command::Check => {
            let f = primal_field(spec, &cfg, m, a)?;
            let ccfg = CheckConfig::default();
            let rep = residual_report(spec, &f, &ccfg)?;
            a.file("residuals.csv", |w| rep.write_csv(w))?;
            let reg = regularity_report(&f, LIPSCHITZ_SLACK)?;
            let uniq = uniqueness_probe(spec, &cfg, m.seed)?;
            a.json(
                "check.json",
                &serde_json::json!({
                    "min_supvar": rep.min_supvar(),
                    "max_subvar": rep.max_subvar(),
                    "exposed_points": rep.exposed_count(),
                    "tol_cert": rep.tol_cert,
                    "nu_mesh": rep.nu_mesh,
                    "residuals_pass": rep.passes(),
                    "regularity": reg,
                    "uniqueness": uniq,
                }),
            )?;
        }
        Command::Simulate => {
            let p = belief(spec, &m.overrides)?;
            let horizon = truncation_horizon(spec.discount(), eps)?;
            let (lu, lv) = (spec.n_u() - 1, spec.n_v() - 1);
            let alternating: Vec<(usize, usize)> = (0..10).map(|i| if i % 2 == 0 { (0, 0) } else { (lu, lv) }).collect();
            let paths = [
                ControlPath::constant(0, 0, horizon)?,
                ControlPath::constant(lu, lv, horizon)?,
                ControlPath::regular(horizon / 10.0, alternating)?,
            ];
            for i in 0..DUMPED_TRAJECTORIES {
                let mut rng = RngStream::new(m.seed, crate::chain_sim::family::CHAIN, i as u64);
                let sim = simulate_chain(spec, &p, &mut OpenLoop::new(&paths[0]), horizon, &mut rng)?;
                let t = &sim.trajectory;
                a.file(&format!("trajectory_{i}.csv"), |w| {
                    let mut wr = csv::Writer::from_writer(w);
                    wr.write_record(["jump_time", "new_state"])?;
                    wr.write_record(["0".to_string(), t.initial().to_string()])?;
                    for j in t.jumps() {
                        wr.write_record([j.time.to_string(), j.state.to_string()])?;
                    }
                    wr.flush()?;
                    Ok(())
                })?;
            }
            let t_probe = 1.0f64.min(horizon);
            let probes = paths
                .iter()
                .map(|path| {
                    let r = martingale_probe(spec, &p, path, t_probe, n_paths.max(crate::chain_sim::MIN_PROBE_PATHS), m.seed)?;
                    Ok(serde_json::json!({
                        "control_path": path,
                        "t": t_probe,
                        "report": r,
                        "pass": r.excess(&p, 3.0) <= 0.0,
                    }))
                })
                .collect::<Result<Vec<_>>>()?;
            a.json("martingale.json", &probes)?;
            let report = payoff_estimate(spec, &p, |_| Ok(OpenLoop::new(&paths[0])), eps, n_paths, m.seed)?;
            a.json("simulation.json", &report)?;
        }
        Command::Evaluate => {
            let f = primal_field(spec, &cfg, m, a)?;
            let p = belief(spec, &m.overrides)?;
            let scfg = StrategyConfig { eps, ..StrategyConfig::default() };
            let strat = solver_strategy(spec, &f, &cfg, &scfg)?;
            a.json("strategy.json", &strat.describe())?;
            let grid = strat.grid().clone();
            let switches = TimeGrid::regular(SWITCH_SPACING, grid.horizon())?;
            let responses = response_class(spec, &grid, &switches);
            let at = strat.at(&p)?;
            let rep = best_response_probe(spec, &p, &at, &responses, eps, n_paths, m.seed)?;
            let value = crate::simplex_field::eval_envelope(&f, &p)?;
            a.json(
                "probe.json",
                &serde_json::json!({
                    "worst_payoff": rep.worst_payoff,
                    "stderr": rep.stderr,
                    "argmin_response_id": rep.argmin_response_id,
                    "field_value": value,
                    "n_paths": rep.n_paths,
                    "horizon": rep.horizon,
                    "seed": rep.seed,
                    "responses": rep.responses,
                }),
            )?;
        }
    }
    Ok(())
}

/// Runs one subcommand. On failure every artifact written by this run is
/// removed and the error is returned.
pub fn run_command(mut manifest: RunManifest) -> Result<RunManifest> {
    let spec_bytes = fs::read(&manifest.spec)?;
    manifest.inputs.insert(manifest.spec.display().to_string(), sha256_hex(&spec_bytes));
    let text = String::from_utf8(spec_bytes).map_err(|e| Error::InvalidArgument(format!("spec is not UTF-8: {e}")))?;
    let spec = parse_spec(&text)?;
    let created = !manifest.out_dir.exists();
    fs::create_dir_all(&manifest.out_dir)?;
    let mut art = Artifacts { dir: manifest.out_dir.clone(), written: Vec::new() };
    let outcome = dispatch(&spec, &mut manifest, &mut art).and_then(|()| {
        for name in &art.written {
            let bytes = fs::read(art.dir.join(name))?;
            manifest.outputs.insert(name.clone(), sha256_hex(&bytes));
        }
        write_json(&art.dir.join("manifest.json"), &manifest)
    });
    match outcome {
        Ok(()) => Ok(manifest),
        Err(e) => {
            art.cleanup();
            if created {
                let _ = fs::remove_dir(&art.dir);
            }
            Err(e)
        }
    }
}
