//! Configuration and command dispatch for the `lorvar` binary.
//!
//! Configuration documents are line oriented: `section.key = value`, with
//! `#` comments and blank lines ignored. Every key has a default and unknown
//! keys are rejected. The effective configuration is written to `config.txt`
//! next to the results, in the same format, so a run can be repeated from it.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{
    continuity_sweep, modulus_experiment, norm_suite, relation_check, timed, transfer_operator_suite, Budgets,
    CriterionOutcome, ModulusConfig, ObservableSpec, RelationConfig, SweepConfig, Tier, Verdict,
};
use crate::lorenzode::{
    check_tol, crossings_csv, empirical_quotient, return_time_regression, section_returns, singularity_eigenvalues, OdeParams,
};
use crate::onedmap::{build_ulam, invariant_density, Partition, POWER_MAX_ITER, POWER_TOL};
use crate::output::{self, Csv};
use crate::skewmap::{
    clt_oracle_map, correlation_csv, correlation_sequence, evaluate, green_kubo_series, sample_srb, Flag, VarianceEstimate,
    MAX_LAG, MIN_BURN_IN,
};
use crate::suspension::{flow_monte_carlo, flow_variance, FlowRecord, GeometricModel, RoofFunction, Suspension};

/// Smallest sample count accepted for Green–Kubo estimates.
const MIN_SAMPLES: usize = 10_000;
/// Branch exponents allowed by the expansion requirement of the base map.
const GAMMA_RANGE: (f64, f64) = (0.55, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Ulam,
    MapVariance,
    FlowVariance,
    OdeReturns,
    Sweep,
    Modulus,
    RelationCheck,
    Report,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Ulam,
        Command::MapVariance,
        Command::FlowVariance,
        Command::OdeReturns,
        Command::Sweep,
        Command::Modulus,
        Command::RelationCheck,
        Command::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Ulam => "ulam",
            Command::MapVariance => "map-variance",
            Command::FlowVariance => "flow-variance",
            Command::OdeReturns => "ode-returns",
            Command::Sweep => "sweep",
            Command::Modulus => "modulus",
            Command::RelationCheck => "relation-check",
            Command::Report => "report",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Command::ALL.iter().map(|c| c.name()).collect();
            Error::Config(format!("unknown command `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Config(format!("unknown format `{s}` (expected csv or json)"))),
        }
    }
}

/// Section crossing settings of `ode-returns`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeSettings {
    pub eps: f64,
    pub tol: f64,
    pub section_z: f64,
    pub n_returns: usize,
    pub bins: usize,
    /// Return-time regression window as a fraction of the quotient range.
    pub window: f64,
}

impl Default for OdeSettings {
    fn default() -> Self {
        Self { eps: 0.0, tol: 1e-9, section_z: 27.0, n_returns: 100_000, bins: 256, window: 0.01 }
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub out: PathBuf,
    pub format: Format,
    pub model: GeometricModel,
    /// Perturbation used by `ulam`, `map-variance` and `flow-variance`.
    pub eps: f64,
    pub ulam_cells: usize,
    pub observable: ObservableSpec,
    pub samples: usize,
    pub burn_in: usize,
    /// Map Monte-Carlo oracle: block length and replicas (0 replicas disables it).
    pub mc_block: usize,
    pub mc_reps: usize,
    pub constant_roof: Option<f64>,
    /// Flow Monte-Carlo oracle: windows and their length (0 windows disables it).
    pub flow_mc_blocks: usize,
    pub flow_mc_block_time: f64,
    pub ode: OdeSettings,
    pub tier: Tier,
    pub sweep: SweepConfig,
    pub modulus: ModulusConfig,
    pub relation: RelationConfig,
    pub relation_observable: ObservableSpec,
    pub truncation_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let budgets = Budgets::default();
        let mut cfg = Self {
            command: Command::Report,
            seed: 0,
            out: PathBuf::from("out"),
            format: Format::Csv,
            model: GeometricModel::default(),
            eps: 0.0,
            ulam_cells: 1024,
            observable: ObservableSpec::X,
            samples: budgets.map_samples,
            burn_in: MIN_BURN_IN,
            mc_block: budgets.mc_block,
            mc_reps: budgets.mc_reps,
            constant_roof: None,
            flow_mc_blocks: budgets.sweep.mc_blocks,
            flow_mc_block_time: budgets.sweep.mc_block_time,
            ode: OdeSettings::default(),
            tier: Tier::Geometric,
            sweep: budgets.sweep,
            modulus: budgets.modulus,
            relation: budgets.relation,
            relation_observable: ObservableSpec::X,
            truncation_samples: budgets.truncation_samples,
        };
        cfg.resolve();
        cfg
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_optional(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn list(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "run.command" => self.command = v.parse()?,
            "run.seed" => self.seed = parse(key, v)?,
            "run.out" => self.out = PathBuf::from(v),
            "run.format" => self.format = v.parse()?,
            "onedmap.gamma" => self.model.gamma0 = parse(key, v)?,
            "onedmap.eps" => self.eps = parse(key, v)?,
            "onedmap.cells" => self.ulam_cells = parse(key, v)?,
            "skewmap.rho" => self.model.fiber_rho = parse(key, v)?,
            "skewmap.offset" => self.model.fiber_offset = parse(key, v)?,
            "skewmap.observable" => self.observable = v.parse()?,
            "skewmap.samples" => self.samples = parse(key, v)?,
            "skewmap.burn_in" => self.burn_in = parse(key, v)?,
            "skewmap.mc_block" => self.mc_block = parse(key, v)?,
            "skewmap.mc_reps" => self.mc_reps = parse(key, v)?,
            "suspension.tau2" => self.model.tau2 = parse(key, v)?,
            "suspension.constant_roof" => self.constant_roof = parse_optional(key, v)?,
            "suspension.mc_blocks" => self.flow_mc_blocks = parse(key, v)?,
            "suspension.mc_block_time" => self.flow_mc_block_time = parse(key, v)?,
            "ode.eps" => self.ode.eps = parse(key, v)?,
            "ode.tol" => self.ode.tol = parse(key, v)?,
            "ode.section_z" => self.ode.section_z = parse(key, v)?,
            "ode.n_returns" => self.ode.n_returns = parse(key, v)?,
            "ode.bins" => self.ode.bins = parse(key, v)?,
            "ode.window" => self.ode.window = parse(key, v)?,
            "sweep.tier" => self.tier = v.parse()?,
            "sweep.eps_grid" => self.sweep.eps_grid = parse_list(key, v)?,
            "sweep.observable" => self.sweep.observable = v.parse()?,
            "sweep.samples" => self.sweep.samples = parse(key, v)?,
            "sweep.burn_in" => self.sweep.burn_in = parse(key, v)?,
            "sweep.mc_blocks" => self.sweep.mc_blocks = parse(key, v)?,
            "sweep.mc_block_time" => self.sweep.mc_block_time = parse(key, v)?,
            "sweep.ulam_cells" => self.sweep.ulam_cells = parse(key, v)?,
            "sweep.ode_time" => self.sweep.ode_time = parse(key, v)?,
            "sweep.ode_batches" => self.sweep.ode_batches = parse(key, v)?,
            "sweep.ode_tol" => self.sweep.ode_tol = parse(key, v)?,
            "modulus.eps_values" => self.modulus.eps_values = parse_list(key, v)?,
            "modulus.deltas" => self.modulus.deltas = parse_list(key, v)?,
            "modulus.samples" => self.modulus.samples = parse(key, v)?,
            "modulus.burn_in" => self.modulus.burn_in = parse(key, v)?,
            "modulus.mc_blocks" => self.modulus.mc_blocks = parse(key, v)?,
            "modulus.mc_block_time" => self.modulus.mc_block_time = parse(key, v)?,
            "relation.eps" => self.relation.eps = parse(key, v)?,
            "relation.observable" => self.relation_observable = v.parse()?,
            "relation.samples" => self.relation.samples = parse(key, v)?,
            "relation.burn_in" => self.relation.burn_in = parse(key, v)?,
            "relation.blocks" => self.relation.blocks = parse(key, v)?,
            "relation.block_time" => self.relation.block_time = parse(key, v)?,
            "report.truncation_samples" => self.truncation_samples = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its effective value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |c| c.to_string());
        vec![
            ("run.command", self.command.to_string()),
            ("run.seed", self.seed.to_string()),
            ("run.out", self.out.display().to_string()),
            ("run.format", self.format.to_string()),
            ("onedmap.gamma", self.model.gamma0.to_string()),
            ("onedmap.eps", self.eps.to_string()),
            ("onedmap.cells", self.ulam_cells.to_string()),
            ("skewmap.rho", self.model.fiber_rho.to_string()),
            ("skewmap.offset", self.model.fiber_offset.to_string()),
            ("skewmap.observable", self.observable.to_string()),
            ("skewmap.samples", self.samples.to_string()),
            ("skewmap.burn_in", self.burn_in.to_string()),
            ("skewmap.mc_block", self.mc_block.to_string()),
            ("skewmap.mc_reps", self.mc_reps.to_string()),
            ("suspension.tau2", self.model.tau2.to_string()),
            ("suspension.constant_roof", opt(self.constant_roof)),
            ("suspension.mc_blocks", self.flow_mc_blocks.to_string()),
            ("suspension.mc_block_time", self.flow_mc_block_time.to_string()),
            ("ode.eps", self.ode.eps.to_string()),
            ("ode.tol", self.ode.tol.to_string()),
            ("ode.section_z", self.ode.section_z.to_string()),
            ("ode.n_returns", self.ode.n_returns.to_string()),
            ("ode.bins", self.ode.bins.to_string()),
            ("ode.window", self.ode.window.to_string()),
            ("sweep.tier", self.tier.to_string()),
            ("sweep.eps_grid", list(&self.sweep.eps_grid)),
            ("sweep.observable", self.sweep.observable.to_string()),
            ("sweep.samples", self.sweep.samples.to_string()),
            ("sweep.burn_in", self.sweep.burn_in.to_string()),
            ("sweep.mc_blocks", self.sweep.mc_blocks.to_string()),
            ("sweep.mc_block_time", self.sweep.mc_block_time.to_string()),
            ("sweep.ulam_cells", self.sweep.ulam_cells.to_string()),
            ("sweep.ode_time", self.sweep.ode_time.to_string()),
            ("sweep.ode_batches", self.sweep.ode_batches.to_string()),
            ("sweep.ode_tol", self.sweep.ode_tol.to_string()),
            ("modulus.eps_values", list(&self.modulus.eps_values)),
            ("modulus.deltas", list(&self.modulus.deltas)),
            ("modulus.samples", self.modulus.samples.to_string()),
            ("modulus.burn_in", self.modulus.burn_in.to_string()),
            ("modulus.mc_blocks", self.modulus.mc_blocks.to_string()),
            ("modulus.mc_block_time", self.modulus.mc_block_time.to_string()),
            ("relation.eps", self.relation.eps.to_string()),
            ("relation.observable", self.relation_observable.to_string()),
            ("relation.samples", self.relation.samples.to_string()),
            ("relation.burn_in", self.relation.burn_in.to_string()),
            ("relation.blocks", self.relation.blocks.to_string()),
            ("relation.block_time", self.relation.block_time.to_string()),
            ("report.truncation_samples", self.truncation_samples.to_string()),
        ]
    }

    /// The effective configuration as a document `parse_config` accepts.
    pub fn echo(&self) -> String {
        let mut out = String::from("# effective configuration\n");
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Copies the shared seed and model into the experiment configurations.
    fn resolve(&mut self) {
        self.sweep.seed = self.seed;
        self.sweep.model = self.model;
        self.modulus.seed = self.seed;
        self.modulus.model = self.model;
        self.relation.seed = self.seed;
        self.relation.model = self.model;
        self.relation.constant_roof = self.constant_roof;
    }

    /// Command-line flags take precedence over the document.
    pub fn apply_overrides(
        &mut self,
        command: Option<Command>,
        seed: Option<u64>,
        out: Option<PathBuf>,
        format: Option<Format>,
    ) -> Result<()> {
        if let Some(c) = command {
            self.command = c;
        }
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out = o;
        }
        if let Some(f) = format {
            self.format = f;
        }
        self.resolve();
        self.validate()
    }

    /// The suspension of the single-ε commands, with the constant roof if set.
    pub fn suspension(&self, eps: f64) -> Result<Suspension> {
        let s = self.model.suspension(eps)?;
        Ok(match self.constant_roof {
            Some(c) => s.with_roof(RoofFunction::constant(c)?),
            None => s,
        })
    }

    pub fn budgets(&self) -> Budgets {
        Budgets {
            seed: self.seed,
            model: self.model,
            map_samples: self.samples,
            mc_block: self.mc_block,
            mc_reps: self.mc_reps,
            truncation_samples: self.truncation_samples,
            crossings: self.ode.n_returns,
            quotient_bins: self.ode.bins,
            ode_tol: self.ode.tol,
            sweep: self.sweep.clone(),
            modulus: self.modulus.clone(),
            relation: RelationConfig { constant_roof: None, ..self.relation.clone() },
        }
    }

    /// Checks every parameter against the invariants of the module it feeds.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let g = self.model.gamma0;
        if !(g > GAMMA_RANGE.0 && g < GAMMA_RANGE.1) {
            return bad(format!(
                "onedmap.gamma = {g} violates the expansion invariant {} < γ < {}",
                GAMMA_RANGE.0, GAMMA_RANGE.1
            ));
        }
        let mut eps_values = vec![("onedmap.eps", self.eps), ("relation.eps", self.relation.eps)];
        eps_values.extend(self.sweep.eps_grid.iter().map(|&e| ("sweep.eps_grid", e)));
        eps_values.extend(self.modulus.eps_values.iter().map(|&e| ("modulus.eps_values", e)));
        for (key, eps) in eps_values {
            if !(eps.is_finite() && eps >= 0.0) {
                return bad(format!("{key} = {eps}: perturbations must be finite and nonnegative"));
            }
            self.model.suspension(eps).map_err(|e| Error::Config(format!("{key} = {eps}: {e}")))?;
        }
        if let Some(c) = self.constant_roof {
            RoofFunction::constant(c).map_err(|e| Error::Config(format!("suspension.constant_roof: {e}")))?;
        }
        if self.ulam_cells < 2 {
            return bad("onedmap.cells must be at least 2".into());
        }
        for (key, n) in [
            ("skewmap.samples", self.samples),
            ("modulus.samples", self.modulus.samples),
            ("relation.samples", self.relation.samples),
            ("report.truncation_samples", self.truncation_samples),
        ] {
            if n < MIN_SAMPLES {
                return bad(format!("{key} = {n} is below the minimum of {MIN_SAMPLES} samples"));
            }
        }
        for (key, n) in [
            ("skewmap.burn_in", self.burn_in),
            ("sweep.burn_in", self.sweep.burn_in),
            ("modulus.burn_in", self.modulus.burn_in),
            ("relation.burn_in", self.relation.burn_in),
        ] {
            if n < MIN_BURN_IN {
                return bad(format!("{key} = {n} is below the minimum burn-in of {MIN_BURN_IN}"));
            }
        }
        if self.mc_block == 0 || self.mc_reps == 1 {
            return bad("skewmap.mc_block must be positive and skewmap.mc_reps 0 or at least 2".into());
        }
        if self.flow_mc_blocks == 1 || !(self.flow_mc_block_time > 0.0) {
            return bad("suspension.mc_blocks must be 0 or at least 2 and suspension.mc_block_time positive".into());
        }
        if self.relation.blocks < 2 || !(self.relation.block_time > 0.0) {
            return bad("relation.blocks must be at least 2 and relation.block_time positive".into());
        }
        check_tol(self.ode.tol).map_err(|e| Error::Config(format!("ode.tol: {e}")))?;
        check_tol(self.sweep.ode_tol).map_err(|e| Error::Config(format!("sweep.ode_tol: {e}")))?;
        OdeParams::new(self.ode.eps).map_err(|e| Error::Config(format!("ode.eps: {e}")))?;
        if self.ode.n_returns < 100 || self.ode.bins < 4 || !(self.ode.window > 0.0 && self.ode.window <= 0.5) {
            return bad("ode needs n_returns ≥ 100, bins ≥ 4 and 0 < window ≤ 0.5".into());
        }
        if !self.ode.section_z.is_finite() {
            return bad("ode.section_z must be finite".into());
        }
        self.sweep.validate()?;
        if self.modulus.deltas.len() < 4 || self.modulus.deltas.iter().any(|d| !(d.is_finite() && *d != 0.0)) {
            return bad("modulus.deltas needs at least four finite nonzero scales".into());
        }
        if self.modulus.eps_values.is_empty() || !(self.modulus.mc_block_time > 0.0) || self.modulus.mc_blocks == 1 {
            return bad("modulus needs an ε value, mc_blocks 0 or ≥ 2 and a positive mc_block_time".into());
        }
        Ok(())
    }
}

/// Parses a configuration document into a validated [`RunConfig`].
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `section.key = value`", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::Config(format!("line {}: key `{key}` set twice", n + 1)));
        }
        cfg.set(key, value)?;
    }
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

/// Result of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub verdict: Verdict,
    /// Human-readable summary for standard output.
    pub lines: Vec<String>,
}

fn write_table(cfg: &RunConfig, dir: &Path, stem: &str, csv: &Csv) -> Result<()> {
    match cfg.format {
        Format::Csv => output::write_atomic(&dir.join(format!("{stem}.csv")), csv.as_str().as_bytes()),
        Format::Json => output::write_json(&dir.join(format!("{stem}.json")), &csv.to_json()),
    }
}

/// Runs the configured command, writing its artifacts under `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.out.as_path();
    fs::create_dir_all(dir)?;
    output::write_atomic(&dir.join("config.txt"), cfg.echo().as_bytes())?;
    match cfg.command {
        Command::Ulam => run_ulam(cfg, dir),
        Command::MapVariance => run_map_variance(cfg, dir),
        Command::FlowVariance => run_flow_variance(cfg, dir),
        Command::OdeReturns => run_ode_returns(cfg, dir),
        Command::Sweep => {
            let r = continuity_sweep(&cfg.sweep, cfg.tier)?;
            r.write(dir, cfg.format == Format::Json)?;
            Ok(RunOutcome { verdict: r.verdict, lines: r.report().lines().map(str::to_string).collect() })
        }
        Command::Modulus => run_modulus(cfg, dir),
        Command::RelationCheck => {
            let r = relation_check(&cfg.relation_observable.induced(), &cfg.relation)?;
            output::write_json(&dir.join("relation.json"), &r)?;
            let line = format!(
                "{} flow {} ± {} vs map {} ± {} ({:.2} se)",
                r.verdict, r.flow_side.value, r.flow_side.stderr, r.map_side.value, r.map_side.stderr, r.z_score
            );
            Ok(RunOutcome { verdict: r.verdict, lines: vec![line] })
        }
        Command::Report => run_report(cfg, dir),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct UlamRecord {
    eps: f64,
    gamma: f64,
    cells: usize,
    nonzeros: usize,
    row_sum_error: f64,
    mass_error: f64,
    min_density: f64,
    max_density: f64,
    verdict: Verdict,
}

fn run_ulam(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    let map = cfg.model.skew_product(cfg.eps)?;
    let family = map.family().expect("geometric base");
    let op = build_ulam(family, Partition::of_map(family, cfg.ulam_cells)?)?;
    let h = invariant_density(&op, POWER_TOL, POWER_MAX_ITER)?;
    let row_sum_error = (0..op.n()).map(|i| (op.row_sum(i) - 1.0).abs()).fold(0.0, f64::max);
    let mass_error = (h.integral() - 1.0).abs();
    let min_density = h.weights.iter().copied().fold(f64::INFINITY, f64::min);
    let verdict = Verdict::from_bool(row_sum_error <= 1e-12 && mass_error <= 1e-10 && min_density >= 0.0);
    let mut csv = Csv::new(&["x", "density"]);
    for (i, w) in h.weights.iter().enumerate() {
        csv.row(&[h.partition.center(i).into(), (*w).into()]);
    }
    write_table(cfg, dir, "density", &csv)?;
    let rec = UlamRecord {
        eps: cfg.eps,
        gamma: family.gamma,
        cells: op.n(),
        nonzeros: op.nnz(),
        row_sum_error,
        mass_error,
        min_density,
        max_density: h.sup(),
        verdict,
    };
    output::write_json(&dir.join("ulam.json"), &rec)?;
    Ok(RunOutcome {
        verdict,
        lines: vec![format!("{verdict} ulam: {} cells, row error {row_sum_error:.1e}, mass error {mass_error:.1e}", op.n())],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct MapVarianceRecord {
    eps: f64,
    observable: String,
    estimate: VarianceEstimate,
    oracle: Option<VarianceEstimate>,
    qq_max_deviation: Option<f64>,
    z_score: Option<f64>,
    verdict: Verdict,
}

/// Inconclusive when the estimate could not certify its own tail.
fn flagged(e: &VarianceEstimate) -> bool {
    e.has(Flag::TailUnbounded) || e.has(Flag::UnstableRoof)
}

fn oracle_verdict(estimate: &VarianceEstimate, oracle: Option<&VarianceEstimate>) -> (Verdict, Option<f64>) {
    if flagged(estimate) || oracle.is_some_and(flagged) {
        return (Verdict::Inconclusive, None);
    }
    match oracle {
        None => (Verdict::Pass, None),
        Some(o) => {
            let se = estimate.stderr + o.stderr;
            let diff = (estimate.value - o.value).abs();
            let z = if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
            (Verdict::from_bool(z <= 3.0), Some(z))
        }
    }
}

fn run_map_variance(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    let s = cfg.suspension(cfg.eps)?;
    let psi = s.induced_map_observable(&cfg.observable.induced());
    let ens = sample_srb(&s.map, cfg.samples, cfg.burn_in, cfg.seed)?;
    let series = evaluate(&psi, &ens);
    let estimate = green_kubo_series(&series, None, cfg.seed);
    let oracle = if cfg.mc_reps > 0 { Some(clt_oracle_map(&s.map, &psi, cfg.mc_block, cfg.mc_reps, cfg.burn_in, cfg.seed)?) } else { None };
    let (verdict, z_score) = oracle_verdict(&estimate, oracle.as_ref().map(|o| &o.estimate));
    write_table(cfg, dir, "correlations", &correlation_csv(&correlation_sequence(&series, MAX_LAG)))?;
    let line = format!("{verdict} σ²_map({}) = {} ± {}", psi.name, estimate.value, estimate.stderr);
    let rec = MapVarianceRecord {
        eps: cfg.eps,
        observable: psi.name.clone(),
        qq_max_deviation: oracle.as_ref().map(|o| o.normality.qq_max_deviation),
        oracle: oracle.map(|o| o.estimate),
        estimate,
        z_score,
        verdict,
    };
    output::write_json(&dir.join("map_variance.json"), &rec)?;
    Ok(RunOutcome { verdict, lines: vec![line] })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct FlowVarianceRecord {
    observable: String,
    flow: FlowRecord,
    flow_mean: f64,
    mean_roof_se: f64,
    oracle: Option<VarianceEstimate>,
    z_score: Option<f64>,
    verdict: Verdict,
}

fn run_flow_variance(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    let s = cfg.suspension(cfg.eps)?;
    let obs = cfg.observable.induced();
    let ens = sample_srb(&s.map, cfg.samples, cfg.burn_in, cfg.seed)?;
    let fv = flow_variance(&s, &obs, &ens)?;
    let oracle = if cfg.flow_mc_blocks > 0 {
        Some(flow_monte_carlo(&s, &obs, cfg.flow_mc_blocks, cfg.flow_mc_block_time, cfg.burn_in, cfg.seed)?.estimate)
    } else {
        None
    };
    let (verdict, z_score) = oracle_verdict(&fv.estimate, oracle.as_ref());
    let line = format!("{verdict} σ²_flow({}) = {} ± {}", obs.name, fv.estimate.value, fv.estimate.stderr);
    let rec = FlowVarianceRecord {
        observable: obs.name.clone(),
        flow: fv.record(),
        flow_mean: fv.flow_mean,
        mean_roof_se: fv.mean_roof_se,
        oracle,
        z_score,
        verdict,
    };
    output::write_json(&dir.join("flow_variance.json"), &rec)?;
    Ok(RunOutcome { verdict, lines: vec![line] })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct OdeReturnsRecord {
    eps: f64,
    section_z: f64,
    crossings: usize,
    eigenvalues: [f64; 3],
    max_section_error: f64,
    min_abs_zdot: f64,
    slope: f64,
    slope_uncorrected: f64,
    inverse_lambda1: f64,
    slope_relative_error: f64,
    regression_points: usize,
    violation_fraction: f64,
    misclassified: f64,
    right_limit: f64,
    left_limit: f64,
    verdict: Verdict,
}

fn run_ode_returns(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    let o = &cfg.ode;
    let p = OdeParams::new(o.eps)?;
    let (l1, l2, l3) = singularity_eigenvalues(&p)?;
    let crossings = section_returns(&p, o.section_z, o.n_returns, cfg.seed, o.tol)?;
    write_table(cfg, dir, "crossings", &crossings_csv(&crossings))?;
    let q = empirical_quotient(&crossings, o.bins)?;
    write_table(cfg, dir, "quotient", &q.csv())?;
    let fit = return_time_regression(&q, &crossings, o.window, Some(-l3 / l1))?;
    let max_section_error = crossings.iter().map(|c| (c.state[2] - o.section_z).abs()).fold(0.0, f64::max);
    let slope_relative_error = (fit.slope * l1 - 1.0).abs();
    let verdict = Verdict::from_bool(max_section_error < 1e-10 && slope_relative_error <= 0.1 && q.lorenz_like());
    let rec = OdeReturnsRecord {
        eps: o.eps,
        section_z: o.section_z,
        crossings: crossings.len(),
        eigenvalues: [l1, l2, l3],
        max_section_error,
        min_abs_zdot: crossings.iter().map(|c| c.zdot.abs()).fold(f64::INFINITY, f64::min),
        slope: fit.slope,
        slope_uncorrected: fit.naive.slope,
        inverse_lambda1: 1.0 / l1,
        slope_relative_error,
        regression_points: fit.points,
        violation_fraction: q.violation_fraction,
        misclassified: q.misclassified,
        right_limit: q.right_limit,
        left_limit: q.left_limit,
        verdict,
    };
    output::write_json(&dir.join("ode_returns.json"), &rec)?;
    Ok(RunOutcome {
        verdict,
        lines: vec![format!(
            "{verdict} {} crossings, max |z − {}| = {max_section_error:.1e}, slope {:.5} vs 1/λ₁ = {:.5}, T(0⁺) = {:.3}, T(0⁻) = {:.3}",
            crossings.len(),
            o.section_z,
            fit.slope,
            1.0 / l1,
            q.right_limit,
            q.left_limit
        )],
    })
}

fn run_modulus(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    let r = modulus_experiment(&cfg.modulus)?;
    output::write_json(&dir.join("modulus.json"), &r)?;
    let mut csv = Csv::new(&["eps", "scale", "norm", "diff", "diff_se", "ratio"]);
    let mut lines = Vec::new();
    for f in &r.fits {
        for p in &f.points {
            csv.row(&[f.eps.into(), p.scale.into(), p.norm.into(), p.diff.into(), p.diff_se.into(), p.ratio.into()]);
        }
        lines.push(format!("{} ε = {}: C = {}", f.verdict, f.eps, f.constant));
    }
    write_table(cfg, dir, "modulus", &csv)?;
    Ok(RunOutcome { verdict: r.verdict, lines })
}

/// Reads every file of `dir` by name.
fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            files.push((entry.file_name().to_string_lossy().into_owned(), fs::read(entry.path())?));
        }
    }
    files.sort();
    Ok(files)
}

/// Runs `command` twice into scratch directories under `dir` and compares
/// the artifacts byte for byte.
pub fn determinism_check(cfg: &RunConfig, command: Command, dir: &Path) -> Result<(Verdict, String)> {
    let mut snapshots = Vec::new();
    for tag in ["a", "b"] {
        let sub = dir.join(format!(".determinism-{tag}"));
        if sub.exists() {
            fs::remove_dir_all(&sub)?;
        }
        // The echoed output path differs between the two runs by construction.
        let run_cfg = RunConfig { command, out: sub.clone(), ..cfg.clone() };
        run(&run_cfg)?;
        let files: Vec<(String, Vec<u8>)> = snapshot(&sub)?.into_iter().filter(|(n, _)| n != "config.txt").collect();
        fs::remove_dir_all(&sub)?;
        snapshots.push(files);
    }
    let same = snapshots[0] == snapshots[1] && !snapshots[0].is_empty();
    let names: Vec<&str> = snapshots[0].iter().map(|(n, _)| n.as_str()).collect();
    Ok((Verdict::from_bool(same), format!("{command} twice: {} identical ({})", if same { "files" } else { "files NOT" }, names.join(", "))))
}

fn run_report(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    use crate::experiments::{continuity, flow_relation, modulus, ode_tier, oracle_suite, truncation};
    let b = cfg.budgets();
    let outcomes: Vec<CriterionOutcome> = vec![
        timed("transfer-operator suite", transfer_operator_suite),
        timed("norm suite", || norm_suite(b.seed)),
        timed("variance oracle equivalence", || oracle_suite(&b)),
        timed("flow relation", || flow_relation(&b)),
        timed("continuity", || continuity(&b)),
        timed("modulus", || modulus(&b)),
        timed("truncation", || truncation(&b)),
        timed("ode tier", || ode_tier(&b)),
        timed("determinism", || determinism_check(cfg, Command::MapVariance, dir)),
    ];
    let verdict = Verdict::combine(outcomes.iter().map(|o| o.verdict));
    let mut text = String::new();
    for o in &outcomes {
        let _ = writeln!(text, "{}", o.untimed_line());
    }
    let _ = writeln!(text, "overall: {verdict}");
    output::write_atomic(&dir.join("report.txt"), text.as_bytes())?;
    output::write_json(&dir.join("report.json"), &outcomes)?;
    let mut lines: Vec<String> = outcomes.iter().map(CriterionOutcome::line).collect();
    lines.push(format!("overall: {verdict}"));
    Ok(RunOutcome { verdict, lines })
}
