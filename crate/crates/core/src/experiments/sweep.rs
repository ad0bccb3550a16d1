use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::{combined_se, method_name, ObservableSpec, Verdict};
use crate::error::{Error, Result};
use crate::lorenzode::{ode_flow_variance, OdeParams};
use crate::onedmap::{build_ulam, invariant_density, Partition, POWER_MAX_ITER, POWER_TOL};
use crate::output::{self, Csv};
use crate::skewmap::{sample_srb, Flag, VarianceEstimate};
use crate::stats::CompensatedSum;
use crate::suspension::{
    flow_monte_carlo, flow_variance_from_series, induced_series, mean_roof_density, GeometricModel, Suspension,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    Geometric,
    Ode,
}

impl std::str::FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "geometric" => Ok(Self::Geometric),
            "ode" => Ok(Self::Ode),
            other => Err(Error::Config(format!("unknown tier '{other}' (expected geometric or ode)"))),
        }
    }
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Geometric => "geometric",
            Self::Ode => "ode",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    /// Descending, ending at 0.
    pub eps_grid: Vec<f64>,
    pub model: GeometricModel,
    pub observable: ObservableSpec,
    pub seed: u64,
    /// Map samples per cell (geometric tier).
    pub samples: usize,
    pub burn_in: usize,
    /// Flow Monte-Carlo oracle: independent windows and their length.
    pub mc_blocks: usize,
    pub mc_block_time: f64,
    /// Cells of the Ulam partition used for the exact mean roof.
    pub ulam_cells: usize,
    /// ODE tier: integration horizon, batch count and tolerance.
    pub ode_time: f64,
    pub ode_batches: usize,
    pub ode_tol: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eps_grid: vec![0.04, 0.02, 0.01, 0.005, 0.0],
            model: GeometricModel::default(),
            observable: ObservableSpec::X,
            seed: 0,
            samples: 1_000_000,
            burn_in: 1000,
            mc_blocks: 2000,
            mc_block_time: 1000.0,
            ulam_cells: 4096,
            ode_time: 20_000.0,
            ode_batches: 50,
            ode_tol: 1e-8,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.eps_grid;
        if g.len() < 2 || *g.last().unwrap() != 0.0 {
            return Err(Error::Config("sweep.eps_grid must have at least two values and end at 0".into()));
        }
        if g.windows(2).any(|w| !(w[0] > w[1])) || g.iter().any(|e| !e.is_finite()) {
            return Err(Error::Config("sweep.eps_grid must be strictly descending".into()));
        }
        if self.samples < 10_000 || self.mc_blocks < 100 || !(self.mc_block_time > 0.0) {
            return Err(Error::Config("sweep budgets too small (samples ≥ 10⁴, mc_blocks ≥ 100, mc_block_time > 0)".into()));
        }
        if self.ulam_cells < 2 || self.ode_batches < 10 || !(self.ode_time > 0.0) {
            return Err(Error::Config("sweep Ulam or ODE budget invalid".into()));
        }
        Ok(())
    }

    /// Seed of cell `index`; cells never share random streams.
    pub fn cell_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub index: usize,
    pub tier: Tier,
    pub eps: f64,
    pub observable: ObservableSpec,
    pub seed: u64,
    pub samples: usize,
    pub estimate: VarianceEstimate,
    pub sigma2_map: Option<VarianceEstimate>,
    pub oracle: Option<VarianceEstimate>,
    pub mean_roof: Option<f64>,
    pub mean_roof_se: Option<f64>,
    pub mean_roof_ulam: Option<f64>,
    /// `∫|Ψ_ε − Ψ₀| dμ_{F_ε}`.
    pub induced_distance: Option<f64>,
    pub gap_to_zero: f64,
    pub gap_se: f64,
}

impl SweepCell {
    fn flagged(&self) -> bool {
        let bad = |e: &VarianceEstimate| e.has(Flag::TailUnbounded) || e.has(Flag::UnstableRoof);
        bad(&self.estimate) || self.oracle.as_ref().is_some_and(bad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub tier: Tier,
    pub config: SweepConfig,
    pub cells: Vec<SweepCell>,
    pub monotone: bool,
    pub final_gap_ok: bool,
    pub induced_distance_decreasing: Option<bool>,
    /// `|∫τ_ε − ∫τ₀|` from the Ulam densities, along the grid.
    pub roof_gaps: Option<Vec<f64>>,
    pub flagged: bool,
    pub verdict: Verdict,
}

/// Gaps `|σ²(ε_k) − σ²(0)|` must not grow by more than two combined standard
/// errors from one cell to the next, and the last one must sit within three.
pub fn continuity_statistic(values: &[(f64, f64)]) -> (Vec<(f64, f64)>, bool, bool) {
    let (v0, s0) = *values.last().expect("non-empty grid");
    let gaps: Vec<(f64, f64)> = values[..values.len() - 1].iter().map(|&(v, s)| ((v - v0).abs(), combined_se(s, s0))).collect();
    let monotone = gaps.windows(2).all(|w| w[1].0 <= w[0].0 + 2.0 * combined_se(w[0].1, w[1].1));
    let final_ok = gaps.last().is_none_or(|&(g, se)| g <= 3.0 * se);
    (gaps, monotone, final_ok)
}

fn geometric_cell(cfg: &SweepConfig, index: usize, zero: &Suspension) -> Result<SweepCell> {
    let eps = cfg.eps_grid[index];
    let seed = cfg.cell_seed(index);
    let s = cfg.model.suspension(eps)?;
    let obs = cfg.observable.induced();
    let ens = sample_srb(&s.map, cfg.samples, cfg.burn_in, seed)?;
    let (psi, tau) = induced_series(&s, &obs, &ens)?;
    let fv = flow_variance_from_series(&s, &psi, &tau, seed);
    let oracle = flow_monte_carlo(&s, &obs, cfg.mc_blocks, cfg.mc_block_time, cfg.burn_in, seed)?.estimate;

    let psi0: Vec<f64> = if eps == 0.0 {
        psi.clone()
    } else {
        ens.xs.par_iter().zip(&ens.ys).map(|(&x, &y)| zero.induce(&obs, (x, y))).collect::<Result<_>>()?
    };
    let mut dist = CompensatedSum::default();
    for (a, b) in psi.iter().zip(&psi0) {
        dist.add((a - b).abs());
    }

    let family = s.map.family().expect("geometric base");
    let op = build_ulam(family, Partition::of_map(family, cfg.ulam_cells)?)?;
    let density = invariant_density(&op, POWER_TOL, POWER_MAX_ITER)?;

    Ok(SweepCell {
        index,
        tier: Tier::Geometric,
        eps,
        observable: cfg.observable,
        seed,
        samples: cfg.samples,
        estimate: fv.estimate,
        sigma2_map: Some(fv.sigma2_map),
        oracle: Some(oracle),
        mean_roof: Some(fv.mean_roof),
        mean_roof_se: Some(fv.mean_roof_se),
        mean_roof_ulam: Some(mean_roof_density(&s, &density)),
        induced_distance: Some(dist.value() / psi.len() as f64),
        gap_to_zero: f64::NAN,
        gap_se: f64::NAN,
    })
}

fn ode_cell(cfg: &SweepConfig, index: usize) -> Result<SweepCell> {
    let eps = cfg.eps_grid[index];
    let seed = cfg.cell_seed(index);
    let params = OdeParams::new(eps)?;
    let spec = cfg.observable;
    let estimate = ode_flow_variance(&params, move |p| spec.eval(p), cfg.ode_time, cfg.ode_batches, cfg.ode_tol, seed)?;
    Ok(SweepCell {
        index,
        tier: Tier::Ode,
        eps,
        observable: cfg.observable,
        seed,
        samples: cfg.ode_batches,
        estimate,
        sigma2_map: None,
        oracle: None,
        mean_roof: None,
        mean_roof_se: None,
        mean_roof_ulam: None,
        induced_distance: None,
        gap_to_zero: f64::NAN,
        gap_se: f64::NAN,
    })
}

/// Flow variance along the ε-grid, with the Monte-Carlo oracle in every
/// geometric cell. An oracle disagreement beyond three combined standard
/// errors aborts the sweep.
pub fn continuity_sweep(cfg: &SweepConfig, tier: Tier) -> Result<SweepResult> {
    cfg.validate()?;
    let zero = cfg.model.suspension(0.0)?;
    let mut cells = Vec::with_capacity(cfg.eps_grid.len());
    for index in 0..cfg.eps_grid.len() {
        let cell = match tier {
            Tier::Geometric => geometric_cell(cfg, index, &zero)?,
            Tier::Ode => ode_cell(cfg, index)?,
        };
        if let Some(o) = &cell.oracle {
            let se = combined_se(cell.estimate.stderr, o.stderr);
            if !cell.flagged() && (cell.estimate.value - o.value).abs() > 3.0 * se {
                return Err(Error::Disagreement(format!(
                    "ε = {}: Green–Kubo {} ± {} vs Monte-Carlo {} ± {}",
                    cell.eps, cell.estimate.value, cell.estimate.stderr, o.value, o.stderr
                )));
            }
        }
        cells.push(cell);
    }
    assert!(cells.iter().all(|c| c.samples == cells[0].samples), "unequal budgets across cells");

    let values: Vec<(f64, f64)> = cells.iter().map(|c| (c.estimate.value, c.estimate.stderr)).collect();
    let (gaps, monotone, final_gap_ok) = continuity_statistic(&values);
    for (cell, &(g, se)) in cells.iter_mut().zip(&gaps) {
        cell.gap_to_zero = g;
        cell.gap_se = se;
    }
    let last = cells.last_mut().unwrap();
    last.gap_to_zero = 0.0;
    last.gap_se = 0.0;

    let induced_distance_decreasing = match tier {
        Tier::Geometric => {
            let d: Vec<f64> = cells.iter().map(|c| c.induced_distance.unwrap()).collect();
            Some(d.windows(2).all(|w| w[1] < w[0]))
        }
        Tier::Ode => None,
    };
    let roof_gaps = match tier {
        Tier::Geometric => {
            let r0 = cells.last().unwrap().mean_roof_ulam.unwrap();
            Some(cells.iter().map(|c| (c.mean_roof_ulam.unwrap() - r0).abs()).collect())
        }
        Tier::Ode => None,
    };
    let flagged = cells.iter().any(SweepCell::flagged);
    let verdict = if flagged {
        Verdict::Inconclusive
    } else if monotone && final_gap_ok && induced_distance_decreasing != Some(false) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(SweepResult {
        tier,
        config: cfg.clone(),
        cells,
        monotone,
        final_gap_ok,
        induced_distance_decreasing,
        roof_gaps,
        flagged,
        verdict,
    })
}

impl SweepResult {
    pub fn summary_csv(&self) -> Csv {
        let mut csv = Csv::new(&["eps", "sigma2", "stderr", "method", "gap_to_zero"]);
        for c in &self.cells {
            csv.row(&[c.eps.into(), c.estimate.value.into(), c.estimate.stderr.into(), method_name(c.estimate.method).into(), c.gap_to_zero.into()]);
        }
        csv
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        let ok = |b: bool| if b { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "continuity sweep ({} tier, ψ = {})", self.tier, self.config.observable);
        for c in &self.cells {
            let _ = write!(out, "  ε = {:<8} σ² = {} ± {}  gap = {} ± {}", c.eps, output::fmt_f64(c.estimate.value), output::fmt_f64(c.estimate.stderr), output::fmt_f64(c.gap_to_zero), output::fmt_f64(c.gap_se));
            if let Some(o) = &c.oracle {
                let _ = write!(out, "  oracle = {} ± {}", output::fmt_f64(o.value), output::fmt_f64(o.stderr));
            }
            if !c.estimate.flags.is_empty() {
                let _ = write!(out, "  flags = {:?}", c.estimate.flags);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "{} gaps non-increasing within 2 combined se", ok(self.monotone));
        let _ = writeln!(out, "{} final gap within 3 combined se", ok(self.final_gap_ok));
        if let Some(d) = self.induced_distance_decreasing {
            let _ = writeln!(out, "{} ∫|Ψ_ε − Ψ₀| dμ_ε decreasing along the grid", ok(d));
        }
        if let Some(r) = &self.roof_gaps {
            let shown: Vec<String> = r.iter().map(|v| output::fmt_f64(*v)).collect();
            let _ = writeln!(out, "info |∫τ_ε − ∫τ₀| = [{}]", shown.join(", "));
        }
        let _ = writeln!(out, "verdict: {}", self.verdict);
        out
    }

    /// Summary CSV (or JSON), one JSON file per cell and the text report.
    pub fn write(&self, dir: &Path, json_summary: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        if json_summary {
            output::write_json(&dir.join("summary.json"), self)?;
        } else {
            output::write_atomic(&dir.join("summary.csv"), self.summary_csv().as_str().as_bytes())?;
        }
        for c in &self.cells {
            output::write_json(&dir.join(format!("cell_{:02}.json", c.index)), c)?;
        }
        output::write_atomic(&dir.join("report.txt"), self.report().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_statistic() {
        let (g, mono, fin) = continuity_statistic(&[(1.4, 0.01), (1.2, 0.01), (1.1, 0.01), (1.0, 0.01)]);
        assert_eq!(g.len(), 3);
        assert!(mono && !fin);
        let (_, mono, fin) = continuity_statistic(&[(1.0, 0.01), (1.2, 0.01), (1.01, 0.01), (1.0, 0.01)]);
        assert!(!mono && fin);
        let (_, mono, fin) = continuity_statistic(&[(1.01, 0.01), (1.02, 0.01), (1.0, 0.01)]);
        assert!(mono && fin);
    }

    #[test]
    fn grid_validation() {
        let mut c = SweepConfig::default();
        assert!(c.validate().is_ok());
        c.eps_grid = vec![0.01, 0.02, 0.0];
        assert!(c.validate().is_err());
        c.eps_grid = vec![0.02, 0.01];
        assert!(c.validate().is_err());
    }

    #[test]
    fn small_geometric_sweep_runs() {
        let cfg = SweepConfig {
            eps_grid: vec![0.04, 0.0],
            samples: 50_000,
            mc_blocks: 200,
            mc_block_time: 100.0,
            ulam_cells: 512,
            ..SweepConfig::default()
        };
        let r = continuity_sweep(&cfg, Tier::Geometric).unwrap();
        assert_eq!(r.cells.len(), 2);
        assert_eq!(r.cells[1].induced_distance, Some(0.0));
        assert!(r.cells[0].induced_distance.unwrap() > 0.0);
        assert_eq!(r.summary_csv().as_str().lines().count(), 3);
        assert!(r.report().contains("verdict"));
    }
}
