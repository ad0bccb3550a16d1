//! Ulam discretisation of the transfer operator on a uniform partition.

use rayon::prelude::*;

use super::map::{IntervalMap, MapFamily};
use crate::error::{Error, Result};
use crate::quadrature;
use crate::stats;

/// Power-iteration stopping tolerance (L¹ distance between iterates).
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 100_000;

/// `n` equal cells tiling `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partition {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Partition {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 || !(hi > lo) {
            return Err(Error::Domain(format!("partition of [{lo}, {hi}] into {n} cells")));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn of_map<M: IntervalMap + ?Sized>(map: &M, n: usize) -> Result<Self> {
        let (lo, hi) = map.domain();
        Self::new(lo, hi, n)
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn edge(&self, k: usize) -> f64 {
        if k == self.n {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * k as f64 / self.n as f64
        }
    }

    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.edge(i), self.edge(i + 1))
    }

    pub fn center(&self, i: usize) -> f64 {
        let (a, b) = self.cell(i);
        0.5 * (a + b)
    }

    /// Index of the cell containing `y` (clamped to the partition).
    pub fn locate(&self, y: f64) -> usize {
        let k = ((y - self.lo) / self.width()).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.n - 1)
        }
    }

    /// Cell averages of `f`, by 8-point Gauss–Legendre quadrature per cell.
    pub fn project<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        const NODES: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
        const WEIGHTS: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
        (0..self.n)
            .map(|i| {
                let (a, b) = self.cell(i);
                let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
                let s: f64 = NODES
                    .iter()
                    .zip(WEIGHTS)
                    .map(|(x, w)| w * (f(c - h * x) + f(c + h * x)))
                    .sum();
                0.5 * s
            })
            .collect()
    }
}

/// Row-stochastic transition matrix in compressed sparse row form:
/// entry `(i, j) = Leb(cell_i ∩ T⁻¹ cell_j) / Leb(cell_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UlamOperator {
    pub partition: Partition,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl UlamOperator {
    pub fn n(&self) -> usize {
        self.partition.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        stats::sum(self.row(i).map(|(_, v)| v))
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Transfer of a density: `(P̂f)_j = Σ_i f_i P_ij` (cells have equal width).
    pub fn push(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (i, &fi) in f.iter().enumerate() {
            if fi == 0.0 {
                continue;
            }
            for (j, p) in self.row(i) {
                out[j] += fi * p;
            }
        }
        out
    }
}

fn build_row<M: IntervalMap + ?Sized>(map: &M, part: &Partition, branches: &[(f64, f64)], i: usize) -> Vec<(usize, f64)> {
    let (a, b) = part.cell(i);
    let len = b - a;
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for (k, &(p, q)) in branches.iter().enumerate() {
        let (lo, hi) = (a.max(p), b.min(q));
        if hi <= lo {
            continue;
        }
        let (ylo, yhi) = (map.eval_branch(k, lo), map.eval_branch(k, hi));
        let (jlo, jhi) = (part.locate(ylo), part.locate(yhi));
        let mut prev = lo;
        for j in jlo..=jhi {
            let next = if j == jhi {
                hi
            } else {
                map.invert_branch(k, part.edge(j + 1)).clamp(prev, hi)
            };
            let w = next - prev;
            if w > 0.0 {
                match entries.iter_mut().find(|e| e.0 == j) {
                    Some(e) => e.1 += w / len,
                    None => entries.push((j, w / len)),
                }
            }
            prev = next;
        }
    }
    entries.sort_by_key(|e| e.0);
    entries
}

/// Assembles the Ulam matrix; rows are built independently (in parallel) by
/// exact inversion of each monotone branch.
pub fn build_ulam<M: IntervalMap + ?Sized>(map: &M, partition: Partition) -> Result<UlamOperator> {
    if partition.n < 2 {
        return Err(Error::Domain("Ulam partition needs at least two cells".into()));
    }
    let branches = map.branches();
    let rows: Vec<Vec<(usize, f64)>> = (0..partition.n)
        .into_par_iter()
        .map(|i| build_row(map, &partition, &branches, i))
        .collect();
    let mut row_ptr = Vec::with_capacity(partition.n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for r in rows {
        for (j, v) in r {
            cols.push(j);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    Ok(UlamOperator { partition, row_ptr, cols, vals })
}

/// Piecewise-constant probability density on a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub partition: Partition,
    pub weights: Vec<f64>,
}

impl Density {
    pub fn integral(&self) -> f64 {
        stats::sum(self.weights.iter().copied()) * self.partition.width()
    }

    pub fn sup(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    /// Density value in the cell containing `x`.
    pub fn at(&self, x: f64) -> f64 {
        self.weights[self.partition.locate(x)]
    }

    /// `∫ f h dLeb` with `f` averaged per cell.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let avg = self.partition.project(f);
        stats::sum(avg.iter().zip(&self.weights).map(|(a, w)| a * w)) * self.partition.width()
    }

    pub fn l1_distance(&self, other: &[f64]) -> f64 {
        stats::sum(self.weights.iter().zip(other).map(|(a, b)| (a - b).abs())) * self.partition.width()
    }
}

/// Left fixed vector of the Ulam matrix by power iteration from the uniform density.
pub fn invariant_density(op: &UlamOperator, tol: f64, max_iter: usize) -> Result<Density> {
    let part = op.partition;
    let w = part.width();
    let mut h = vec![1.0 / (part.hi - part.lo); part.n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mut next = op.push(&h);
        let mass = stats::sum(next.iter().copied()) * w;
        next.iter_mut().for_each(|v| *v /= mass);
        residual = stats::sum(next.iter().zip(&h).map(|(a, b)| (a - b).abs())) * w;
        h = next;
        if residual < tol {
            return Ok(Density { partition: part, weights: h });
        }
    }
    Err(Error::Convergence { iterations: max_iter, residual })
}

/// L¹ decay of `P̂ⁿ f − h ∫f` and its fitted geometric rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayEstimate {
    /// `norms[k]` is the distance after `k + 1` steps.
    pub norms: Vec<f64>,
    pub rate: Option<f64>,
    /// Set when fewer than three points lie above the noise floor.
    pub flagged: bool,
}

pub fn decay_rate(op: &UlamOperator, density: &Density, f: &[f64], n_max: usize) -> DecayEstimate {
    let w = op.partition.width();
    let mass = stats::sum(f.iter().copied()) * w;
    let scale = stats::sum(f.iter().map(|v| v.abs())) * w;
    let floor = 1e-12 * scale.max(1e-300);
    let mut g = f.to_vec();
    let mut norms = Vec::with_capacity(n_max);
    for _ in 0..n_max {
        g = op.push(&g);
        norms.push(stats::sum(g.iter().zip(&density.weights).map(|(a, h)| (a - h * mass).abs())) * w);
    }
    let regime: Vec<(usize, f64)> = norms
        .iter()
        .enumerate()
        .take_while(|(_, v)| **v > floor)
        .map(|(k, v)| (k + 1, *v))
        .collect();
    if regime.len() < 3 {
        return DecayEstimate { norms, rate: None, flagged: true };
    }
    let rate = stats::fit_geometric(&regime).map(|fit| fit.rate);
    DecayEstimate { norms, rate, flagged: rate.is_none() }
}

/// `|⟨P̂f, g⟩ − ∫ f · g∘T|` for the Ulam operator on `partition`, the
/// right side by quadrature in `s = |x|^γ` on each branch.
pub fn duality_error<F, G>(t: &MapFamily, partition: Partition, f: F, g: G) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let op = build_ulam(t, partition)?;
    let pf = op.push(&partition.project(&f));
    let lhs = stats::sum(pf.iter().zip(partition.project(&g)).map(|(a, b)| a * b)) * partition.width();
    let mut rhs = 0.0;
    for (k, (a, b)) in t.branches().into_iter().enumerate() {
        let inner = |s: f64| {
            let x = if k == 0 { -(s.powf(1.0 / t.gamma)) } else { s.powf(1.0 / t.gamma) };
            let jac = s.powf(1.0 / t.gamma - 1.0) / t.gamma;
            f(x) * g(t.eval_branch(k, x)) * jac
        };
        let top = a.abs().max(b.abs()).powf(t.gamma);
        rhs += quadrature::integrate(inner, 0.0, top, 1e-13)?.value;
    }
    Ok((lhs - rhs).abs())
}
