//! Small statistical toolbox shared by the estimators.

use statrs::distribution::{ContinuousCDF, Normal};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    sum(values.iter().copied()) / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    sum(values.iter().map(|v| (v - m) * (v - m))) / (values.len() as f64 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ intercept + slope * x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let sxx = sum(xs.iter().map(|x| (x - mx) * (x - mx)));
    if sxx == 0.0 {
        return None;
    }
    let sxy = sum(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)));
    let syy = sum(ys.iter().map(|y| (y - my) * (y - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LinearFit { slope, intercept, r_squared })
}

/// Envelope `C θ^n` fitted on log scale to `(n, |value|)` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricFit {
    pub prefactor: f64,
    pub rate: f64,
    pub r_squared: f64,
    pub points: usize,
}

impl GeometricFit {
    /// Tail `Σ_{n>last} C θ^n`, infinite when the rate is not below one.
    pub fn tail_after(&self, last: usize) -> f64 {
        if self.rate >= 1.0 {
            return f64::INFINITY;
        }
        self.prefactor * self.rate.powi(last as i32 + 1) / (1.0 - self.rate)
    }
}

pub fn fit_geometric(points: &[(usize, f64)]) -> Option<GeometricFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|(_, v)| *v > 0.0 && v.is_finite())
        .map(|&(n, v)| (n as f64, v.ln()))
        .unzip();
    let fit = linear_fit(&xs, &ys)?;
    Some(GeometricFit {
        prefactor: fit.intercept.exp(),
        rate: fit.slope.exp(),
        r_squared: fit.r_squared,
        points: xs.len(),
    })
}

/// Batch-means estimate of the mean of a correlated series and its standard error.
pub fn batch_means(series: &[f64], n_batches: usize) -> (f64, f64) {
    let n_batches = n_batches.max(2).min(series.len().max(2));
    let size = series.len() / n_batches;
    if size == 0 {
        return (mean(series), f64::NAN);
    }
    let means: Vec<f64> = (0..n_batches)
        .map(|b| mean(&series[b * size..(b + 1) * size]))
        .collect();
    let m = mean(series);
    (m, (variance(&means) / n_batches as f64).sqrt())
}

/// Block-jackknife tables of lagged cross products.
///
/// The series is centred on its global mean once; each block stores, for
/// every lag up to `max_lag`, the sums over pairs whose first index lies in
/// that block. Leave-one-block-out autocovariances follow by subtraction.
#[derive(Debug, Clone)]
pub struct AutocovTable {
    max_lag: usize,
    blocks: Vec<BlockSums>,
    totals: BlockSums,
}

#[derive(Debug, Clone)]
struct BlockSums {
    count: f64,
    sum: f64,
    prod: Vec<f64>,
    lead: Vec<f64>,
    trail: Vec<f64>,
    pairs: Vec<f64>,
}

impl BlockSums {
    fn zeros(max_lag: usize) -> Self {
        Self {
            count: 0.0,
            sum: 0.0,
            prod: vec![0.0; max_lag + 1],
            lead: vec![0.0; max_lag + 1],
            trail: vec![0.0; max_lag + 1],
            pairs: vec![0.0; max_lag + 1],
        }
    }

    fn accumulate(&mut self, other: &BlockSums, sign: f64) {
        self.count += sign * other.count;
        self.sum += sign * other.sum;
        for k in 0..self.prod.len() {
            self.prod[k] += sign * other.prod[k];
            self.lead[k] += sign * other.lead[k];
            self.trail[k] += sign * other.trail[k];
            self.pairs[k] += sign * other.pairs[k];
        }
    }

    fn autocov(&self, lag: usize) -> f64 {
        let mu = self.sum / self.count;
        let n = self.pairs[lag];
        (self.prod[lag] - mu * (self.lead[lag] + self.trail[lag]) + mu * mu * n) / n
    }
}

impl AutocovTable {
    pub fn new(series: &[f64], max_lag: usize, n_blocks: usize) -> Self {
        let n = series.len();
        let n_blocks = n_blocks.clamp(2, n.max(2));
        let center = mean(series);
        let s: Vec<f64> = series.iter().map(|v| v - center).collect();
        let size = n / n_blocks;
        let mut blocks = Vec::with_capacity(n_blocks);
        for b in 0..n_blocks {
            let start = b * size;
            let end = if b + 1 == n_blocks { n } else { start + size };
            let mut bs = BlockSums::zeros(max_lag);
            let mut block_sum = CompensatedSum::default();
            for &v in &s[start..end] {
                block_sum.add(v);
            }
            bs.count = (end - start) as f64;
            bs.sum = block_sum.value();
            for k in 0..=max_lag {
                let stop = end.min(n.saturating_sub(k));
                if stop <= start {
                    continue;
                }
                let (mut p, mut l, mut t) = (0.0, 0.0, 0.0);
                for i in start..stop {
                    p += s[i] * s[i + k];
                    l += s[i];
                    t += s[i + k];
                }
                bs.prod[k] = p;
                bs.lead[k] = l;
                bs.trail[k] = t;
                bs.pairs[k] = (stop - start) as f64;
            }
            blocks.push(bs);
        }
        let mut totals = BlockSums::zeros(max_lag);
        for bs in &blocks {
            totals.accumulate(bs, 1.0);
        }
        Self { max_lag, blocks, totals }
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn autocov(&self, lag: usize) -> f64 {
        self.totals.autocov(lag)
    }

    /// Jackknife estimate and standard error of an arbitrary functional of the
    /// autocovariance sequence.
    pub fn jackknife<F>(&self, functional: F) -> (f64, f64)
    where
        F: Fn(&dyn Fn(usize) -> f64) -> f64,
    {
        let full = functional(&|k| self.totals.autocov(k));
        let k = self.blocks.len() as f64;
        let mut values = Vec::with_capacity(self.blocks.len());
        for bs in &self.blocks {
            let mut reduced = self.totals.clone();
            reduced.accumulate(bs, -1.0);
            values.push(functional(&|lag| reduced.autocov(lag)));
        }
        let m = mean(&values);
        let var = sum(values.iter().map(|v| (v - m) * (v - m))) * (k - 1.0) / k;
        (full, var.sqrt())
    }

    pub fn lag_with_error(&self, lag: usize) -> (f64, f64) {
        self.jackknife(|c| c(lag))
    }

    /// `ĉ(0) + 2 Σ_{n=1}^{n_trunc} ĉ(n)` with its jackknife standard error.
    pub fn green_kubo(&self, n_trunc: usize) -> (f64, f64) {
        let n_trunc = n_trunc.min(self.max_lag);
        self.jackknife(|c| c(0) + 2.0 * (1..=n_trunc).map(|k| c(k)).sum::<f64>())
    }
}

/// Green–Kubo difference of two series observed on the same orbit, with a
/// paired jackknife error (common blocks).
pub fn green_kubo_difference(a: &AutocovTable, b: &AutocovTable, n_trunc: usize) -> (f64, f64) {
    let (full, values) = green_kubo_difference_replicates(a, b, n_trunc);
    (full, jackknife_se(&values))
}

/// The full-sample difference and its leave-one-block-out replicates.
pub fn green_kubo_difference_replicates(a: &AutocovTable, b: &AutocovTable, n_trunc: usize) -> (f64, Vec<f64>) {
    assert_eq!(a.blocks.len(), b.blocks.len());
    let n_trunc = n_trunc.min(a.max_lag).min(b.max_lag);
    let gk = |s: &BlockSums| s.autocov(0) + 2.0 * (1..=n_trunc).map(|k| s.autocov(k)).sum::<f64>();
    let full = gk(&a.totals) - gk(&b.totals);
    let mut values = Vec::with_capacity(a.blocks.len());
    for (ba, bb) in a.blocks.iter().zip(&b.blocks) {
        let mut ra = a.totals.clone();
        let mut rb = b.totals.clone();
        ra.accumulate(ba, -1.0);
        rb.accumulate(bb, -1.0);
        values.push(gk(&ra) - gk(&rb));
    }
    (full, values)
}

/// Standard error from leave-one-out replicates.
pub fn jackknife_se(values: &[f64]) -> f64 {
    let k = values.len() as f64;
    let m = mean(values);
    (sum(values.iter().map(|v| (v - m) * (v - m))) * (k - 1.0) / k).sqrt()
}

/// Normality diagnostics for standardised block sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalityDiagnostic {
    /// Largest gap between the empirical and the normal CDF at the order
    /// statistics (probability-plot deviation).
    pub qq_max_deviation: f64,
    pub excess_kurtosis: f64,
    pub degenerate: bool,
}

pub fn normality(samples: &[f64]) -> NormalityDiagnostic {
    let n = samples.len();
    let m = mean(samples);
    let var = if n > 1 { variance(samples) } else { 0.0 };
    let scale = m.abs().max(1.0);
    if n < 2 || !(var > (1e-14 * scale).powi(2)) {
        return NormalityDiagnostic { qq_max_deviation: 0.0, excess_kurtosis: 0.0, degenerate: true };
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = samples.iter().map(|v| (v - m) / sd).collect();
    z.sort_by(|a, b| a.total_cmp(b));
    let normal = Normal::standard();
    let nf = n as f64;
    let qq = z
        .iter()
        .enumerate()
        .map(|(i, &zi)| {
            let f = normal.cdf(zi);
            (f - i as f64 / nf).abs().max((f - (i + 1) as f64 / nf).abs())
        })
        .fold(0.0, f64::max);
    let m4 = sum(z.iter().map(|v| v.powi(4))) / nf;
    NormalityDiagnostic { qq_max_deviation: qq, excess_kurtosis: m4 - 3.0, degenerate: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut values = vec![1e16, 1.0, -1e16];
        values.extend(std::iter::repeat(1e-3).take(1000));
        assert!((sum(values) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn linear_fit_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_fit_recovers_rate() {
        let pts: Vec<(usize, f64)> = (1..10).map(|n| (n, 3.0 * 0.5f64.powi(n as i32))).collect();
        let fit = fit_geometric(&pts).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-12);
        assert!((fit.prefactor - 3.0).abs() < 1e-10);
        assert!((fit.tail_after(9) - 3.0 * 0.5f64.powi(10) / 0.5).abs() < 1e-12);
    }

    #[test]
    fn autocov_matches_direct_sum() {
        let mut r = rng::stream(1, 0);
        let s: Vec<f64> = (0..1000).map(|_| r.random::<f64>()).collect();
        let table = AutocovTable::new(&s, 5, 10);
        let m = mean(&s);
        for k in 0..=5 {
            let direct = (0..s.len() - k).map(|i| (s[i] - m) * (s[i + k] - m)).sum::<f64>()
                / (s.len() - k) as f64;
            assert!((table.autocov(k) - direct).abs() < 1e-12, "lag {k}");
        }
    }

    #[test]
    fn iid_series_green_kubo_near_variance() {
        let mut r = rng::stream(3, 0);
        let s: Vec<f64> = (0..200_000).map(|_| r.random::<f64>() - 0.5).collect();
        let table = AutocovTable::new(&s, 10, 50);
        let (v, se) = table.green_kubo(10);
        assert!((v - 1.0 / 12.0).abs() < 4.0 * se, "{v} ± {se}");
        assert!(se > 0.0 && se < 0.01);
    }

    #[test]
    fn normality_of_gaussian_and_constant() {
        let mut r = rng::stream(5, 0);
        let normal = Normal::standard();
        let s: Vec<f64> = (0..1000)
            .map(|_| normal.inverse_cdf(r.random::<f64>().clamp(1e-12, 1.0 - 1e-12)))
            .collect();
        let d = normality(&s);
        assert!(!d.degenerate);
        assert!(d.qq_max_deviation < 0.05);
        let c = normality(&[2.0; 100]);
        assert!(c.degenerate);
    }
}
