//! Goodness-of-fit tests and error bars.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub standard_error: f64,
    pub sample_count: u64,
}

impl Estimate {
    /// Mean and standard error of independent samples.
    pub fn from_samples(xs: &[f64]) -> Self {
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        m.estimate()
    }

    /// `|value - target|` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.value - target).abs() / self.standard_error
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    /// Sample variance (n - 1 denominator).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            value: self.mean,
            standard_error: (self.variance() / self.count as f64).sqrt(),
            sample_count: self.count,
        }
    }
}

/// Batch-means error bars for a correlated series of unknown length.
///
/// Keeps between `batches` and `2 * batches` full batches; when the buffer
/// fills, neighbouring batches are merged and the batch size doubles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchMeans {
    target: usize,
    batch_size: u64,
    sums: Vec<f64>,
    current_sum: f64,
    current_len: u64,
    total: Moments,
}

impl BatchMeans {
    pub fn new(batches: usize) -> Self {
        Self {
            target: batches.max(2),
            batch_size: 1,
            sums: Vec::with_capacity(2 * batches.max(2)),
            current_sum: 0.0,
            current_len: 0,
            total: Moments::default(),
        }
    }

    pub fn push(&mut self, x: f64) {
        self.total.push(x);
        self.current_sum += x;
        self.current_len += 1;
        if self.current_len == self.batch_size {
            self.sums.push(self.current_sum);
            self.current_sum = 0.0;
            self.current_len = 0;
            if self.sums.len() == 2 * self.target {
                let merged: Vec<f64> = self.sums.chunks(2).map(|c| c[0] + c[1]).collect();
                self.sums = merged;
                self.batch_size *= 2;
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.total.count
    }

    pub fn mean(&self) -> f64 {
        self.total.mean
    }

    /// Mean of all values; standard error from the spread of the full
    /// batch means. Falls back to the i.i.d. formula while there are too
    /// few batches.
    pub fn estimate(&self) -> Estimate {
        if self.sums.len() < self.target {
            return self.total.estimate();
        }
        let mut m = Moments::default();
        for s in &self.sums {
            m.push(s / self.batch_size as f64);
        }
        Estimate {
            value: self.total.mean,
            standard_error: (m.variance() / m.count as f64).sqrt(),
            sample_count: self.total.count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom (chi-square) or sample size (KS).
    pub dof: f64,
}

/// Pearson chi-square test of observed counts against expected counts.
/// Adjacent bins are pooled until every pooled bin expects at least five
/// counts. Expected counts are rescaled to the observed total.
pub fn chi_square(observed: &[u64], expected: &[f64]) -> Result<TestResult> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(Error::InvalidArgument("observed and expected bins differ in length".into()));
    }
    let n_obs: u64 = observed.iter().sum();
    let e_total: f64 = expected.iter().sum();
    if n_obs == 0 || !(e_total > 0.0) {
        return Err(Error::InvalidArgument("chi-square test needs positive totals".into()));
    }
    let scale = n_obs as f64 / e_total;
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&ob, &ex) in observed.iter().zip(expected) {
        o += ob as f64;
        e += ex * scale;
        if e >= 5.0 {
            pooled.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => pooled.push((o, e)),
        }
    }
    if pooled.len() < 2 {
        return Err(Error::InvalidArgument("chi-square test needs at least two pooled bins".into()));
    }
    let statistic: f64 = pooled.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    let dof = (pooled.len() - 1) as f64;
    let dist = ChiSquared::new(dof).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(TestResult {
        statistic,
        p_value: dist.sf(statistic),
        dof,
    })
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // small-x series: sqrt(2 pi)/x sum exp(-(2k-1)^2 pi^2 / (8 x^2))
        let t = -std::f64::consts::PI * std::f64::consts::PI / (8.0 * x * x);
        let mut cdf = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            cdf += (m * m * t).exp();
        }
        return 1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * cdf;
    }
    let mut sf = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sf += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sf).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test. The p-value uses the asymptotic
/// distribution with Stephens' finite-sample correction.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<TestResult> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("KS test needs samples".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sn = n.sqrt();
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d),
        dof: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_merge_equals_sequential() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let mut a = Moments::default();
        xs.iter().for_each(|&x| a.push(x));
        let mut b = Moments::default();
        let mut c = Moments::default();
        xs[..40].iter().for_each(|&x| b.push(x));
        xs[40..].iter().for_each(|&x| c.push(x));
        b.merge(&c);
        assert!((a.mean - b.mean).abs() < 1e-14);
        assert!((a.variance() - b.variance()).abs() < 1e-12);
    }

    #[test]
    fn batch_means_keep_all_data_in_mean() {
        let mut bm = BatchMeans::new(10);
        for i in 0..1000 {
            bm.push(i as f64);
        }
        assert_eq!(bm.count(), 1000);
        assert!((bm.mean() - 499.5).abs() < 1e-9);
        let e = bm.estimate();
        assert!(e.standard_error > 0.0);
    }

    #[test]
    fn kolmogorov_branches_meet() {
        let a = kolmogorov_sf(1.18 - 1e-12);
        let b = kolmogorov_sf(1.18 + 1e-12);
        assert!((a - b).abs() < 1e-9);
        // classical 5% critical value
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn chi_square_perfect_fit() {
        let r = chi_square(&[10, 20, 30], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_pools_sparse_bins() {
        let r = chi_square(&[2, 2, 2, 2, 2, 2, 100], &[2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 100.0]).unwrap();
        assert_eq!(r.dof, 2.0);
    }

    #[test]
    fn ks_on_uniform_grid() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let r = ks_test(&xs, |x| x).unwrap();
        assert!(r.statistic <= 0.0005 + 1e-12);
        assert!(r.p_value > 0.99);
    }
}
