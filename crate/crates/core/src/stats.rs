//! Output analysis: batch means, rank correlation and small fits.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

pub const DEFAULT_BATCHES: usize = 32;
pub const DEFAULT_BURN_IN: f64 = 0.1;

/// Two-sided 95% Student-t quantile.
pub fn t_quantile_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df.max(1) as f64)
        .expect("valid t distribution")
        .inverse_cdf(0.975)
}

/// Point estimate with a batch-means confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicEstimate {
    pub metric: String,
    pub estimate: f64,
    pub half_width: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub batches: usize,
    pub horizon: f64,
    pub burn_in: f64,
    pub seed: u64,
}

/// Time-integrals of several piecewise-constant signals over equal-length
/// batches of `[start, end]`.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    start: f64,
    end: f64,
    batch_len: f64,
    batches: usize,
    width: usize,
    sums: Vec<f64>,
}

impl BatchMeans {
    pub fn new(start: f64, end: f64, batches: usize, width: usize) -> Self {
        assert!(end > start && batches >= 2);
        Self {
            start,
            end,
            batch_len: (end - start) / batches as f64,
            batches,
            width,
            sums: vec![0.0; batches * width],
        }
    }

    /// Adds `values * |[t0, t1] ∩ [start, end]|`, split across batch
    /// boundaries.
    pub fn add(&mut self, t0: f64, t1: f64, values: &[f64]) {
        let mut a = t0.max(self.start);
        let b = t1.min(self.end);
        while a < b {
            let k = (((a - self.start) / self.batch_len) as usize).min(self.batches - 1);
            let edge = if k + 1 == self.batches {
                self.end
            } else {
                self.start + (k + 1) as f64 * self.batch_len
            };
            let stop = b.min(edge);
            let dt = stop - a;
            let row = &mut self.sums[k * self.width..(k + 1) * self.width];
            for (s, v) in row.iter_mut().zip(values) {
                *s += v * dt;
            }
            if stop <= a {
                break;
            }
            a = stop;
        }
    }

    pub fn batch_means(&self, column: usize) -> Vec<f64> {
        (0..self.batches)
            .map(|k| self.sums[k * self.width + column] / self.batch_len)
            .collect()
    }

    pub fn estimate(&self, column: usize, metric: &str, seed: u64) -> ErgodicEstimate {
        let means = self.batch_means(column);
        let (mean, half) = mean_ci(&means);
        ErgodicEstimate {
            metric: metric.to_string(),
            estimate: mean,
            half_width: half,
            ci_lo: mean - half,
            ci_hi: mean + half,
            batches: self.batches,
            horizon: self.end,
            burn_in: self.start,
            seed,
        }
    }
}

/// Mean and 95% half-width of i.i.d.-treated samples.
pub fn mean_ci(samples: &[f64]) -> (f64, f64) {
    let k = samples.len();
    let mean = samples.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, f64::INFINITY);
    }
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, t_quantile_975(k - 1) * (var / k as f64).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn batches_split_at_boundaries() {
        let mut bm = BatchMeans::new(0.0, 4.0, 4, 1);
        bm.add(0.5, 2.5, &[1.0]);
        assert_eq!(bm.batch_means(0), vec![0.5, 1.0, 0.5, 0.0]);
        bm.add(3.0, 10.0, &[2.0]);
        assert_eq!(bm.batch_means(0)[3], 2.0);
    }

    #[test]
    fn t_quantile_matches_table() {
        assert_abs_diff_eq!(t_quantile_975(31), 2.0395, epsilon = 1e-4);
        assert_abs_diff_eq!(t_quantile_975(1000), 1.9623, epsilon = 1e-4);
    }

    #[test]
    fn spearman_handles_order_and_ties() {
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]), -1.0);
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 2.0, 1.0]), -0.8);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    proptest! {
        #[test]
        fn batch_total_is_exact(cuts in proptest::collection::vec(0.0f64..10.0, 1..40)) {
            let mut c = cuts.clone();
            c.sort_by(f64::total_cmp);
            let mut bm = BatchMeans::new(1.0, 9.0, 8, 1);
            let mut prev = 0.0;
            for &t in &c {
                bm.add(prev, t, &[1.0]);
                prev = t;
            }
            let covered = (prev.min(9.0) - 1.0).max(0.0);
            let total: f64 = bm.batch_means(0).iter().sum::<f64>() * 1.0;
            prop_assert!((total - covered).abs() < 1e-9);
        }

        #[test]
        fn exact_line_is_recovered(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let x: Vec<f64> = (0..10).map(|k| k as f64).collect();
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let f = fit_line(&x, &y);
            prop_assert!((f.slope - a).abs() < 1e-9);
            prop_assert!((f.intercept - b).abs() < 1e-9);
        }
    }
}
