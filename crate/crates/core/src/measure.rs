//! Time-weighted histograms on a fixed grid and total-variation distance.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::hash::BuildHasherDefault;

use serde::Serialize;

/// `HashMap` with a fixed-key hasher so iteration order is reproducible.
pub type DetMap<K, V> = HashMap<K, V, BuildHasherDefault<DefaultHasher>>;

/// Occupation times of grid cells of side `cell`.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub cell: f64,
    bins: DetMap<Vec<i64>, f64>,
    total: f64,
    key: Vec<i64>,
}

impl Histogram {
    pub fn new(cell: f64) -> Self {
        Self {
            cell,
            bins: DetMap::default(),
            total: 0.0,
            key: Vec::new(),
        }
    }

    pub fn add(&mut self, x: &[f64], weight: f64) {
        if weight <= 0.0 {
            return;
        }
        self.key.clear();
        self.key.extend(x.iter().map(|v| (v / self.cell).floor() as i64));
        self.total += weight;
        if let Some(w) = self.bins.get_mut(self.key.as_slice()) {
            *w += weight;
        } else {
            self.bins.insert(self.key.clone(), weight);
        }
    }

    /// Spreads `weight` uniformly over the axis-aligned box `[lo, lo + side)`.
    pub fn add_box(&mut self, lo: &[f64], side: f64, weight: f64) {
        if weight <= 0.0 {
            return;
        }
        // per axis: (cell index, fraction of the box side inside it)
        let axes: Vec<Vec<(i64, f64)>> = lo
            .iter()
            .map(|&a| {
                let b = a + side;
                let first = (a / self.cell).floor() as i64;
                let last = ((b / self.cell).ceil() as i64 - 1).max(first);
                (first..=last)
                    .filter_map(|k| {
                        let (c0, c1) = (k as f64 * self.cell, (k + 1) as f64 * self.cell);
                        let overlap = (b.min(c1) - a.max(c0)) / side;
                        (overlap > 0.0).then_some((k, overlap))
                    })
                    .collect()
            })
            .collect();
        let mut idx = vec![0usize; axes.len()];
        loop {
            let mut w = weight;
            self.key.clear();
            for (d, axis) in axes.iter().enumerate() {
                let (k, frac) = axis[idx[d]];
                self.key.push(k);
                w *= frac;
            }
            if let Some(v) = self.bins.get_mut(self.key.as_slice()) {
                *v += w;
            } else {
                self.bins.insert(self.key.clone(), w);
            }
            let mut d = 0;
            while d < axes.len() {
                idx[d] += 1;
                if idx[d] < axes[d].len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == axes.len() {
                break;
            }
        }
        self.total += weight;
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Normalized cell masses in key order.
    pub fn probabilities(&self) -> BTreeMap<Vec<i64>, f64> {
        self.bins
            .iter()
            .map(|(k, &w)| (k.clone(), w / self.total))
            .collect()
    }

    pub fn merge(&mut self, other: &Histogram) {
        assert_eq!(self.cell, other.cell, "histograms on different grids");
        let mut keys: Vec<_> = other.bins.iter().collect();
        keys.sort_by(|a, b| a.0.cmp(b.0));
        for (k, &w) in keys {
            *self.bins.entry(k.clone()).or_insert(0.0) += w;
        }
        self.total += other.total;
    }
}

/// `(1/2) sum |p - q|` over the union of cells.
pub fn tv_distance(a: &Histogram, b: &Histogram) -> f64 {
    let pa = a.probabilities();
    let pb = b.probabilities();
    let mut keys: Vec<&Vec<i64>> = pa.keys().chain(pb.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (pa.get(k).unwrap_or(&0.0) - pb.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Time-weighted histogram of `(x_hat, u)` over a box, with the mass
/// falling outside the box kept separately.
#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalMeasure {
    pub cell: f64,
    pub box_radius: f64,
    pub u_bins: usize,
    /// `(x_hat cell, u^c bins ++ u^s bins) -> probability`.
    pub cells: BTreeMap<String, f64>,
    pub outside: f64,
}

impl EmpiricalMeasure {
    pub fn total_mass(&self) -> f64 {
        self.cells.values().sum::<f64>() + self.outside
    }

    /// Marginal on the `x_hat` cells.
    pub fn state_marginal(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (k, &p) in &self.cells {
            let x = k.split('|').next().unwrap_or_default().to_string();
            *out.entry(x).or_insert(0.0) += p;
        }
        out
    }

    /// Marginal on the `u` bins.
    pub fn control_marginal(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (k, &p) in &self.cells {
            let u = k.split('|').nth(1).unwrap_or_default().to_string();
            *out.entry(u).or_insert(0.0) += p;
        }
        out
    }
}

fn join(v: impl Iterator<Item = i64>) -> String {
    v.map(|k| k.to_string()).collect::<Vec<_>>().join(",")
}

/// Accumulates `(x_hat, u)` weights into an [`EmpiricalMeasure`].
#[derive(Debug, Clone)]
pub struct MeasureBuilder {
    cell: f64,
    box_radius: f64,
    u_bins: usize,
    cells: BTreeMap<String, f64>,
    outside: f64,
    total: f64,
}

impl MeasureBuilder {
    pub fn new(cell: f64, box_radius: f64, u_bins: usize) -> Self {
        Self {
            cell,
            box_radius,
            u_bins: u_bins.max(1),
            cells: BTreeMap::new(),
            outside: 0.0,
            total: 0.0,
        }
    }

    pub fn add(&mut self, x_hat: &[f64], uc: &[f64], us: &[f64], weight: f64) {
        self.total += weight;
        if x_hat.iter().any(|v| v.abs() > self.box_radius) {
            self.outside += weight;
            return;
        }
        let nb = self.u_bins as f64;
        let u_bin = |p: f64| ((p * nb).floor() as i64).clamp(0, self.u_bins as i64 - 1);
        let key = format!(
            "{}|{}",
            join(x_hat.iter().map(|v| (v / self.cell).floor() as i64)),
            join(uc.iter().chain(us).map(|&p| u_bin(p)))
        );
        *self.cells.entry(key).or_insert(0.0) += weight;
    }

    pub fn finish(self) -> EmpiricalMeasure {
        let total = if self.total > 0.0 { self.total } else { 1.0 };
        EmpiricalMeasure {
            cell: self.cell,
            box_radius: self.box_radius,
            u_bins: self.u_bins,
            cells: self.cells.into_iter().map(|(k, w)| (k, w / total)).collect(),
            outside: self.outside / total,
        }
    }
}
