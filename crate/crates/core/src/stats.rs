//! Block accumulators, jackknife errors and compensated sums for the
//! Monte-Carlo estimators.

use serde::{Deserialize, Serialize};

use crate::volterra::{Series, TimeGrid};

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Per-block sums of a vector-valued sample mean.
#[derive(Clone, Debug)]
pub struct BlockSums {
    pub sums: Vec<Vec<CompensatedSum>>,
    pub counts: Vec<Vec<f64>>,
}

impl BlockSums {
    pub fn new(blocks: usize, len: usize) -> Self {
        BlockSums {
            sums: vec![vec![CompensatedSum::default(); len]; blocks],
            counts: vec![vec![0.0; len]; blocks],
        }
    }

    pub fn add(&mut self, block: usize, idx: usize, value: f64, weight: f64) {
        self.sums[block][idx].add(value);
        self.counts[block][idx] += weight;
    }

    /// Mean and delete-one-block jackknife standard error per component.
    pub fn jackknife(&self) -> (Vec<f64>, Vec<f64>) {
        let blocks = self.sums.len();
        let len = self.sums.first().map_or(0, |b| b.len());
        let mut mean = vec![0.0; len];
        let mut se = vec![0.0; len];
        for i in 0..len {
            let s: Vec<f64> = self.sums.iter().map(|b| b[i].value()).collect();
            let c: Vec<f64> = self.counts.iter().map(|b| b[i]).collect();
            let (m, e) = jackknife_ratio(&s, &c);
            mean[i] = m;
            se[i] = e;
            if blocks < 2 {
                se[i] = f64::NAN;
            }
        }
        (mean, se)
    }
}

/// Jackknife of the pooled mean `Σ s_b / Σ c_b` over blocks.
pub fn jackknife_ratio(sums: &[f64], counts: &[f64]) -> (f64, f64) {
    let total_s: f64 = sums.iter().sum();
    let total_c: f64 = counts.iter().sum();
    let mean = total_s / total_c;
    let active: Vec<usize> = (0..sums.len()).filter(|&b| counts[b] > 0.0).collect();
    let b = active.len();
    if b < 2 {
        return (mean, f64::NAN);
    }
    let loo: Vec<f64> = active
        .iter()
        .map(|&i| (total_s - sums[i]) / (total_c - counts[i]))
        .collect();
    let avg = loo.iter().sum::<f64>() / b as f64;
    let var = loo.iter().map(|x| (x - avg).powi(2)).sum::<f64>() * (b - 1) as f64 / b as f64;
    (mean, var.sqrt())
}

/// Time series with a standard error per node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimatedSeries {
    pub series: Series,
    pub std_errors: Vec<f64>,
}

impl EstimatedSeries {
    pub fn grid(&self) -> &TimeGrid {
        &self.series.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.series.values
    }

    /// Largest `|self − reference| / se` over nodes with positive error.
    pub fn max_z_score(&self, reference: &[f64]) -> f64 {
        self.values()
            .iter()
            .zip(reference)
            .zip(&self.std_errors)
            .filter(|(_, &e)| e > 0.0)
            .map(|((v, r), e)| (v - r).abs() / e)
            .fold(0.0, f64::max)
    }
}
