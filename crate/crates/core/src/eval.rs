//! Clustering accuracy with optimal label matching, NMI, and repetition
//! summaries.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimal assignment of a (padded) square cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `perm[row] = column`, over the padded `k × k` problem.
    pub perm: Vec<usize>,
    pub total: f64,
}

/// Minimum-cost perfect matching (Kuhn–Munkres with potentials, `O(k³)`).
///
/// Rectangular inputs are padded with zero rows or columns.
pub fn hungarian_match(cost: &Array2<f64>) -> Result<Matching> {
    let (r, c) = cost.dim();
    if r == 0 || c == 0 {
        return Err(Error::InvalidInput("empty cost matrix".into()));
    }
    if let Some(v) = cost.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("cost entry {v} is not finite")));
    }
    let k = r.max(c);
    let at = |i: usize, j: usize| if i < r && j < c { cost[[i, j]] } else { 0.0 };

    // 1-based arrays; index 0 is the virtual column
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut p = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=k {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; k];
    for j in 1..=k {
        perm[p[j] - 1] = j - 1;
    }
    let total = perm.iter().enumerate().map(|(i, &j)| at(i, j)).sum();
    Ok(Matching { perm, total })
}

fn check_labels(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty label vectors".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted labels vs {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn dense_ids(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

/// Counts `table[p][t]` of samples with predicted cluster `p` and class `t`
/// (labels remapped to `0..k` in order of first appearance).
pub fn contingency(pred: &[usize], truth: &[usize]) -> Result<Array2<f64>> {
    check_labels(pred, truth)?;
    let (p, kp) = dense_ids(pred);
    let (t, kt) = dense_ids(truth);
    let mut table = Array2::zeros((kp, kt));
    for (a, b) in p.into_iter().zip(t) {
        table[[a, b]] += 1.0;
    }
    Ok(table)
}

/// Fraction of samples correctly labeled under the best cluster-to-class map.
pub fn acc(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let max = table.iter().copied().fold(0.0, f64::max);
    let m = hungarian_match(&table.mapv(|c| max - c))?;
    let (r, c) = table.dim();
    let hits: f64 = m
        .perm
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < r && j < c)
        .map(|(i, &j)| table[[i, j]])
        .sum();
    Ok(hits / pred.len() as f64)
}

fn entropy(counts: impl Iterator<Item = f64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0.0)
        .map(|c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(pred; truth) / sqrt(H(pred) H(truth))`, natural log.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let n = pred.len() as f64;
    let rows = table.sum_axis(ndarray::Axis(1));
    let cols = table.sum_axis(ndarray::Axis(0));
    let hp = entropy(rows.iter().copied(), n);
    let ht = entropy(cols.iter().copied(), n);
    if hp == 0.0 || ht == 0.0 {
        // one side has a single class: identical only if both do
        return Ok(if table.dim() == (1, 1) { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for ((i, j), &c) in table.indexed_iter() {
        if c > 0.0 {
            mi += c / n * (n * c / (rows[i] * cols[j])).ln();
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

/// Mean and population standard deviation of ACC and NMI over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub acc_mean: f64,
    pub acc_std: f64,
    pub nmi_mean: f64,
    pub nmi_std: f64,
    pub per_run: Vec<(f64, f64)>,
}

impl MetricSummary {
    pub fn from_runs(per_run: Vec<(f64, f64)>) -> Result<Self> {
        if per_run.is_empty() {
            return Err(Error::InvalidInput("no runs to summarize".into()));
        }
        let stats = |vals: Vec<f64>| {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        let (acc_mean, acc_std) = stats(per_run.iter().map(|r| r.0).collect());
        let (nmi_mean, nmi_std) = stats(per_run.iter().map(|r| r.1).collect());
        Ok(Self {
            acc_mean,
            acc_std,
            nmi_mean,
            nmi_std,
            per_run,
        })
    }
}
