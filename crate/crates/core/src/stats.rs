//! Rank statistics, percentile bootstrap, and the correlation tables built
//! from them.
//!
//! Tie conventions: Spearman uses average ranks, AUROC gives half credit to
//! tied positive/negative pairs. Both are invariant under strictly
//! increasing transforms of the scores.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::divergence::SIGNAL_NAMES;
use crate::error::{Error, Result};
use crate::types::{GroupRecord, TaskType};

/// 1-based ranks with ties sharing the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        // positions i+1 ..= j share their mean
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    pub p_value: f64,
}

/// Two-sided p-value of a rank correlation via the t approximation with
/// `n - 2` degrees of freedom.
pub fn spearman_p_value(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<Spearman> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(Error::EmptyInput("spearman needs at least 3 points"));
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y)).ok_or(Error::ConstantInput)?;
    Ok(Spearman { rho, p_value: spearman_p_value(rho, x.len()) })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from the Mann-Whitney rank sum.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 {
        return Err(Error::SingleClass("negatives"));
    }
    if n_neg == 0 {
        return Err(Error::SingleClass("positives"));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point_estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub level: f64,
    pub seed: u64,
    /// All `n^n` resamples were enumerated instead of drawn.
    pub exhaustive: bool,
}

/// Order-statistic indices of a two-sided percentile interval over `m`
/// sorted values.
pub fn percentile_indices(m: usize, level: f64) -> (usize, usize) {
    let alpha = (1.0 - level) / 2.0;
    let lo = ((alpha * m as f64).floor() as usize).min(m - 1);
    let hi = (((1.0 - alpha) * m as f64).ceil() as usize).clamp(1, m) - 1;
    (lo, hi.max(lo))
}

fn exhaustive_count(n: usize) -> Option<usize> {
    if n > 8 {
        return None;
    }
    n.checked_pow(n as u32)
}

/// Percentile bootstrap interval for `statistic` over `values`.
///
/// When `B >= n^n` the full resampling distribution is enumerated, which
/// makes small-sample intervals exact; otherwise `B` resamples are drawn
/// from a ChaCha stream seeded with `seed`.
pub fn bootstrap_ci<T: Copy>(
    values: &[T],
    statistic: impl Fn(&[T]) -> f64,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    if values.is_empty() {
        return Err(Error::EmptyInput("bootstrap values"));
    }
    if b == 0 {
        return Err(Error::InvalidConfig { field: "B".into(), reason: "must be positive".into() });
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidConfig { field: "level".into(), reason: format!("{level} not in (0, 1)") });
    }
    let n = values.len();
    let mut sample = Vec::with_capacity(n);
    let mut stats = Vec::new();
    let exhaustive = exhaustive_count(n).is_some_and(|m| m <= b);
    if exhaustive {
        let total = exhaustive_count(n).unwrap();
        for code in 0..total {
            sample.clear();
            let mut c = code;
            for _ in 0..n {
                sample.push(values[c % n]);
                c /= n;
            }
            stats.push(statistic(&sample));
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..b {
            sample.clear();
            sample.extend((0..n).map(|_| values[rng.gen_range(0..n)]));
            stats.push(statistic(&sample));
        }
    }
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let (lo, hi) = percentile_indices(stats.len(), level);
    Ok(BootstrapResult {
        point_estimate: statistic(values),
        ci_low: stats[lo],
        ci_high: stats[hi],
        b: stats.len(),
        level,
        seed,
        exhaustive,
    })
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let m = s.len() / 2;
    Some(if s.len().is_multiple_of(2) { (s[m - 1] + s[m]) / 2.0 } else { s[m] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub metric: String,
    #[serde(rename = "K")]
    pub k: usize,
    /// Against the group's reward variance; `None` for constant columns.
    pub spearman_rho: Option<f64>,
    pub p_value: Option<f64>,
    /// Non-zero-variance classification; `None` for single-class corpora.
    pub auroc: Option<f64>,
    pub n: usize,
}

fn column(corpus: &[GroupRecord], metric: &str, k: usize) -> Result<Vec<f64>> {
    corpus
        .iter()
        .map(|g| {
            g.divergence
                .get(&k)
                .and_then(|v| v.get(metric))
                .ok_or_else(|| Error::MissingDivergence { prompt_id: g.prompt_id.clone(), k })
        })
        .collect()
}

fn nonzero_labels(corpus: &[GroupRecord]) -> Vec<bool> {
    corpus.iter().map(|g| !g.true_label().is_zero_variance()).collect()
}

/// Spearman and AUROC for every (signal, K) pair. The AUROC scores the
/// non-zero-variance class with the raw signal; `flip` negates it.
pub fn heatmap(corpus: &[GroupRecord], k_grid: &[usize], flip: bool) -> Result<Vec<CorrelationCell>> {
    let variance: Vec<f64> = corpus.iter().map(|g| g.reward_variance()).collect();
    let labels = nonzero_labels(corpus);
    let mut cells = Vec::new();
    for metric in SIGNAL_NAMES {
        for &k in k_grid {
            let x = column(corpus, metric, k)?;
            let sp = spearman_rho(&x, &variance).ok();
            let scores: Vec<f64> = if flip { x.iter().map(|v| -v).collect() } else { x };
            cells.push(CorrelationCell {
                metric: metric.to_string(),
                k,
                spearman_rho: sp.map(|s| s.rho),
                p_value: sp.map(|s| s.p_value),
                auroc: auroc(&scores, &labels).ok(),
                n: corpus.len(),
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTypeRow {
    pub task_type: TaskType,
    pub n: usize,
    pub n_zv: usize,
    pub global_auroc: Option<f64>,
    pub best_metric: Option<String>,
    pub best_k: Option<usize>,
    pub best_auroc: Option<f64>,
    /// Two or fewer positives: the AUROC rests on one or two groups.
    pub single_observation: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTypeTable {
    #[serde(rename = "K")]
    pub k: usize,
    pub rows: Vec<PerTypeRow>,
    pub median_global: Option<f64>,
    pub median_best: Option<f64>,
}

/// AUROC of the global `d_K` within each task type, plus the best
/// (signal, K) pair per type.
pub fn per_type_breakdown(corpus: &[GroupRecord], k: usize, k_grid: &[usize]) -> Result<PerTypeTable> {
    let mut rows = Vec::new();
    for tt in TaskType::ALL {
        let subset: Vec<GroupRecord> = corpus.iter().filter(|g| g.task_type == tt).cloned().collect();
        if subset.is_empty() {
            continue;
        }
        let labels = nonzero_labels(&subset);
        let n_zv = labels.iter().filter(|&&l| !l).count();
        let mut row = PerTypeRow {
            task_type: tt,
            n: subset.len(),
            n_zv,
            global_auroc: None,
            best_metric: None,
            best_k: None,
            best_auroc: None,
            single_observation: n_zv <= 2,
            note: None,
        };
        if n_zv == 0 || n_zv == subset.len() {
            row.note = Some("single class, skipped".into());
            rows.push(row);
            continue;
        }
        row.global_auroc = Some(auroc(&column(&subset, "prefix_edit_distance_mean", k)?, &labels)?);
        for metric in SIGNAL_NAMES {
            for &kk in k_grid {
                let a = auroc(&column(&subset, metric, kk)?, &labels)?;
                if row.best_auroc.is_none_or(|b| a > b) {
                    row.best_auroc = Some(a);
                    row.best_metric = Some(metric.to_string());
                    row.best_k = Some(kk);
                }
            }
        }
        rows.push(row);
    }
    let globals: Vec<f64> = rows.iter().filter_map(|r| r.global_auroc).collect();
    let bests: Vec<f64> = rows.iter().filter_map(|r| r.best_auroc).collect();
    Ok(PerTypeTable { k, median_global: median(&globals), median_best: median(&bests), rows })
}
