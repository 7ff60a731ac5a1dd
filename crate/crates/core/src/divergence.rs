//! In-group divergence signals over the partial trajectories of a group.
//!
//! All signals look only at the first `K` steps. A trajectory that ended
//! before `K` contributes its truncated prefix, and its last emitted
//! action/observation stands in for the step-`K` symbol.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ActionToken, GroupRecord, ObservationId, TrajectoryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceVector {
    #[serde(rename = "K")]
    pub k: usize,
    /// `d_K`: mean pairwise length-normalized edit distance.
    pub prefix_edit_distance_mean: f64,
    pub action_bigram_jaccard_mean: f64,
    pub unique_prefix_ratio: f64,
    pub unique_action_ratio: f64,
    /// Shannon entropy of the step-`K` actions divided by `ln G`.
    pub action_entropy: f64,
    pub obs_unique_ratio: f64,
    /// `tau_K`: fraction of trajectories finished by step `K`.
    pub termination_fraction: f64,
}

/// Signal names in the order used by correlation grids.
pub const SIGNAL_NAMES: [&str; 7] = [
    "prefix_edit_distance_mean",
    "action_bigram_jaccard_mean",
    "unique_prefix_ratio",
    "unique_action_ratio",
    "action_entropy",
    "obs_unique_ratio",
    "termination_fraction",
];

impl DivergenceVector {
    pub fn d_k(&self) -> f64 {
        self.prefix_edit_distance_mean
    }

    pub fn tau_k(&self) -> f64 {
        self.termination_fraction
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "prefix_edit_distance_mean" => self.prefix_edit_distance_mean,
            "action_bigram_jaccard_mean" => self.action_bigram_jaccard_mean,
            "unique_prefix_ratio" => self.unique_prefix_ratio,
            "unique_action_ratio" => self.unique_action_ratio,
            "action_entropy" => self.action_entropy,
            "obs_unique_ratio" => self.obs_unique_ratio,
            "termination_fraction" => self.termination_fraction,
            _ => return None,
        })
    }

    pub fn values(&self) -> [f64; 7] {
        [
            self.prefix_edit_distance_mean,
            self.action_bigram_jaccard_mean,
            self.unique_prefix_ratio,
            self.unique_action_ratio,
            self.action_entropy,
            self.obs_unique_ratio,
            self.termination_fraction,
        ]
    }
}

/// Minimum number of insertions, deletions and substitutions turning `a`
/// into `b`. Two-row dynamic program, O(|a|·|b|) time.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance normalized by the longer length. Two empty sequences are
/// identical and score 0.
pub fn normalized_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        0.0
    } else {
        levenshtein(a, b) as f64 / longest as f64
    }
}

fn check_group(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::EmptyInput("prefixes"))
    } else if n < 2 {
        Err(Error::GroupTooSmall(n))
    } else {
        Ok(())
    }
}

fn pairwise_mean<P>(items: &[P], dist: impl Fn(&P, &P) -> f64) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..items.len() {
        for j in (i + 1)..items.len() {
            total += dist(&items[i], &items[j]);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// `d_K`: mean over all pairs of the normalized edit distance between the
/// given prefixes.
pub fn prefix_edit_distance_mean<P: AsRef<[ActionToken]>>(prefixes: &[P]) -> Result<f64> {
    check_group(prefixes.len())?;
    Ok(pairwise_mean(prefixes, |a, b| normalized_edit_distance(a.as_ref(), b.as_ref())))
}

fn bigrams(prefix: &[ActionToken]) -> HashSet<(ActionToken, ActionToken)> {
    prefix.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Mean over pairs of one minus the Jaccard overlap of the action-bigram
/// sets. Two empty bigram sets count as identical.
pub fn bigram_jaccard_mean<P: AsRef<[ActionToken]>>(prefixes: &[P]) -> Result<f64> {
    check_group(prefixes.len())?;
    let sets: Vec<_> = prefixes.iter().map(|p| bigrams(p.as_ref())).collect();
    Ok(pairwise_mean(&sets, |a, b| {
        let union = a.union(b).count();
        if union == 0 {
            0.0
        } else {
            1.0 - a.intersection(b).count() as f64 / union as f64
        }
    }))
}

fn unique_ratio<T: Eq + Hash>(items: &[T]) -> f64 {
    let distinct: HashSet<&T> = items.iter().collect();
    distinct.len() as f64 / items.len() as f64
}

/// Entropy of the empirical distribution of `items`, divided by
/// `ln(items.len())` so the result lies in `[0, 1]`.
fn normalized_entropy<T: Eq + Hash>(items: &[T]) -> f64 {
    let n = items.len();
    if n < 2 {
        return 0.0;
    }
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for it in items {
        *counts.entry(it).or_default() += 1;
    }
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n as f64;
            p * (1.0 / p).ln()
        })
        .sum();
    (h / (n as f64).ln()).clamp(0.0, 1.0)
}

/// Symbol at step `k` (1-based), or the last emitted one when the
/// trajectory stopped earlier. `None` for an empty trajectory.
fn symbol_at<T: Copy>(seq: &[T], k: usize) -> Option<T> {
    if seq.is_empty() || k == 0 {
        None
    } else {
        Some(seq[k.min(seq.len()) - 1])
    }
}

/// Computes all seven signals over the trajectories at evaluation step `k`.
pub fn signals_at(trajectories: &[TrajectoryRecord], k: usize) -> Result<DivergenceVector> {
    check_group(trajectories.len())?;
    let prefixes: Vec<&[ActionToken]> = trajectories.iter().map(|t| t.prefix(k)).collect();
    let actions_k: Vec<Option<ActionToken>> = trajectories.iter().map(|t| symbol_at(&t.actions, k)).collect();
    let obs_k: Vec<Option<ObservationId>> = trajectories.iter().map(|t| symbol_at(&t.observations, k)).collect();
    let finished = trajectories.iter().filter(|t| t.finished_by(k)).count();

    Ok(DivergenceVector {
        k,
        prefix_edit_distance_mean: prefix_edit_distance_mean(&prefixes)?,
        action_bigram_jaccard_mean: bigram_jaccard_mean(&prefixes)?,
        unique_prefix_ratio: unique_ratio(&prefixes),
        unique_action_ratio: unique_ratio(&actions_k),
        action_entropy: normalized_entropy(&actions_k),
        obs_unique_ratio: unique_ratio(&obs_k),
        termination_fraction: finished as f64 / trajectories.len() as f64,
    })
}

/// The six signals other than `d_K`, packaged in a full vector. Provided for
/// callers that already hold `d_K`; equivalent to [`signals_at`].
pub fn auxiliary_signals(group: &GroupRecord, k: usize) -> Result<DivergenceVector> {
    signals_at(&group.trajectories, k)
}

/// Populates `group.divergence` at every `k` in the grid.
pub fn annotate(group: &mut GroupRecord, k_grid: &[usize]) -> Result<()> {
    for &k in k_grid {
        let v = signals_at(&group.trajectories, k)?;
        group.divergence.insert(k, v);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<ActionToken> {
        s.split_whitespace().map(|w| ActionToken(w.as_bytes()[0] as u16)).collect()
    }

    fn traj(actions: &[u16], terminated_at: Option<usize>) -> TrajectoryRecord {
        TrajectoryRecord {
            actions: actions.iter().map(|&a| ActionToken(a)).collect(),
            observations: actions.iter().map(|&a| ObservationId(a as u32 * 10)).collect(),
            terminated_at,
            reward: if terminated_at.is_some() { 1.0 } else { 0.0 },
            steps_emitted: actions.len(),
            is_cut: false,
        }
    }

    #[test]
    fn levenshtein_basics() {
        let s = toks("a b c d");
        assert_eq!(levenshtein(&s, &s), 0);
        assert_eq!(levenshtein(&[], &s), 4);
        assert_eq!(levenshtein(&toks("k i t t e n"), &toks("s i t t i n g")), 3);
    }

    #[test]
    fn d_k_examples() {
        let p = toks("x y z");
        assert_eq!(prefix_edit_distance_mean(&[p.clone(), p.clone(), p]).unwrap(), 0.0);
        assert_eq!(prefix_edit_distance_mean(&[toks("x"), toks("y")]).unwrap(), 1.0);
        let d = prefix_edit_distance_mean(&[toks("x y"), toks("x y"), toks("x z")]).unwrap();
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_pairs_count_as_identical() {
        let e: Vec<ActionToken> = vec![];
        assert_eq!(prefix_edit_distance_mean(&[e.clone(), e.clone()]).unwrap(), 0.0);
        assert_eq!(prefix_edit_distance_mean(&[e, toks("a")]).unwrap(), 1.0);
    }

    #[test]
    fn d_k_needs_two() {
        assert!(matches!(prefix_edit_distance_mean::<Vec<ActionToken>>(&[]), Err(Error::EmptyInput(_))));
        assert!(matches!(prefix_edit_distance_mean(&[toks("a")]), Err(Error::GroupTooSmall(1))));
    }

    #[test]
    fn identical_group_signals() {
        let ts: Vec<_> = (0..4).map(|_| traj(&[1, 2, 3, 4, 5], None)).collect();
        let v = signals_at(&ts, 4).unwrap();
        assert_eq!(v.prefix_edit_distance_mean, 0.0);
        assert_eq!(v.action_bigram_jaccard_mean, 0.0);
        assert_eq!(v.unique_prefix_ratio, 0.25);
        assert_eq!(v.unique_action_ratio, 0.25);
        assert_eq!(v.action_entropy, 0.0);
        assert_eq!(v.obs_unique_ratio, 0.25);
        assert_eq!(v.termination_fraction, 0.0);
    }

    #[test]
    fn termination_fraction_bounds() {
        let done: Vec<_> = (0..3).map(|_| traj(&[1, 2], Some(2))).collect();
        assert_eq!(signals_at(&done, 5).unwrap().termination_fraction, 1.0);
        assert_eq!(signals_at(&done, 1).unwrap().termination_fraction, 0.0);
    }

    #[test]
    fn all_distinct_step_k_actions_have_unit_entropy() {
        let ts: Vec<_> = (0..5u16).map(|i| traj(&[9, i], None)).collect();
        let v = signals_at(&ts, 2).unwrap();
        assert!((v.action_entropy - 1.0).abs() < 1e-12);
        assert_eq!(v.unique_action_ratio, 1.0);
        assert_eq!(v.unique_prefix_ratio, 1.0);
    }

    #[test]
    fn early_terminated_uses_last_symbol() {
        let ts = vec![traj(&[1, 2], Some(2)), traj(&[1, 2, 7, 8], None)];
        let v = signals_at(&ts, 4).unwrap();
        // step-4 symbols are 2 (last emitted) and 8
        assert_eq!(v.unique_action_ratio, 1.0);
        // prefixes [1,2] vs [1,2,7,8]: distance 2 over length 4
        assert_eq!(v.prefix_edit_distance_mean, 0.5);
        assert_eq!(v.termination_fraction, 0.5);
    }

    #[test]
    fn bigram_jaccard_hand_example() {
        // {ab, bc} vs {ab, bd}: overlap 1/3
        let j = bigram_jaccard_mean(&[toks("a b c"), toks("a b d")]).unwrap();
        assert!((j - 2.0 / 3.0).abs() < 1e-15);
    }
}
