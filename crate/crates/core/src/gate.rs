//! Gate rules, reference cut policies and the threshold sweep.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceVector;
use crate::error::{Error, Result};
use crate::grpo::{advantages, l2_preservation};
use crate::types::{GroupLabel, GroupRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    DClause,
    TauClause,
    LowTauClause,
    Random,
    Oracle,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub cut: bool,
    pub clause: Clause,
    #[serde(rename = "K")]
    pub k: usize,
    pub d_k: f64,
    pub tau_k: f64,
    /// Label the full rollout would have produced, when a paired run knows it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual_label: Option<GroupLabel>,
}

/// `d_K < d_L`; ties keep the group.
pub fn single_axis_gate(d_k: f64, d_l: f64) -> bool {
    d_k < d_l
}

/// `d_K < d_L  or  tau_K >= tau_H`, reporting the clause that fired
/// (the `d` clause is checked first).
pub fn or_rule_gate(d_k: f64, tau_k: f64, d_l: f64, tau_h: f64) -> (bool, Clause) {
    if d_k < d_l {
        (true, Clause::DClause)
    } else if tau_k >= tau_h {
        (true, Clause::TauClause)
    } else {
        (false, Clause::None)
    }
}

/// `d_K < d_L  or  tau_K <= t_L`.
pub fn low_tau_mirror_gate(d_k: f64, tau_k: f64, d_l: f64, t_l: f64) -> (bool, Clause) {
    if d_k < d_l {
        (true, Clause::DClause)
    } else if tau_k <= t_l {
        (true, Clause::LowTauClause)
    } else {
        (false, Clause::None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum GateRule {
    SingleAxis { d_l: f64 },
    OrRule { d_l: f64, tau_h: f64 },
    LowTauMirror { d_l: f64, t_l: f64 },
}

impl GateRule {
    pub fn d_l(&self) -> f64 {
        match *self {
            GateRule::SingleAxis { d_l } | GateRule::OrRule { d_l, .. } | GateRule::LowTauMirror { d_l, .. } => d_l,
        }
    }

    pub fn with_d_l(self, d_l: f64) -> Self {
        match self {
            GateRule::SingleAxis { .. } => GateRule::SingleAxis { d_l },
            GateRule::OrRule { tau_h, .. } => GateRule::OrRule { d_l, tau_h },
            GateRule::LowTauMirror { t_l, .. } => GateRule::LowTauMirror { d_l, t_l },
        }
    }

    pub fn fires(&self, d_k: f64, tau_k: f64) -> (bool, Clause) {
        match *self {
            GateRule::SingleAxis { d_l } => {
                if single_axis_gate(d_k, d_l) {
                    (true, Clause::DClause)
                } else {
                    (false, Clause::None)
                }
            }
            GateRule::OrRule { d_l, tau_h } => or_rule_gate(d_k, tau_k, d_l, tau_h),
            GateRule::LowTauMirror { d_l, t_l } => low_tau_mirror_gate(d_k, tau_k, d_l, t_l),
        }
    }

    pub fn decide(&self, v: &DivergenceVector) -> GateDecision {
        let (cut, clause) = self.fires(v.d_k(), v.tau_k());
        GateDecision { cut, clause, k: v.k, d_k: v.d_k(), tau_k: v.tau_k(), counterfactual_label: None }
    }
}

impl fmt::Display for GateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateRule::SingleAxis { d_l } => write!(f, "d_K < {d_l}"),
            GateRule::OrRule { d_l, tau_h } => write!(f, "d_K < {d_l} or tau_K >= {tau_h}"),
            GateRule::LowTauMirror { d_l, t_l } => write!(f, "d_K < {d_l} or tau_K <= {t_l}"),
        }
    }
}

/// What the sweep and the reference policies need to know about one group
/// of a fully rolled-out corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct GateObservation {
    pub d_k: f64,
    pub tau_k: f64,
    pub zero_variance: bool,
    /// Steps the full rollout emitted after step K, summed over trajectories.
    pub post_k_steps: usize,
    pub total_steps: usize,
    /// Group-normalized advantages of the full rollout.
    pub advantages: Vec<f64>,
}

impl GateObservation {
    pub fn from_group(group: &GroupRecord, k: usize, epsilon: f64) -> Result<Self> {
        let v = group.divergence.get(&k).ok_or_else(|| Error::MissingDivergence { prompt_id: group.prompt_id.clone(), k })?;
        Ok(GateObservation {
            d_k: v.d_k(),
            tau_k: v.tau_k(),
            zero_variance: group.true_label().is_zero_variance(),
            post_k_steps: group.trajectories.iter().map(|t| t.steps_emitted.saturating_sub(k)).sum(),
            total_steps: group.trajectories.iter().map(|t| t.steps_emitted).sum(),
            advantages: advantages(&group.rewards, epsilon)?.values,
        })
    }
}

pub fn observations(corpus: &[GroupRecord], k: usize, epsilon: f64) -> Result<Vec<GateObservation>> {
    corpus.iter().map(|g| GateObservation::from_group(g, k, epsilon)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rule: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub d_l: f64,
    pub cut: usize,
    pub tp: usize,
    pub fp: usize,
    /// `None` when nothing was cut.
    pub precision: Option<f64>,
    pub recall: f64,
    /// `TP·(T_max-K)/(N·T_max)`, in percent.
    pub safe_pct: f64,
    /// `cut·(T_max-K)/(N·T_max)`, in percent.
    pub raw_pct: f64,
    /// Raw saving counted from the corpus's actual post-K steps, in percent.
    pub raw_actual_pct: f64,
    pub l2_preserved: Option<f64>,
}

impl SweepRow {
    pub fn clears(&self, floor: f64) -> bool {
        self.precision.is_some_and(|p| p >= floor)
    }
}

/// Scores a cut mask against the ground-truth labels.
pub fn score_cuts(rule: String, obs: &[GateObservation], cuts: &[bool], k: usize, d_l: f64, t_max: usize) -> SweepRow {
    let n = obs.len();
    let n_zv = obs.iter().filter(|o| o.zero_variance).count();
    let tp = obs.iter().zip(cuts).filter(|(o, &c)| c && o.zero_variance).count();
    let cut = cuts.iter().filter(|&&c| c).count();
    let fp = cut - tp;
    let per_group = (t_max - k) as f64 / (n as f64 * t_max as f64) * 100.0;
    let total_steps: usize = obs.iter().map(|o| o.total_steps).sum();
    let saved_actual: usize = obs.iter().zip(cuts).filter(|(_, &c)| c).map(|(o, _)| o.post_k_steps).sum();

    let mut flat = Vec::new();
    let mut kept = Vec::new();
    for (o, &c) in obs.iter().zip(cuts) {
        flat.extend_from_slice(&o.advantages);
        kept.extend(std::iter::repeat_n(!c, o.advantages.len()));
    }

    SweepRow {
        rule,
        k,
        d_l,
        cut,
        tp,
        fp,
        precision: (cut > 0).then(|| tp as f64 / cut as f64),
        recall: if n_zv == 0 { 0.0 } else { tp as f64 / n_zv as f64 },
        safe_pct: tp as f64 * per_group,
        raw_pct: cut as f64 * per_group,
        raw_actual_pct: if total_steps == 0 { 0.0 } else { saved_actual as f64 / total_steps as f64 * 100.0 },
        l2_preserved: l2_preservation(&flat, &kept).ok(),
    }
}

/// One row per `d_L` in the grid, holding the other rule parameters fixed.
pub fn sweep(obs: &[GateObservation], rule: GateRule, k: usize, d_l_grid: &[f64], t_max: usize) -> Vec<SweepRow> {
    d_l_grid
        .iter()
        .map(|&d_l| {
            let r = rule.with_d_l(d_l);
            let cuts: Vec<bool> = obs.iter().map(|o| r.fires(o.d_k, o.tau_k).0).collect();
            score_cuts(r.to_string(), obs, &cuts, k, d_l, t_max)
        })
        .collect()
}

/// `d_L` values 0.02, 0.03, ..., 0.30.
pub fn low_tau_dl_grid() -> Vec<f64> {
    (2..=30).map(|i| i as f64 / 100.0).collect()
}

pub const LOW_TAU_TL_GRID: [f64; 4] = [0.0, 0.05, 0.10, 0.15];
pub const K_GRID: [usize; 4] = [5, 10, 15, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub floor: f64,
    pub rows: Vec<SweepRow>,
    /// Highest precision over rows that cut anything.
    pub best: Option<SweepRow>,
    pub any_clears: bool,
}

/// Sweeps the low-tau mirror over every (K, t_L, d_L) combination and
/// reports whether any point reaches `floor` precision.
pub fn low_tau_mirror_search(
    corpus: &[GroupRecord],
    k_grid: &[usize],
    t_l_grid: &[f64],
    d_l_grid: &[f64],
    t_max: usize,
    epsilon: f64,
    floor: f64,
) -> Result<GridSearch> {
    let mut rows = Vec::new();
    for &k in k_grid {
        let obs = observations(corpus, k, epsilon)?;
        for &t_l in t_l_grid {
            rows.extend(sweep(&obs, GateRule::LowTauMirror { d_l: 0.0, t_l }, k, d_l_grid, t_max));
        }
    }
    let best = rows
        .iter()
        .filter(|r| r.precision.is_some())
        .max_by(|a, b| a.precision.partial_cmp(&b.precision).unwrap_or(std::cmp::Ordering::Equal))
        .cloned();
    let any_clears = rows.iter().any(|r| r.clears(floor));
    Ok(GridSearch { floor, rows, best, any_clears })
}

/// Minimum precision keeping the worst-case share of useful groups lost
/// under `eta`: `1 - eta·n_nonzero/n_cut`, floored at 0.
pub fn precision_floor(eta: f64, n_nonzero: usize, n_cut: usize) -> Result<f64> {
    if n_cut == 0 {
        return Err(Error::NoCuts);
    }
    Ok((1.0 - eta * n_nonzero as f64 / n_cut as f64).max(0.0))
}

/// Cuts exactly `budget` groups chosen uniformly without replacement.
pub fn random_cut(n: usize, budget: usize, seed: u64) -> Result<Vec<bool>> {
    if budget > n {
        return Err(Error::BudgetTooLarge { budget, corpus: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, budget) {
        mask[i] = true;
    }
    Ok(mask)
}

/// Cuts exactly the zero-variance groups.
pub fn oracle_cut(obs: &[GateObservation]) -> Vec<bool> {
    obs.iter().map(|o| o.zero_variance).collect()
}

/// Post-hoc filter: never cuts a rollout, returns which groups stay in the
/// gradient batch.
pub fn dapo_keep(obs: &[GateObservation]) -> Vec<bool> {
    obs.iter().map(|o| !o.zero_variance).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRow {
    pub arm: String,
    pub cut: usize,
    pub tp: usize,
    pub fp: usize,
    pub precision: Option<f64>,
    pub rollout_saved_pct: f64,
    pub rollout_saved_actual_pct: f64,
    pub l2_preserved_pct: f64,
}

fn arm_row(name: &str, row: &SweepRow) -> ArmRow {
    ArmRow {
        arm: name.to_string(),
        cut: row.cut,
        tp: row.tp,
        fp: row.fp,
        precision: row.precision,
        rollout_saved_pct: row.raw_pct,
        rollout_saved_actual_pct: row.raw_actual_pct,
        l2_preserved_pct: row.l2_preserved.unwrap_or(f64::NAN) * 100.0,
    }
}

/// The strong-baseline comparison: no gate, random cut at a matched budget,
/// oracle, post-hoc filter, the single-axis gate, the tau clause alone, the
/// OR rule, and the gate combined with the post-hoc filter.
pub fn baseline_arms(
    obs: &[GateObservation],
    k: usize,
    t_max: usize,
    d_l: f64,
    tau_h: f64,
    random_budget: usize,
    seed: u64,
) -> Result<Vec<ArmRow>> {
    let n = obs.len();
    let none = vec![false; n];
    let score = |name: &str, cuts: &[bool]| score_cuts(name.to_string(), obs, cuts, k, d_l, t_max);

    let ours: Vec<bool> = obs.iter().map(|o| single_axis_gate(o.d_k, d_l)).collect();
    let tau_only: Vec<bool> = obs.iter().map(|o| o.tau_k >= tau_h).collect();
    let or_rule: Vec<bool> = obs.iter().map(|o| or_rule_gate(o.d_k, o.tau_k, d_l, tau_h).0).collect();
    let random = random_cut(n, random_budget, seed)?;
    let oracle = oracle_cut(obs);
    let dapo = dapo_keep(obs);

    let mut rows = vec![
        arm_row("no-gate", &score("no-gate", &none)),
        arm_row(&format!("random-cut (matched {random_budget})"), &score("random", &random)),
        arm_row("oracle (cut iff zv)", &score("oracle", &oracle)),
        arm_row("post-hoc zv filter only", &score("dapo", &none)),
        arm_row(&format!("single-axis d_K < {d_l}"), &score("ours", &ours)),
        arm_row(&format!("tau_K >= {tau_h} only"), &score("tau", &tau_only)),
        arm_row("OR rule (d or tau)", &score("or", &or_rule)),
    ];
    let ours_dapo: Vec<bool> = ours.iter().zip(&dapo).map(|(&c, &keep)| c || !keep).collect();
    // the post-hoc filter only drops zero-advantage groups, so rollout
    // savings are the gate's and the L2 norm is measured on the union
    let mut combined = arm_row("single-axis + post-hoc filter", &score("ours", &ours));
    let l2 = score("ours+dapo", &ours_dapo).l2_preserved.unwrap_or(f64::NAN);
    combined.l2_preserved_pct = l2 * 100.0;
    rows.push(combined);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ob(d_k: f64, tau_k: f64, zv: bool) -> GateObservation {
        GateObservation {
            d_k,
            tau_k,
            zero_variance: zv,
            post_k_steps: 160,
            total_steps: 240,
            advantages: if zv { vec![0.0; 8] } else { vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0] },
        }
    }

    #[test]
    fn single_axis_examples() {
        assert!(single_axis_gate(0.05, 0.12));
        assert!(!single_axis_gate(0.12, 0.12));
        assert!(!single_axis_gate(0.50, 0.12));
    }

    #[test]
    fn or_rule_examples() {
        assert_eq!(or_rule_gate(0.50, 0.95, 0.12, 0.90), (true, Clause::TauClause));
        assert_eq!(or_rule_gate(0.05, 0.0, 0.12, 0.90), (true, Clause::DClause));
        assert_eq!(or_rule_gate(0.50, 0.50, 0.12, 0.90), (false, Clause::None));
        assert_eq!(or_rule_gate(0.50, 0.90, 0.12, 0.90), (true, Clause::TauClause));
    }

    #[test]
    fn low_tau_examples() {
        assert_eq!(low_tau_mirror_gate(0.5, 0.0, 0.12, 0.05), (true, Clause::LowTauClause));
        assert_eq!(low_tau_mirror_gate(0.5, 0.5, 0.12, 0.05), (false, Clause::None));
        assert_eq!(low_tau_mirror_gate(0.5, 0.05, 0.12, 0.05), (true, Clause::LowTauClause));
    }

    #[test]
    fn precision_floor_examples() {
        let p = precision_floor(0.10, 61, 21).unwrap();
        assert!((p - (1.0 - 6.1 / 21.0)).abs() < 1e-12);
        assert!((0.705..=0.715).contains(&p));
        assert_eq!(precision_floor(0.0, 61, 21).unwrap(), 1.0);
        assert!((precision_floor(0.05, 61, 21).unwrap() - 0.8548).abs() < 1e-4);
        assert_eq!(precision_floor(1.0, 61, 21).unwrap(), 0.0);
        assert!(matches!(precision_floor(0.1, 61, 0), Err(Error::NoCuts)));
    }

    #[test]
    fn undefined_precision_without_cuts() {
        let obs = vec![ob(0.5, 0.0, true), ob(0.6, 0.0, false)];
        let rows = sweep(&obs, GateRule::SingleAxis { d_l: 0.0 }, 10, &[0.1], 30);
        assert_eq!(rows[0].cut, 0);
        assert_eq!(rows[0].precision, None);
        assert!(!rows[0].clears(0.0));
        assert_eq!(rows[0].safe_pct, 0.0);
    }

    #[test]
    fn random_cut_budget() {
        let m = random_cut(10, 4, 3).unwrap();
        assert_eq!(m.iter().filter(|&&c| c).count(), 4);
        assert_eq!(m, random_cut(10, 4, 3).unwrap());
        assert!(matches!(random_cut(3, 4, 0), Err(Error::BudgetTooLarge { .. })));
    }

    #[test]
    fn arms_table_shape() {
        let mut obs: Vec<_> = (0..39).map(|i| ob(i as f64 / 100.0, 0.0, true)).collect();
        obs.extend((0..61).map(|i| ob(0.1 + i as f64 / 100.0, 0.0, false)));
        let rows = baseline_arms(&obs, 10, 30, 0.12, 0.9, 23, 1).unwrap();
        let oracle = rows.iter().find(|r| r.arm.starts_with("oracle")).unwrap();
        assert_eq!((oracle.cut, oracle.tp, oracle.precision), (39, 39, Some(1.0)));
        assert!((oracle.rollout_saved_pct - 26.0).abs() < 1e-9);
        assert_eq!(oracle.l2_preserved_pct, 100.0);
        let dapo = rows.iter().find(|r| r.arm.starts_with("post-hoc")).unwrap();
        assert_eq!(dapo.rollout_saved_pct, 0.0);
        assert_eq!(dapo.l2_preserved_pct, 100.0);
        let random = rows.iter().find(|r| r.arm.starts_with("random")).unwrap();
        assert_eq!(random.cut, 23);
    }
}
