//! Tabular softmax policy trained with GRPO on the search world, with the
//! frozen-buffer and online training harnesses and their telemetry.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{advantages, dilution_ratio, BatchStats};
use crate::simenv::{
    derive_seed, rollout_group, run_episode, supervised_rollout, Action, EnvView, GateSupervisorConfig, RolloutPolicy,
    SearchWorld, TaskProfile,
};
use crate::stats::mean;
use crate::types::{step_tokens, ActionToken, GroupRecord, ObservationId, TaskType};

/// Per-trajectory cap on counted action positions in the item accounting.
pub const ITEM_POSITIONS_CAP: usize = 8;

/// Softmax policy over actions, one logit row per (task type, previous
/// observation) feature. Temperature 0 means greedy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub n_locations: usize,
    pub n_actions: usize,
    /// Observation slots per task type, including the "no observation yet" slot.
    pub n_slots: usize,
    pub logits: Vec<f64>,
    pub temperature: f64,
}

impl TabularPolicy {
    pub fn zeros(n_locations: usize, temperature: f64) -> Self {
        let n_actions = n_locations + 3;
        let n_slots = (n_locations + 1) * 6 + 2;
        TabularPolicy {
            n_locations,
            n_actions,
            n_slots,
            logits: vec![0.0; TaskType::ALL.len() * n_slots * n_actions],
            temperature,
        }
    }

    /// A "pretrained" starting point: procedural moves (open a closed
    /// receptacle, take a visible object, deliver it) are near certain,
    /// and every searching state has a favourite next receptacle whose pull
    /// varies from weak to overwhelming.
    pub fn pretrained(n_locations: usize, temperature: f64, seed: u64) -> Self {
        let mut p = Self::zeros(n_locations, temperature);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        const PROCEDURAL: f64 = 6.0;
        for task in TaskType::ALL {
            let goal = TaskProfile::for_type(task, n_locations).goal;
            let world = SearchWorld {
                n_locations,
                target_location: (goal + 1) % n_locations,
                goal_location: goal,
                task_type: task,
                decoy_prefix_length: 0,
                instance: 0,
            };
            for slot in 0..p.n_slots {
                let Some((loc, holding, container)) = decode_slot(slot, n_locations) else {
                    continue;
                };
                let f = p.feature(task, slot);
                let row = &mut p.logits[f * p.n_actions..(f + 1) * p.n_actions];
                let bump = |row: &mut [f64], a: Action, v: f64| row[world.encode(a).0 as usize] += v;
                if holding {
                    if loc == Some(goal) {
                        bump(row, Action::Put, PROCEDURAL);
                    } else {
                        bump(row, Action::Goto(goal), PROCEDURAL);
                    }
                } else if container == 2 {
                    bump(row, Action::Take, PROCEDURAL);
                } else if container == 0 && matches!(loc, Some(l) if l != goal) {
                    bump(row, Action::Open, PROCEDURAL);
                } else {
                    let mut fav = rng.gen_range(0..n_locations);
                    while fav == goal || Some(fav) == loc {
                        fav = rng.gen_range(0..n_locations);
                    }
                    let pull: f64 = rng.gen_range(0.0..8.0);
                    bump(row, Action::Goto(fav), pull);
                    bump(row, Action::Goto(goal), -2.0);
                }
            }
        }
        p
    }

    pub fn with_temperature(&self, temperature: f64) -> Self {
        TabularPolicy { temperature, ..self.clone() }
    }

    fn feature(&self, task: TaskType, slot: usize) -> usize {
        task.index() * self.n_slots + slot
    }

    /// Feature row used to choose the action after `last` (None at step 1).
    pub fn feature_of(&self, task: TaskType, last: Option<ObservationId>) -> usize {
        self.feature(task, last.map_or(0, |o| o.0 as usize + 1))
    }

    pub fn row(&self, feature: usize) -> &[f64] {
        &self.logits[feature * self.n_actions..(feature + 1) * self.n_actions]
    }

    /// Action distribution of a feature row. At temperature 0 this is the
    /// sampling distribution at temperature 1; use `greedy` to act.
    pub fn probs(&self, feature: usize) -> Vec<f64> {
        let t = if self.temperature > 0.0 { self.temperature } else { 1.0 };
        let row = self.row(feature);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|x| ((x - m) / t).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    pub fn log_prob(&self, feature: usize, action: ActionToken) -> f64 {
        let t = if self.temperature > 0.0 { self.temperature } else { 1.0 };
        let row = self.row(feature);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m / t + row.iter().map(|x| ((x - m) / t).exp()).sum::<f64>().ln();
        row[action.0 as usize] / t - lse
    }

    fn greedy(&self, feature: usize) -> ActionToken {
        let row = self.row(feature);
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        ActionToken(best as u16)
    }
}

/// Slot -> (location, holding, container state); None for unused slots.
fn decode_slot(slot: usize, n_locations: usize) -> Option<(Option<usize>, bool, usize)> {
    if slot == 0 {
        return Some((None, false, 0));
    }
    let obs = slot - 1;
    if obs >= (n_locations + 1) * 6 {
        return None;
    }
    let container = obs % 3;
    let holding = (obs / 3) % 2 == 1;
    let loc = obs / 6;
    Some(((loc < n_locations).then_some(loc), holding, container))
}

impl RolloutPolicy for TabularPolicy {
    type GroupPlan = ();
    type TrajectoryState = ();

    fn plan_group(&self, _world: &SearchWorld, _rng: &mut ChaCha8Rng) {}

    fn init_trajectory(&self, _world: &SearchWorld, _plan: &(), _rng: &mut ChaCha8Rng) {}

    fn next_action(&self, world: &SearchWorld, _plan: &(), _state: &mut (), view: &EnvView, rng: &mut ChaCha8Rng) -> ActionToken {
        let f = self.feature_of(world.task_type, view.last_observation);
        if self.temperature == 0.0 {
            return self.greedy(f);
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let probs = self.probs(f);
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return ActionToken(i as u16);
            }
        }
        ActionToken((probs.len() - 1) as u16)
    }
}

/// Loss value and exact gradient of `-(1/N) Σ_i A_i Σ_t log π(a_t | f_t)`
/// over all trajectories of `batch`.
#[derive(Debug, Clone)]
pub struct PolicyGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub n_items: usize,
    pub n_zero_advantage: usize,
}

impl PolicyGradient {
    pub fn l2(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

fn features<'a>(policy: &'a TabularPolicy, group: &'a GroupRecord, t: usize) -> impl Iterator<Item = (usize, ActionToken)> + 'a {
    let tr = &group.trajectories[t];
    tr.actions.iter().enumerate().map(move |(s, &a)| {
        let last = if s == 0 { None } else { Some(tr.observations[s - 1]) };
        (policy.feature_of(group.task_type, last), a)
    })
}

pub fn policy_gradient(policy: &TabularPolicy, batch: &[&GroupRecord], epsilon: f64) -> Result<PolicyGradient> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let t = if policy.temperature > 0.0 { policy.temperature } else { 1.0 };
    let na = policy.n_actions;
    let mut grad = vec![0.0; policy.logits.len()];
    let n: usize = batch.iter().map(|g| g.trajectories.len()).sum();
    let mut loss = 0.0;
    let mut n_zero = 0;
    for group in batch {
        let adv = advantages(&group.rewards, epsilon)?;
        for (i, &a_i) in adv.values.iter().enumerate() {
            if a_i == 0.0 {
                n_zero += 1;
                continue;
            }
            let w = -a_i / n as f64;
            for (f, a) in features(policy, group, i) {
                loss += w * policy.log_prob(f, a);
                let probs = policy.probs(f);
                let row = &mut grad[f * na..(f + 1) * na];
                for (b, p) in probs.iter().enumerate() {
                    let ind = if b == a.0 as usize { 1.0 } else { 0.0 };
                    row[b] += w * (ind - p) / t;
                }
            }
        }
    }
    Ok(PolicyGradient { loss, grad, n_items: n, n_zero_advantage: n_zero })
}

/// The loss alone, for finite-difference checks.
pub fn policy_loss(policy: &TabularPolicy, batch: &[&GroupRecord], epsilon: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let n: usize = batch.iter().map(|g| g.trajectories.len()).sum();
    let mut loss = 0.0;
    for group in batch {
        let adv = advantages(&group.rewards, epsilon)?;
        for (i, &a_i) in adv.values.iter().enumerate() {
            let lp: f64 = features(policy, group, i).map(|(f, a)| policy.log_prob(f, a)).sum();
            loss -= a_i * lp / n as f64;
        }
    }
    Ok(loss)
}

/// One plain gradient-descent step on the kept groups. Cut groups must
/// already be removed. Returns `None` (and leaves the policy untouched)
/// when nothing is left to train on.
pub fn grpo_step(
    batch: &[&GroupRecord],
    policy: &mut TabularPolicy,
    learning_rate: f64,
    epsilon: f64,
) -> Result<Option<BatchStats>> {
    if batch.is_empty() {
        log::info!("empty batch after gating; update skipped");
        return Ok(None);
    }
    let pg = policy_gradient(policy, batch, epsilon)?;
    for (w, g) in policy.logits.iter_mut().zip(&pg.grad) {
        *w -= learning_rate * g;
    }
    Ok(Some(BatchStats {
        n_items: pg.n_items,
        n_zero_advantage: pg.n_zero_advantage,
        zero_fraction: pg.n_zero_advantage as f64 / pg.n_items as f64,
        gradient_l2: pg.l2(),
        loss: pg.loss,
    }))
}

/// Trajectories times counted action positions.
pub fn train_items(batch: &[&GroupRecord]) -> usize {
    batch.iter().flat_map(|g| &g.trajectories).map(|t| t.steps_emitted.min(ITEM_POSITIONS_CAP)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Baseline,
    Gated,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arm::Baseline => "baseline",
            Arm::Gated => "gated",
        })
    }
}

/// One line of training telemetry (one iteration, one arm, one seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTelemetry {
    pub tier: u8,
    pub arm: Arm,
    pub seed: u64,
    pub iteration: usize,
    pub n_groups: usize,
    pub cut_count: usize,
    /// Zero-variance groups among the baseline arm's groups this iteration.
    pub zero_variance_count: usize,
    pub train_items: usize,
    pub zero_advantage_item_fraction: Option<f64>,
    pub gradient_l2: Option<f64>,
    pub loss: Option<f64>,
    pub mean_train_reward_over_uncut: Option<f64>,
    pub heldout_success: Option<f64>,
    pub step_tokens: usize,
    pub cumulative_step_tokens: usize,
    pub skipped: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub g: usize,
    pub t_max: usize,
    pub n_locations: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub rollout_temperature: f64,
    pub eval_temperature: f64,
    pub gate: GateSupervisorConfig,
    /// Seed of the starting policy, shared by all arms and seeds.
    pub prior_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            g: 8,
            t_max: 30,
            n_locations: crate::simenv::DEFAULT_LOCATIONS,
            learning_rate: 0.5,
            epsilon: crate::grpo::DEFAULT_EPSILON,
            rollout_temperature: 0.7,
            eval_temperature: 0.0,
            gate: GateSupervisorConfig::new(10, 0.12),
            prior_seed: 2024,
        }
    }
}

impl TrainConfig {
    fn initial_policy(&self) -> TabularPolicy {
        TabularPolicy::pretrained(self.n_locations, self.rollout_temperature, self.prior_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier2Step {
    pub step: usize,
    pub sampled: Vec<usize>,
    pub baseline_items: usize,
    pub gated_items: usize,
    pub baseline_grad_l2: f64,
    pub gated_grad_l2: Option<f64>,
    /// Gated/baseline gradient norm with both computed at the baseline
    /// arm's parameters.
    pub matched_ratio: Option<f64>,
    /// `N / (N - m)` for the `m` trajectories removed by the gate.
    pub matched_identity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier2Result {
    pub steps: Vec<Tier2Step>,
    pub telemetry: Vec<TrainTelemetry>,
    pub baseline_items: usize,
    pub gated_items: usize,
    pub mean_grad_ratio: Option<f64>,
}

/// Fixed-buffer training: both arms draw the same groups each step; the
/// gated arm drops those with `d_K < d_L` before forming its batch.
pub fn run_tier2(
    buffer: &[GroupRecord],
    steps: usize,
    groups_per_step: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Tier2Result> {
    if buffer.len() < groups_per_step || groups_per_step == 0 {
        return Err(Error::InvalidConfig {
            field: "groups_per_step".into(),
            reason: format!("need 1..={} groups, got {groups_per_step}", buffer.len()),
        });
    }
    let k = cfg.gate.k;
    let rule = cfg.gate.rule();
    for g in buffer {
        if !g.divergence.contains_key(&k) {
            return Err(Error::MissingDivergence { prompt_id: g.prompt_id.clone(), k });
        }
    }
    let mut base = cfg.initial_policy();
    let mut gated = base.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Tier2Result { steps: vec![], telemetry: vec![], baseline_items: 0, gated_items: 0, mean_grad_ratio: None };
    let (mut sum_b, mut sum_g) = (0.0, 0.0);
    let (mut n_b, mut n_g) = (0usize, 0usize);
    let mut cum = [0usize; 2];
    for step in 0..steps {
        let mut sampled = sample(&mut rng, buffer.len(), groups_per_step).into_vec();
        sampled.sort_unstable();
        let all: Vec<&GroupRecord> = sampled.iter().map(|&i| &buffer[i]).collect();
        let kept: Vec<&GroupRecord> = all.iter().copied().filter(|g| !rule.decide(&g.divergence[&k]).cut).collect();
        let cut = all.len() - kept.len();
        let zv = all.iter().filter(|g| g.is_zero_variance()).count();

        let matched = if kept.is_empty() {
            None
        } else {
            let gb = policy_gradient(&base, &all, cfg.epsilon)?.l2();
            let gk = policy_gradient(&base, &kept, cfg.epsilon)?.l2();
            (gb > 0.0).then(|| gk / gb)
        };
        let n_all: usize = all.iter().map(|g| g.trajectories.len()).sum();
        let n_kept: usize = kept.iter().map(|g| g.trajectories.len()).sum();
        let sb = grpo_step(&all, &mut base, cfg.learning_rate, cfg.epsilon)?.expect("non-empty");
        let sg = grpo_step(&kept, &mut gated, cfg.learning_rate, cfg.epsilon)?;
        sum_b += sb.gradient_l2;
        n_b += 1;
        if let Some(s) = sg {
            sum_g += s.gradient_l2;
            n_g += 1;
        }
        let items = [train_items(&all), train_items(&kept)];
        out.baseline_items += items[0];
        out.gated_items += items[1];
        for (j, (arm, batch, stats)) in [(Arm::Baseline, &all, Some(sb)), (Arm::Gated, &kept, sg)].into_iter().enumerate() {
            let tokens: usize = batch.iter().map(|g| step_tokens(g)).sum();
            cum[j] += tokens;
            out.telemetry.push(TrainTelemetry {
                tier: 2,
                arm,
                seed,
                iteration: step,
                n_groups: batch.len(),
                cut_count: if arm == Arm::Gated { cut } else { 0 },
                zero_variance_count: zv,
                train_items: items[j],
                zero_advantage_item_fraction: stats.map(|s| s.zero_fraction),
                gradient_l2: stats.map(|s| s.gradient_l2),
                loss: stats.map(|s| s.loss),
                mean_train_reward_over_uncut: mean_reward(batch),
                heldout_success: None,
                step_tokens: tokens,
                cumulative_step_tokens: cum[j],
                skipped: stats.is_none(),
                config_hash: None,
            });
        }
        out.steps.push(Tier2Step {
            step,
            sampled,
            baseline_items: items[0],
            gated_items: items[1],
            baseline_grad_l2: sb.gradient_l2,
            gated_grad_l2: sg.map(|s| s.gradient_l2),
            matched_ratio: matched,
            matched_identity: (n_kept > 0).then(|| n_all as f64 / n_kept as f64),
        });
    }
    if n_b > 0 && n_g > 0 && sum_b > 0.0 {
        out.mean_grad_ratio = Some((sum_g / n_g as f64) / (sum_b / n_b as f64));
    }
    Ok(out)
}

fn mean_reward(batch: &[&GroupRecord]) -> Option<f64> {
    let r: Vec<f64> = batch.iter().flat_map(|g| g.rewards.iter().copied()).collect();
    (!r.is_empty()).then(|| mean(&r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier3Config {
    pub iterations: usize,
    pub prompts_per_iter: usize,
    pub eval_every: usize,
    pub heldout: usize,
    pub train_pool: usize,
    pub seeds: Vec<u64>,
}

impl Default for Tier3Config {
    fn default() -> Self {
        Tier3Config {
            iterations: 60,
            prompts_per_iter: 10,
            eval_every: 10,
            heldout: 50,
            train_pool: 500,
            seeds: vec![7, 13, 23, 42],
        }
    }
}

/// Training and held-out task instances; instance ids never overlap.
pub fn task_pools(cfg: &TrainConfig, t3: &Tier3Config) -> (Vec<SearchWorld>, Vec<SearchWorld>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.prior_seed ^ 0x7A5C);
    let mut draw = |id: u64| {
        let task = TaskType::ALL[rng.gen_range(0..TaskType::ALL.len())];
        SearchWorld::sample(task, cfg.n_locations, id, &mut rng)
    };
    let train: Vec<SearchWorld> = (0..t3.train_pool as u64).map(&mut draw).collect();
    let heldout: Vec<SearchWorld> = (0..t3.heldout as u64).map(|i| draw(1_000_000 + i)).collect();
    (train, heldout)
}

pub fn heldout_success(policy: &TabularPolicy, heldout: &[SearchWorld], cfg: &TrainConfig, seed: u64) -> f64 {
    let eval = policy.with_temperature(cfg.eval_temperature);
    let wins: f64 =
        heldout.iter().enumerate().map(|(i, w)| run_episode(w, &eval, cfg.t_max, derive_seed(seed, i as u64)).reward).sum();
    wins / heldout.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub mean_grad_l2: [f64; 2],
    pub mean_zero_fraction: [f64; 2],
    pub measured_ratio: f64,
    pub predicted_ratio: f64,
    pub heldout_initial: [f64; 2],
    pub heldout_final: [f64; 2],
    pub cumulative_step_tokens: [usize; 2],
    pub total_cuts: usize,
    pub skipped_updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier3Result {
    pub telemetry: Vec<TrainTelemetry>,
    pub per_seed: Vec<SeedSummary>,
    /// Pooled over seeds and iterations; index 0 baseline, 1 gated.
    pub mean_grad_l2: [f64; 2],
    pub mean_zero_fraction: [f64; 2],
    pub measured_ratio: f64,
    pub predicted_ratio: f64,
}

impl Tier3Result {
    pub fn ratio_relative_error(&self) -> f64 {
        (self.measured_ratio - self.predicted_ratio).abs() / self.predicted_ratio
    }
}

struct ArmState {
    policy: TabularPolicy,
    cumulative: usize,
}

/// Online training, baseline and gated arms in lockstep for each seed.
/// Both arms see the same prompts and group seeds; cut groups are dropped
/// from the gated batch without drawing a replacement prompt.
pub fn run_tier3(cfg: &TrainConfig, t3: &Tier3Config) -> Result<Tier3Result> {
    cfg.gate.validate(cfg.t_max)?;
    if t3.prompts_per_iter == 0 || t3.train_pool < t3.prompts_per_iter {
        return Err(Error::InvalidConfig { field: "prompts_per_iter".into(), reason: "must be in 1..=train_pool".into() });
    }
    let (train, heldout) = task_pools(cfg, t3);
    let runs: Vec<(Vec<TrainTelemetry>, SeedSummary)> =
        t3.seeds.par_iter().map(|&seed| run_tier3_seed(cfg, t3, &train, &heldout, seed)).collect::<Result<_>>()?;

    let mut telemetry = vec![];
    let mut per_seed = vec![];
    for (t, s) in runs {
        telemetry.extend(t);
        per_seed.push(s);
    }
    let pooled = |arm: Arm, f: fn(&TrainTelemetry) -> Option<f64>| {
        let v: Vec<f64> = telemetry.iter().filter(|t| t.arm == arm).filter_map(f).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            mean(&v)
        }
    };
    let mean_grad_l2 = [pooled(Arm::Baseline, |t| t.gradient_l2), pooled(Arm::Gated, |t| t.gradient_l2)];
    let mean_zero_fraction =
        [pooled(Arm::Baseline, |t| t.zero_advantage_item_fraction), pooled(Arm::Gated, |t| t.zero_advantage_item_fraction)];
    let predicted_ratio = dilution_ratio(mean_zero_fraction[0], mean_zero_fraction[1])?;
    Ok(Tier3Result {
        telemetry,
        per_seed,
        mean_grad_l2,
        mean_zero_fraction,
        measured_ratio: mean_grad_l2[1] / mean_grad_l2[0],
        predicted_ratio,
    })
}

fn run_tier3_seed(
    cfg: &TrainConfig,
    t3: &Tier3Config,
    train: &[SearchWorld],
    heldout: &[SearchWorld],
    seed: u64,
) -> Result<(Vec<TrainTelemetry>, SeedSummary)> {
    let init = cfg.initial_policy();
    let mut arms = [ArmState { policy: init.clone(), cumulative: 0 }, ArmState { policy: init, cumulative: 0 }];
    let mut telemetry = Vec::with_capacity(2 * t3.iterations);
    let eval_seed = derive_seed(seed, u64::MAX);
    let mut heldout_initial = [0.0; 2];
    let mut heldout_final = [0.0; 2];
    let mut total_cuts = 0;
    let mut skipped = 0;

    for iter in 0..t3.iterations {
        let iter_seed = derive_seed(seed, iter as u64);
        let mut prompt_rng = ChaCha8Rng::seed_from_u64(iter_seed);
        let prompts: Vec<usize> = sample(&mut prompt_rng, train.len(), t3.prompts_per_iter).into_vec();
        let evaluate = iter % t3.eval_every.max(1) == 0;

        let baseline_groups: Vec<GroupRecord> = prompts
            .par_iter()
            .enumerate()
            .map(|(j, &p)| rollout_group(&train[p], &arms[0].policy, cfg.g, cfg.t_max, derive_seed(iter_seed, j as u64)))
            .collect::<Result<_>>()?;
        let gated_groups: Vec<GroupRecord> = prompts
            .par_iter()
            .enumerate()
            .map(|(j, &p)| {
                supervised_rollout(&train[p], &arms[1].policy, cfg.g, cfg.t_max, derive_seed(iter_seed, j as u64), &cfg.gate)
            })
            .collect::<Result<_>>()?;
        let zv = baseline_groups.iter().filter(|g| g.is_zero_variance()).count();

        for (j, groups) in [baseline_groups, gated_groups].into_iter().enumerate() {
            let arm = if j == 0 { Arm::Baseline } else { Arm::Gated };
            let heldout_now = evaluate.then(|| heldout_success(&arms[j].policy, heldout, cfg, eval_seed));
            if iter == 0 {
                heldout_initial[j] = heldout_now.unwrap_or(0.0);
            }
            let tokens: usize = groups.iter().map(step_tokens).sum();
            let kept: Vec<&GroupRecord> = groups.iter().filter(|g| !g.is_cut()).collect();
            let cut = groups.len() - kept.len();
            if arm == Arm::Gated {
                total_cuts += cut;
            }
            let stats = grpo_step(&kept, &mut arms[j].policy, cfg.learning_rate, cfg.epsilon)?;
            if stats.is_none() {
                skipped += 1;
            }
            arms[j].cumulative += tokens;
            telemetry.push(TrainTelemetry {
                tier: 3,
                arm,
                seed,
                iteration: iter,
                n_groups: kept.len(),
                cut_count: cut,
                zero_variance_count: zv,
                train_items: train_items(&kept),
                zero_advantage_item_fraction: stats.map(|s| s.zero_fraction),
                gradient_l2: stats.map(|s| s.gradient_l2),
                loss: stats.map(|s| s.loss),
                mean_train_reward_over_uncut: mean_reward(&kept),
                heldout_success: heldout_now,
                step_tokens: tokens,
                cumulative_step_tokens: arms[j].cumulative,
                skipped: stats.is_none(),
                config_hash: None,
            });
        }
    }
    for (j, arm) in arms.iter().enumerate() {
        heldout_final[j] = heldout_success(&arm.policy, heldout, cfg, eval_seed);
    }

    let arm_mean = |arm: Arm, f: fn(&TrainTelemetry) -> Option<f64>| {
        let v: Vec<f64> = telemetry.iter().filter(|t| t.arm == arm).filter_map(f).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            mean(&v)
        }
    };
    let mean_grad_l2 = [arm_mean(Arm::Baseline, |t| t.gradient_l2), arm_mean(Arm::Gated, |t| t.gradient_l2)];
    let mean_zero_fraction =
        [arm_mean(Arm::Baseline, |t| t.zero_advantage_item_fraction), arm_mean(Arm::Gated, |t| t.zero_advantage_item_fraction)];
    let summary = SeedSummary {
        seed,
        mean_grad_l2,
        mean_zero_fraction,
        measured_ratio: mean_grad_l2[1] / mean_grad_l2[0],
        predicted_ratio: dilution_ratio(mean_zero_fraction[0], mean_zero_fraction[1]).unwrap_or(f64::NAN),
        heldout_initial,
        heldout_final,
        cumulative_step_tokens: [arms[0].cumulative, arms[1].cumulative],
        total_cuts,
        skipped_updates: skipped,
    };
    Ok((telemetry, summary))
}
