//! Synthetic multi-turn search environment, group rollout, and the rollout
//! supervisor that applies the gate mid-rollout.
//!
//! The world is a room of `n_locations` receptacles. An object sits in one
//! of them (`target_location`) and must be carried to `goal_location`:
//! go to a receptacle, open it, take the object if it is there, go to the
//! goal, put it down. Reward is 1 on the successful put and 0 if the
//! horizon runs out.
//!
//! Randomness: every group has one seed. Stream 0 of a ChaCha generator on
//! that seed drives the group-level plan, stream `i + 1` drives trajectory
//! `i`, and a separate stream picks the task. Cutting one group therefore
//! never shifts the random numbers seen by another group or by a sibling
//! trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{self, signals_at};
use crate::error::{Error, Result};
use crate::gate::{GateDecision, GateRule};
use crate::stats::{auroc, bootstrap_ci, BootstrapResult};
use crate::types::{step_tokens, ActionToken, GroupRecord, ObservationId, TaskType, TrajectoryRecord};

pub const DEFAULT_LOCATIONS: usize = 12;

/// Corpus share of each task type, in `TaskType::ALL` order.
pub const TASK_TYPE_WEIGHTS: [f64; 6] = [24.0, 20.0, 18.0, 11.0, 19.0, 8.0];

const TASK_STREAM: u64 = 1 << 40;
const PLAN_STREAM: u64 = 0;

/// SplitMix64 step; used to derive independent per-item seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Goto(usize),
    Open,
    Take,
    Put,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchWorld {
    pub n_locations: usize,
    /// Receptacle holding the object.
    pub target_location: usize,
    pub goal_location: usize,
    pub task_type: TaskType,
    /// Length of the forced shared prefix in false-positive mode; 0 otherwise.
    pub decoy_prefix_length: usize,
    pub instance: u64,
}

/// Where objects of a task type tend to be, and where they go.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskProfile {
    pub goal: usize,
    pub object_weights: Vec<f64>,
}

impl TaskProfile {
    pub fn for_type(task_type: TaskType, n_locations: usize) -> Self {
        let idx = task_type.index();
        let goal = (n_locations - 1 - idx % n_locations) % n_locations;
        let mut object_weights = vec![0.0; n_locations];
        let shares = [0.4, 0.3, 0.2, 0.1];
        let used = &shares[..shares.len().min(n_locations - 1)];
        let total: f64 = used.iter().sum();
        let mut loc = (idx * 2) % n_locations;
        for share in used.iter().map(|s| s / total) {
            while loc == goal || object_weights[loc] > 0.0 {
                loc = (loc + 1) % n_locations;
            }
            object_weights[loc] = share;
            loc = (loc + 3) % n_locations;
        }
        TaskProfile { goal, object_weights }
    }
}

impl SearchWorld {
    pub fn new(n_locations: usize, target_location: usize, goal_location: usize, task_type: TaskType) -> Result<Self> {
        if n_locations < 2 {
            return Err(Error::InvalidConfig { field: "n_locations".into(), reason: "need at least 2".into() });
        }
        if target_location >= n_locations || goal_location >= n_locations {
            return Err(Error::InvalidConfig {
                field: "target_location".into(),
                reason: format!("locations must be < {n_locations}"),
            });
        }
        if target_location == goal_location {
            return Err(Error::InvalidConfig {
                field: "target_location".into(),
                reason: "object cannot start at the goal".into(),
            });
        }
        Ok(SearchWorld { n_locations, target_location, goal_location, task_type, decoy_prefix_length: 0, instance: 0 })
    }

    /// Draws an instance of `task_type` from its profile.
    pub fn sample(task_type: TaskType, n_locations: usize, instance: u64, rng: &mut impl Rng) -> Self {
        let profile = TaskProfile::for_type(task_type, n_locations);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut target = 0;
        for (i, w) in profile.object_weights.iter().enumerate() {
            acc += w;
            target = i;
            if *w > 0.0 && u < acc {
                break;
            }
        }
        while target == profile.goal || profile.object_weights[target] == 0.0 {
            target = (target + 1) % n_locations;
        }
        SearchWorld {
            n_locations,
            target_location: target,
            goal_location: profile.goal,
            task_type,
            decoy_prefix_length: 0,
            instance,
        }
    }

    pub fn with_decoy(mut self, length: usize) -> Self {
        self.decoy_prefix_length = length;
        self
    }

    pub fn prompt_id(&self) -> String {
        format!("{}-{:06}", self.task_type, self.instance)
    }

    pub fn vocab_size(&self) -> usize {
        self.n_locations + 3
    }

    pub fn encode(&self, action: Action) -> ActionToken {
        let n = self.n_locations as u16;
        ActionToken(match action {
            Action::Goto(l) => l as u16,
            Action::Open => n,
            Action::Take => n + 1,
            Action::Put => n + 2,
        })
    }

    pub fn decode(&self, token: ActionToken) -> Action {
        let n = self.n_locations as u16;
        match token.0 {
            t if t < n => Action::Goto(t as usize),
            t if t == n => Action::Open,
            t if t == n + 1 => Action::Take,
            _ => Action::Put,
        }
    }

    /// Number of distinct observation ids, including the success marker.
    pub fn n_observations(&self) -> usize {
        (self.n_locations + 1) * 6 + 1
    }

    pub fn success_observation(&self) -> ObservationId {
        ObservationId(((self.n_locations + 1) * 6) as u32)
    }
}

/// Agent-visible state of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EnvState {
    pub location: Option<usize>,
    pub opened: bool,
    pub holding: bool,
    pub succeeded: bool,
}

impl EnvState {
    /// The open receptacle at the current location still holds the object.
    pub fn sees_object(&self, world: &SearchWorld) -> bool {
        self.opened && !self.holding && self.location == Some(world.target_location)
    }

    pub fn observation(&self, world: &SearchWorld) -> ObservationId {
        if self.succeeded {
            return world.success_observation();
        }
        let loc = self.location.unwrap_or(world.n_locations);
        let container = match (self.opened, self.sees_object(world)) {
            (false, _) => 0,
            (true, false) => 1,
            (true, true) => 2,
        };
        ObservationId(((loc * 2 + usize::from(self.holding)) * 3 + container) as u32)
    }

    pub fn step(&mut self, world: &SearchWorld, token: ActionToken) -> ObservationId {
        match world.decode(token) {
            Action::Goto(l) => {
                self.location = Some(l);
                self.opened = false;
            }
            Action::Open => {
                if matches!(self.location, Some(l) if l != world.goal_location) {
                    self.opened = true;
                }
            }
            Action::Take => {
                if self.sees_object(world) {
                    self.holding = true;
                }
            }
            Action::Put => {
                if self.holding && self.location == Some(world.goal_location) {
                    self.holding = false;
                    self.succeeded = true;
                }
            }
        }
        self.observation(world)
    }
}

/// What a policy sees before choosing the action for step `step` (1-based).
#[derive(Debug, Clone, Copy)]
pub struct EnvView {
    pub step: usize,
    pub state: EnvState,
    pub last_observation: Option<ObservationId>,
}

/// A sampler of actions for the trajectories of a group.
pub trait RolloutPolicy: Sync {
    type GroupPlan: Sync;
    type TrajectoryState: Send;

    fn plan_group(&self, world: &SearchWorld, rng: &mut ChaCha8Rng) -> Self::GroupPlan;

    fn init_trajectory(&self, world: &SearchWorld, plan: &Self::GroupPlan, rng: &mut ChaCha8Rng) -> Self::TrajectoryState;

    fn next_action(
        &self,
        world: &SearchWorld,
        plan: &Self::GroupPlan,
        state: &mut Self::TrajectoryState,
        view: &EnvView,
        rng: &mut ChaCha8Rng,
    ) -> ActionToken;
}

/// The scripted searcher: go through a list of receptacles in order,
/// open each, take the object when seen, deliver it.
fn scripted_action(world: &SearchWorld, list: &[usize], cursor: &mut usize, s: &EnvState) -> ActionToken {
    let action = if s.holding {
        if s.location == Some(world.goal_location) {
            Action::Put
        } else {
            Action::Goto(world.goal_location)
        }
    } else if s.sees_object(world) {
        Action::Take
    } else if matches!(s.location, Some(l) if l != world.goal_location && !s.opened) {
        Action::Open
    } else {
        let l = list[*cursor % list.len()];
        *cursor += 1;
        Action::Goto(l)
    };
    world.encode(action)
}

/// A wandering search order of `len` visits (never the goal, no immediate
/// repeats). Informed orders first reach the object at a position drawn
/// from `target_pos`; uninformed ones never visit it.
fn search_list(world: &SearchWorld, len: usize, informed: bool, target_pos: (usize, usize), rng: &mut impl Rng) -> Vec<usize> {
    let others: Vec<usize> = (0..world.n_locations).filter(|&l| l != world.goal_location && l != world.target_location).collect();
    let len = len.max(1);
    let mut list: Vec<usize> = Vec::with_capacity(len);
    while list.len() < len {
        let l = others[rng.gen_range(0..others.len())];
        if list.last() != Some(&l) || others.len() == 1 {
            list.push(l);
        }
    }
    if informed {
        let hi = target_pos.1.min(len - 1);
        let lo = target_pos.0.min(hi);
        let pos = rng.gen_range(lo..=hi);
        list[pos] = world.target_location;
    }
    list
}

/// Stochastic stand-in for an LLM policy with controllable in-group
/// convergence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPolicy {
    /// Probability that a trajectory follows the group's shared search order
    /// instead of drawing its own.
    pub commitment: f64,
    /// Probability that a search order contains the object.
    pub skill: f64,
    /// Per-step probability of emitting a uniformly random action.
    pub slip: f64,
    pub min_list: usize,
    pub max_list: usize,
    /// Earliest position of the object in an informed search order.
    pub earliest_target: usize,
}

impl SyntheticPolicy {
    pub fn new(commitment: f64, skill: f64) -> Result<Self> {
        for (name, v) in [("commitment", commitment), ("skill", skill)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig { field: name.into(), reason: format!("{v} not in [0, 1]") });
            }
        }
        Ok(SyntheticPolicy { commitment, skill, slip: 0.0, min_list: 4, max_list: 14, earliest_target: 3 })
    }

    pub fn with_slip(mut self, slip: f64) -> Self {
        self.slip = slip;
        self
    }

    pub fn with_list_range(mut self, min: usize, max: usize) -> Self {
        self.min_list = min.max(1);
        self.max_list = max.max(self.min_list);
        self
    }

    fn draw_list(&self, world: &SearchWorld, rng: &mut impl Rng) -> Vec<usize> {
        let informed = rng.gen_bool(self.skill);
        let len = rng.gen_range(self.min_list..=self.max_list);
        search_list(world, len, informed, (self.earliest_target, usize::MAX), rng)
    }
}

#[derive(Debug, Clone)]
pub struct ScriptState {
    list: Vec<usize>,
    cursor: usize,
}

impl RolloutPolicy for SyntheticPolicy {
    type GroupPlan = Vec<usize>;
    type TrajectoryState = ScriptState;

    fn plan_group(&self, world: &SearchWorld, rng: &mut ChaCha8Rng) -> Vec<usize> {
        self.draw_list(world, rng)
    }

    fn init_trajectory(&self, world: &SearchWorld, plan: &Vec<usize>, rng: &mut ChaCha8Rng) -> ScriptState {
        let list = if rng.gen_bool(self.commitment) { plan.clone() } else { self.draw_list(world, rng) };
        ScriptState { list, cursor: 0 }
    }

    fn next_action(
        &self,
        world: &SearchWorld,
        _plan: &Vec<usize>,
        state: &mut ScriptState,
        view: &EnvView,
        rng: &mut ChaCha8Rng,
    ) -> ActionToken {
        if rng.gen_bool(self.slip) {
            return ActionToken(rng.gen_range(0..world.vocab_size()) as u16);
        }
        scripted_action(world, &state.list, &mut state.cursor, &view.state)
    }
}

/// False-positive mode: every trajectory replays the same receptacle-by-
/// receptacle prefix (which never contains the object), then continues
/// alone with an order that contains the object with probability
/// `post_success_prob`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyPolicy {
    pub post_success_prob: f64,
}

#[derive(Debug, Clone)]
pub struct DecoyPlan {
    prefix: Vec<ActionToken>,
}

impl RolloutPolicy for DecoyPolicy {
    type GroupPlan = DecoyPlan;
    type TrajectoryState = ScriptState;

    fn plan_group(&self, world: &SearchWorld, rng: &mut ChaCha8Rng) -> DecoyPlan {
        let visits = search_list(world, world.decoy_prefix_length.div_ceil(2), false, (0, 0), rng);
        let mut prefix = Vec::with_capacity(world.decoy_prefix_length);
        for &l in visits.iter().cycle() {
            if prefix.len() >= world.decoy_prefix_length {
                break;
            }
            prefix.push(world.encode(Action::Goto(l)));
            prefix.push(world.encode(Action::Open));
        }
        prefix.truncate(world.decoy_prefix_length);
        DecoyPlan { prefix }
    }

    fn init_trajectory(&self, world: &SearchWorld, _plan: &DecoyPlan, rng: &mut ChaCha8Rng) -> ScriptState {
        let informed = rng.gen_bool(self.post_success_prob);
        let len = rng.gen_range(3..=6);
        // the object sits early enough in the order to be delivered in time
        ScriptState { list: search_list(world, len, informed, (0, 3), rng), cursor: 0 }
    }

    fn next_action(
        &self,
        world: &SearchWorld,
        plan: &DecoyPlan,
        state: &mut ScriptState,
        view: &EnvView,
        _rng: &mut ChaCha8Rng,
    ) -> ActionToken {
        match plan.prefix.get(view.step - 1) {
            Some(&t) => t,
            None => scripted_action(world, &state.list, &mut state.cursor, &view.state),
        }
    }
}

/// Gate enforcement inside the rollout loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateSupervisorConfig {
    pub enabled: bool,
    #[serde(rename = "K")]
    pub k: usize,
    pub d_l: f64,
    pub tau_h: Option<f64>,
}

impl GateSupervisorConfig {
    pub fn new(k: usize, d_l: f64) -> Self {
        GateSupervisorConfig { enabled: true, k, d_l, tau_h: None }
    }

    pub fn disabled() -> Self {
        GateSupervisorConfig { enabled: false, k: 10, d_l: 0.12, tau_h: None }
    }

    pub fn rule(&self) -> GateRule {
        match self.tau_h {
            Some(tau_h) => GateRule::OrRule { d_l: self.d_l, tau_h },
            None => GateRule::SingleAxis { d_l: self.d_l },
        }
    }

    pub fn validate(&self, t_max: usize) -> Result<()> {
        if self.enabled && !(1 <= self.k && self.k < t_max) {
            return Err(Error::InvalidConfig { field: "K".into(), reason: format!("need 1 <= K < T_max = {t_max}") });
        }
        if !(0.0..=1.0).contains(&self.d_l) {
            return Err(Error::InvalidConfig { field: "d_L".into(), reason: format!("{} not in [0, 1]", self.d_l) });
        }
        Ok(())
    }
}

struct Running<S> {
    record: TrajectoryRecord,
    env: EnvState,
    state: S,
    rng: ChaCha8Rng,
}

/// Rolls out a group step by step, in lockstep, pausing after step `K` to
/// apply the gate when `gate` is enabled.
pub fn supervised_rollout<P: RolloutPolicy>(
    world: &SearchWorld,
    policy: &P,
    g: usize,
    t_max: usize,
    seed: u64,
    gate: &GateSupervisorConfig,
) -> Result<GroupRecord> {
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    if t_max == 0 {
        return Err(Error::InvalidConfig { field: "T_max".into(), reason: "must be positive".into() });
    }
    gate.validate(t_max)?;
    let plan = policy.plan_group(world, &mut stream_rng(seed, PLAN_STREAM));
    let mut running: Vec<Running<P::TrajectoryState>> = (0..g)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64 + 1);
            let state = policy.init_trajectory(world, &plan, &mut rng);
            Running {
                record: TrajectoryRecord {
                    actions: Vec::with_capacity(t_max),
                    observations: Vec::with_capacity(t_max),
                    terminated_at: None,
                    reward: 0.0,
                    steps_emitted: 0,
                    is_cut: false,
                },
                env: EnvState::default(),
                state,
                rng,
            }
        })
        .collect();

    let mut decision: Option<GateDecision> = None;
    let mut gate_signals = None;
    for step in 1..=t_max {
        for tr in running.iter_mut().filter(|t| t.record.terminated_at.is_none()) {
            let view = EnvView { step, state: tr.env, last_observation: tr.record.observations.last().copied() };
            let token = policy.next_action(world, &plan, &mut tr.state, &view, &mut tr.rng);
            let obs = tr.env.step(world, token);
            tr.record.actions.push(token);
            tr.record.observations.push(obs);
            tr.record.steps_emitted += 1;
            if tr.env.succeeded {
                tr.record.reward = 1.0;
                tr.record.terminated_at = Some(step);
            }
        }
        if gate.enabled && step == gate.k {
            let partial: Vec<TrajectoryRecord> = running.iter().map(|t| t.record.clone()).collect();
            let signals = signals_at(&partial, gate.k)?;
            let d = gate.rule().decide(&signals);
            let cut = d.cut;
            decision = Some(d);
            gate_signals = Some(signals);
            if cut {
                for tr in running.iter_mut().filter(|t| t.record.terminated_at.is_none()) {
                    tr.record.terminated_at = Some(step);
                    tr.record.is_cut = true;
                }
                break;
            }
        }
        if running.iter().all(|t| t.record.terminated_at.is_some()) {
            break;
        }
    }

    let mut group = GroupRecord::new(world.prompt_id(), world.task_type, t_max, running.into_iter().map(|t| t.record).collect())?;
    if let Some(s) = gate_signals {
        group.divergence.insert(gate.k, s);
    }
    group.gate = decision;
    group.seed = Some(seed);
    Ok(group)
}

/// One trajectory on its own; seeded the same way as trajectory 0 of a group.
pub fn run_episode<P: RolloutPolicy>(world: &SearchWorld, policy: &P, t_max: usize, seed: u64) -> TrajectoryRecord {
    let plan = policy.plan_group(world, &mut stream_rng(seed, PLAN_STREAM));
    let mut rng = stream_rng(seed, 1);
    let mut state = policy.init_trajectory(world, &plan, &mut rng);
    let mut env = EnvState::default();
    let mut record = TrajectoryRecord {
        actions: Vec::with_capacity(t_max),
        observations: Vec::with_capacity(t_max),
        terminated_at: None,
        reward: 0.0,
        steps_emitted: 0,
        is_cut: false,
    };
    for step in 1..=t_max {
        let view = EnvView { step, state: env, last_observation: record.observations.last().copied() };
        let token = policy.next_action(world, &plan, &mut state, &view, &mut rng);
        record.observations.push(env.step(world, token));
        record.actions.push(token);
        record.steps_emitted += 1;
        if env.succeeded {
            record.reward = 1.0;
            record.terminated_at = Some(step);
            break;
        }
    }
    record
}

/// Ungated group rollout.
pub fn rollout_group<P: RolloutPolicy>(
    world: &SearchWorld,
    policy: &P,
    g: usize,
    t_max: usize,
    seed: u64,
) -> Result<GroupRecord> {
    supervised_rollout(world, policy, g, t_max, seed, &GateSupervisorConfig::disabled())
}

/// A group reproducing the false-positive failure mode: a forced identical
/// prefix of `world.decoy_prefix_length` steps, then independent branches
/// that succeed with probability `post_success_prob` each.
pub fn make_fp_mode_group(
    world: &SearchWorld,
    g: usize,
    t_max: usize,
    post_success_prob: f64,
    seed: u64,
    gate: &GateSupervisorConfig,
) -> Result<GroupRecord> {
    if world.decoy_prefix_length == 0 {
        return Err(Error::InvalidConfig { field: "decoy_prefix_length".into(), reason: "must be positive".into() });
    }
    // object at position <= 3 of a fresh order needs 9 more steps
    if world.decoy_prefix_length + 9 > t_max {
        return Err(Error::InvalidConfig {
            field: "decoy_prefix_length".into(),
            reason: format!("leaves too few steps before T_max = {t_max}"),
        });
    }
    if gate.enabled && world.decoy_prefix_length < gate.k {
        return Err(Error::InvalidConfig {
            field: "decoy_prefix_length".into(),
            reason: format!("must be at least K = {}", gate.k),
        });
    }
    supervised_rollout(world, &DecoyPolicy { post_success_prob }, g, t_max, seed, gate)
}

/// A weighted mixture of synthetic policies; each group draws one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMixture {
    pub components: Vec<(f64, SyntheticPolicy)>,
}

fn wanderer(commitment: f64, skill: f64, slip: f64) -> SyntheticPolicy {
    SyntheticPolicy { commitment, skill, slip, min_list: 9, max_list: 14, earliest_target: 6 }
}

impl PolicyMixture {
    /// Mixture tuned so a corpus lands near 25 all-fail / 61 mixed /
    /// 14 all-succeed groups per hundred, with a low-divergence
    /// sub-population in both zero-variance classes.
    pub fn calibrated() -> Self {
        PolicyMixture {
            components: vec![
                // committed groups: converge on one order, succeed or loop together
                (0.32, wanderer(0.97, 0.5, 0.002)),
                // exploring groups: mostly independent orders, mixed outcomes
                (0.52, wanderer(0.25, 0.45, 0.03)),
                // lost groups: divergent and rarely informed
                (0.16, wanderer(0.25, 0.03, 0.03)),
            ],
        }
    }

    pub fn single(policy: SyntheticPolicy) -> Self {
        PolicyMixture { components: vec![(1.0, policy)] }
    }

    fn pick(&self, rng: &mut impl Rng) -> &SyntheticPolicy {
        let total: f64 = self.components.iter().map(|(w, _)| w).sum();
        let mut u = rng.gen::<f64>() * total;
        for (w, p) in &self.components {
            if u < *w {
                return p;
            }
            u -= w;
        }
        &self.components.last().expect("non-empty mixture").1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_groups: usize,
    pub g: usize,
    pub t_max: usize,
    pub seed: u64,
    pub n_locations: usize,
    pub mixture: PolicyMixture,
    /// Share of groups generated in false-positive mode.
    pub fp_fraction: f64,
    pub fp_prefix_length: usize,
    pub fp_success_prob: f64,
}

impl CorpusSpec {
    pub fn calibrated(n_groups: usize, seed: u64) -> Self {
        CorpusSpec {
            n_groups,
            g: 8,
            t_max: 30,
            seed,
            n_locations: DEFAULT_LOCATIONS,
            mixture: PolicyMixture::calibrated(),
            fp_fraction: 0.015,
            fp_prefix_length: 12,
            fp_success_prob: 0.5,
        }
    }
}

fn pick_task_type(rng: &mut impl Rng) -> TaskType {
    let total: f64 = TASK_TYPE_WEIGHTS.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (w, t) in TASK_TYPE_WEIGHTS.iter().zip(TaskType::ALL) {
        if u < *w {
            return t;
        }
        u -= w;
    }
    TaskType::LookAtObj
}

/// Rolls out group `index` of a corpus.
pub fn corpus_group(spec: &CorpusSpec, index: usize, gate: &GateSupervisorConfig) -> Result<GroupRecord> {
    let seed = derive_seed(spec.seed, index as u64);
    let mut task_rng = stream_rng(seed, TASK_STREAM);
    let fp_mode = task_rng.gen_bool(spec.fp_fraction.clamp(0.0, 1.0));
    let task_type = if fp_mode { TaskType::PickAndPlaceSimple } else { pick_task_type(&mut task_rng) };
    let world = SearchWorld::sample(task_type, spec.n_locations, index as u64, &mut task_rng);
    if fp_mode {
        let world = world.with_decoy(spec.fp_prefix_length);
        make_fp_mode_group(&world, spec.g, spec.t_max, spec.fp_success_prob, seed, gate)
    } else {
        let policy = spec.mixture.pick(&mut task_rng);
        supervised_rollout(&world, policy, spec.g, spec.t_max, seed, gate)
    }
}

/// A whole corpus; groups are independent and rolled out in parallel.
pub fn generate_corpus(spec: &CorpusSpec, gate: &GateSupervisorConfig) -> Result<Vec<GroupRecord>> {
    (0..spec.n_groups).into_par_iter().map(|i| corpus_group(spec, i, gate)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbTestSummary {
    pub n_groups: usize,
    pub baseline_step_tokens: usize,
    pub gated_step_tokens: usize,
    pub saving_pct: f64,
    pub cuts: usize,
    pub true_positive_cuts: usize,
    pub precision: Option<f64>,
    pub zero_variance_groups: usize,
    /// AUROC of `d_K` (baseline arm) for the non-zero-variance class.
    pub d_k_auroc: Option<f64>,
    pub saving_ci: BootstrapResult,
}

pub struct AbTest {
    pub baseline: Vec<GroupRecord>,
    pub gated: Vec<GroupRecord>,
    pub summary: AbTestSummary,
}

/// Paired-seed rollout A/B: the same corpus twice, without and with the
/// gate. The baseline arm provides each cut group's counterfactual label.
pub fn ab_test(spec: &CorpusSpec, gate: &GateSupervisorConfig, bootstrap_b: usize, level: f64) -> Result<AbTest> {
    let mut baseline = generate_corpus(spec, &GateSupervisorConfig::disabled())?;
    let mut gated = generate_corpus(spec, gate)?;
    for (b, g) in baseline.iter_mut().zip(gated.iter_mut()) {
        divergence::annotate(b, &[gate.k])?;
        if let Some(d) = g.gate.as_mut() {
            d.counterfactual_label = Some(b.label);
        }
    }
    let base_tokens: Vec<usize> = baseline.iter().map(step_tokens).collect();
    let gated_tokens: Vec<usize> = gated.iter().map(step_tokens).collect();
    let bt: usize = base_tokens.iter().sum();
    let gt: usize = gated_tokens.iter().sum();
    let cuts = gated.iter().filter(|g| g.is_cut()).count();
    let tp = gated.iter().zip(&baseline).filter(|(g, b)| g.is_cut() && b.is_zero_variance()).count();
    let d_k: Vec<f64> = baseline.iter().map(|b| b.divergence[&gate.k].d_k()).collect();
    let nonzero: Vec<bool> = baseline.iter().map(|b| !b.is_zero_variance()).collect();

    let pairs: Vec<(f64, f64)> = base_tokens.iter().zip(&gated_tokens).map(|(&b, &g)| (b as f64, g as f64)).collect();
    let saving = |s: &[(f64, f64)]| {
        let b: f64 = s.iter().map(|p| p.0).sum();
        let g: f64 = s.iter().map(|p| p.1).sum();
        (b - g) / b * 100.0
    };
    let saving_ci = bootstrap_ci(&pairs, saving, bootstrap_b, level, spec.seed)?;

    let summary = AbTestSummary {
        n_groups: spec.n_groups,
        baseline_step_tokens: bt,
        gated_step_tokens: gt,
        saving_pct: (bt - gt) as f64 / bt as f64 * 100.0,
        cuts,
        true_positive_cuts: tp,
        precision: (cuts > 0).then(|| tp as f64 / cuts as f64),
        zero_variance_groups: baseline.iter().filter(|b| b.is_zero_variance()).count(),
        d_k_auroc: auroc(&d_k, &nonzero).ok(),
        saving_ci,
    };
    Ok(AbTest { baseline, gated, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::GroupLabel;

    fn world() -> SearchWorld {
        SearchWorld::new(12, 0, 11, TaskType::PickAndPlaceSimple).unwrap()
    }

    #[test]
    fn env_pick_and_place() {
        let w = world();
        let mut s = EnvState::default();
        s.step(&w, w.encode(Action::Goto(0)));
        assert!(!s.sees_object(&w));
        s.step(&w, w.encode(Action::Open));
        assert!(s.sees_object(&w));
        s.step(&w, w.encode(Action::Take));
        assert!(s.holding);
        s.step(&w, w.encode(Action::Put));
        assert!(!s.succeeded, "put away from the goal is a no-op");
        s.step(&w, w.encode(Action::Goto(11)));
        let o = s.step(&w, w.encode(Action::Put));
        assert!(s.succeeded);
        assert_eq!(o, w.success_observation());
    }

    #[test]
    fn observation_ids_are_in_range() {
        let w = world();
        let mut s = EnvState::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let t = ActionToken(rng.gen_range(0..w.vocab_size()) as u16);
            let o = s.step(&w, t);
            assert!((o.0 as usize) < w.n_observations());
        }
    }

    #[test]
    fn world_validation() {
        assert!(SearchWorld::new(12, 12, 0, TaskType::PickCool).is_err());
        assert!(SearchWorld::new(12, 3, 3, TaskType::PickCool).is_err());
    }

    #[test]
    fn sampled_worlds_follow_profile() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for tt in TaskType::ALL {
            let p = TaskProfile::for_type(tt, 12);
            assert!((p.object_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(p.object_weights[p.goal], 0.0);
            for i in 0..50 {
                let w = SearchWorld::sample(tt, 12, i, &mut rng);
                assert!(w.target_location < w.n_locations);
                assert!(p.object_weights[w.target_location] > 0.0);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let p = SyntheticPolicy::new(0.5, 0.5).unwrap().with_slip(0.05);
        let a = rollout_group(&world(), &p, 8, 30, 77).unwrap();
        let b = rollout_group(&world(), &p, 8, 30, 77).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = rollout_group(&world(), &p, 8, 30, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fully_committed_skilled_group_succeeds_identically() {
        let p = SyntheticPolicy::new(1.0, 1.0).unwrap();
        let g = rollout_group(&world(), &p, 8, 30, 3).unwrap();
        assert_eq!(g.label, GroupLabel::AllSucceed);
        for k in 1..30 {
            assert_eq!(signals_at(&g.trajectories, k).unwrap().d_k(), 0.0);
        }
    }

    #[test]
    fn cut_group_stops_at_k() {
        let p = SyntheticPolicy::new(1.0, 0.0).unwrap();
        let gate = GateSupervisorConfig::new(10, 0.12);
        let g = supervised_rollout(&world(), &p, 8, 30, 11, &gate).unwrap();
        assert!(g.is_cut());
        assert!(g.trajectories.iter().all(|t| t.steps_emitted <= 10));
        assert!(g.trajectories.iter().all(|t| t.is_cut));
        assert_eq!(step_tokens(&g), 80);
        assert_eq!(g.gate.as_ref().unwrap().d_k, 0.0);
    }

    #[test]
    fn disabled_gate_is_a_no_op() {
        let p = SyntheticPolicy::new(0.6, 0.4).unwrap().with_slip(0.02);
        for seed in 0..20 {
            let a = rollout_group(&world(), &p, 8, 30, seed).unwrap();
            let b = supervised_rollout(&world(), &p, 8, 30, seed, &GateSupervisorConfig::disabled()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn gated_prefix_matches_baseline() {
        let p = SyntheticPolicy::new(0.9, 0.5).unwrap().with_slip(0.02);
        let gate = GateSupervisorConfig::new(10, 0.5);
        for seed in 0..30 {
            let a = rollout_group(&world(), &p, 8, 30, seed).unwrap();
            let b = supervised_rollout(&world(), &p, 8, 30, seed, &gate).unwrap();
            for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
                assert_eq!(ta.prefix(10), tb.prefix(10));
                if !b.is_cut() {
                    assert_eq!(ta.actions, tb.actions);
                }
            }
            assert!(step_tokens(&b) <= step_tokens(&a));
        }
    }

    #[test]
    fn fp_mode_prefix_is_shared() {
        let w = world().with_decoy(10);
        let gate = GateSupervisorConfig::new(10, 0.12);
        let g = make_fp_mode_group(&w, 8, 30, 0.5, 4, &GateSupervisorConfig::disabled()).unwrap();
        assert_eq!(signals_at(&g.trajectories, 10).unwrap().d_k(), 0.0);
        let cut = make_fp_mode_group(&w, 8, 30, 0.5, 4, &gate).unwrap();
        assert!(cut.is_cut());
        assert!(make_fp_mode_group(&world().with_decoy(5), 8, 30, 0.5, 4, &gate).is_err());
        assert!(make_fp_mode_group(&world(), 8, 30, 0.5, 4, &gate).is_err());
    }

    #[test]
    fn fp_mode_success_only_after_prefix() {
        let w = world().with_decoy(10);
        let gate = GateSupervisorConfig::disabled();
        for seed in 0..50 {
            let g = make_fp_mode_group(&w, 8, 30, 0.5, seed, &gate).unwrap();
            for t in &g.trajectories {
                if let Some(s) = t.terminated_at {
                    assert!(s > 10);
                }
            }
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let spec = CorpusSpec::calibrated(40, 9);
        let a = generate_corpus(&spec, &GateSupervisorConfig::disabled()).unwrap();
        let b = generate_corpus(&spec, &GateSupervisorConfig::disabled()).unwrap();
        assert_eq!(a, b);
    }
}
