//! The learning loop: roll out an episode with the partner, update the goal
//! posterior and guidance features, recompose the reward, and take PPO steps
//! on the episode relabelled with the new reward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::board::{step, ActionPair, BoardConfig, BoardState, Controller, EnvKind, Passive, Preset, Termination, Trajectory, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::features::{extract_all, FeatureConfig, FeatureField, FeatureKind, History};
use crate::grid::GoalGrid;
use crate::metrics::{DensityScale, MetricsRecord};
use crate::partner::{GeneralGoalPartner, PartnerParams};
use crate::ppo::{
    compute_gae, observation, update, AdamState, Checkpoint, Policy, PpoConfig, ReturnScaler, RolloutBatch, RolloutStep, UpdateStats,
    OBS_DIM,
};
use crate::reward::{compose, RewardConfig, RewardField, RewardMode};
use crate::smbi::{GoalField, Smbi, SmbiConfig, UpdateDiagnostics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Evl,
    Bayes,
    Fixed,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Evl, Method::Bayes, Method::Fixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Evl => "evl",
            Method::Bayes => "bayes",
            Method::Fixed => "fixed",
        }
    }

    pub fn reward_mode(self) -> RewardMode {
        match self {
            Method::Evl => RewardMode::Evl,
            Method::Bayes => RewardMode::BayesOnly,
            Method::Fixed => RewardMode::FixedExternal,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "evl" => Ok(Method::Evl),
            "bayes" => Ok(Method::Bayes),
            "fixed" => Ok(Method::Fixed),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// Deterministic child generator for one purpose of one run.
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One episode with the learner's sampled actions, rewards still unset.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub steps: Vec<RolloutStep>,
    pub raw_obs: Vec<[f64; OBS_DIM]>,
    /// Critic value of the final state.
    pub last_value: f64,
}

/// Mean update statistics over the chunks of one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnOutcome {
    pub stats: UpdateStats,
    pub chunks: usize,
    pub episode_return: f64,
    /// Set when an update hit a non-finite loss and was rolled back.
    pub error: Option<String>,
}

/// A PPO agent together with its optimizer and reward scaling state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub policy: Policy,
    pub adam: AdamState,
    pub cfg: PpoConfig,
    pub scaler: ReturnScaler,
    rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(cfg: PpoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = derive_rng(seed, 11);
        let policy = Policy::new(&cfg, &mut rng);
        Ok(Self::from_policy(policy, cfg, seed))
    }

    pub fn from_policy(policy: Policy, cfg: PpoConfig, seed: u64) -> Self {
        Self {
            adam: AdamState::new(policy.param_count()),
            scaler: ReturnScaler::new(cfg.gamma),
            policy,
            cfg,
            rng: derive_rng(seed, 12),
        }
    }

    /// Runs one episode, sampling robot actions from the policy. `stop` is
    /// checked after every step; `on_state` sees every state, the initial
    /// one included.
    pub fn rollout(
        &mut self,
        human: &mut dyn Controller,
        board: &BoardConfig,
        episode_rng: &mut ChaCha8Rng,
        stop: &mut dyn FnMut(&BoardState) -> bool,
        on_state: &mut dyn FnMut(&BoardState),
    ) -> Result<Rollout> {
        board.validate()?;
        let mut state = board.initial_state();
        on_state(&state);
        let mut records = Vec::with_capacity(board.episode_steps);
        let mut steps = Vec::with_capacity(board.episode_steps);
        let mut raw_obs = Vec::with_capacity(board.episode_steps);
        while !state.terminated.is_terminal() {
            let raw = observation(&state, board);
            let obs = self.policy.normalize(&raw);
            let out = self.policy.act(&obs, &mut self.rng);
            let h = human.act(&state, episode_rng);
            let actions = ActionPair::new(h, out.action);
            let next = step(&state, &actions, board)?;
            records.push(TrajectoryRecord {
                step: state.step_index,
                state,
                actions,
            });
            steps.push(RolloutStep {
                obs,
                action: out.action,
                log_prob: out.log_prob,
                reward: 0.0,
                value: out.value,
                done: false,
            });
            raw_obs.push(raw);
            state = next;
            if !state.terminated.is_terminal() && stop(&state) {
                state.terminated = Termination::HumanStop;
            }
            on_state(&state);
        }
        if let Some(last) = steps.last_mut() {
            last.done = state.terminated == Termination::FellOff;
        }
        let last_value = self.policy.value(&self.policy.normalize(&observation(&state, board)));
        Ok(Rollout {
            trajectory: Trajectory {
                records,
                final_state: state,
            },
            steps,
            raw_obs,
            last_value,
        })
    }

    /// Labels the episode with `field`, then runs one PPO update per
    /// horizon-sized chunk and folds the episode into the observation
    /// statistics.
    pub fn learn(&mut self, rollout: &Rollout, field: &RewardField, fall_off_penalty: f64) -> Result<LearnOutcome> {
        let mut rewards: Vec<f64> = rollout.trajectory.next_positions().map(|p| field.reward_at(p)).collect();
        if rollout.trajectory.termination() == Termination::FellOff {
            if let Some(r) = rewards.last_mut() {
                *r += fall_off_penalty;
            }
        }
        let episode_return = rewards.iter().sum();
        self.scaler.scale_episode(&mut rewards);
        let mut batch = RolloutBatch {
            steps: rollout.steps.clone(),
            last_value: rollout.last_value,
            ..RolloutBatch::default()
        };
        for (s, r) in batch.steps.iter_mut().zip(&rewards) {
            s.reward = *r;
        }
        compute_gae(&mut batch, &self.cfg);
        let mut outcome = LearnOutcome {
            episode_return,
            ..LearnOutcome::default()
        };
        if batch.len() >= self.cfg.minibatch_size {
            for chunk in batch.chunks(self.cfg.horizon, self.cfg.minibatch_size) {
                match update(&mut self.policy, &mut self.adam, &chunk, &self.cfg, &mut self.rng) {
                    Ok(s) => {
                        let st = &mut outcome.stats;
                        st.policy_loss += s.policy_loss;
                        st.value_loss += s.value_loss;
                        st.entropy += s.entropy;
                        st.clip_fraction += s.clip_fraction;
                        st.approx_kl += s.approx_kl;
                        st.minibatches += s.minibatches;
                        st.samples += s.samples;
                        outcome.chunks += 1;
                    }
                    Err(Error::Numerical(msg)) => {
                        log::warn!("PPO update rolled back: {msg}");
                        outcome.error = Some(msg);
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if outcome.chunks > 0 {
            let n = outcome.chunks as f64;
            let st = &mut outcome.stats;
            st.policy_loss /= n;
            st.value_loss /= n;
            st.entropy /= n;
            st.clip_fraction /= n;
            st.approx_kl /= n;
        }
        self.policy.obs_norm.update(&rollout.raw_obs);
        Ok(outcome)
    }
}

/// Episode loop for a robot that needs no rollout bookkeeping.
fn drive(
    human: &mut dyn Controller,
    robot: &mut dyn Controller,
    cfg: &BoardConfig,
    rng: &mut ChaCha8Rng,
    stop: &mut dyn FnMut(&BoardState) -> bool,
    on_state: &mut dyn FnMut(&BoardState),
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut state = cfg.initial_state();
    on_state(&state);
    let mut records = Vec::with_capacity(cfg.episode_steps);
    while !state.terminated.is_terminal() {
        let h = human.act(&state, rng);
        let r = robot.act(&state, rng);
        let actions = ActionPair::new(h, r);
        let next = step(&state, &actions, cfg)?;
        records.push(TrajectoryRecord {
            step: state.step_index,
            state,
            actions,
        });
        state = next;
        if !state.terminated.is_terminal() && stop(&state) {
            state.terminated = Termination::HumanStop;
        }
        on_state(&state);
    }
    Ok(Trajectory {
        records,
        final_state: state,
    })
}

/// Runs `steps` steps with the policy's deterministic action, ignoring the
/// board's own episode length.
pub fn run_deterministic(
    policy: &Policy,
    human: &mut dyn Controller,
    board: &BoardConfig,
    steps: usize,
    rng: &mut ChaCha8Rng,
    on_state: &mut dyn FnMut(&BoardState),
) -> Result<Trajectory> {
    let cfg = BoardConfig {
        episode_steps: steps,
        ..*board
    };
    let mut robot = |s: &BoardState, _: &mut ChaCha8Rng| policy.deterministic(&policy.normalize(&observation(s, board)));
    drive(human, &mut robot, &cfg, rng, &mut |_| false, on_state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub env: EnvKind,
    pub preset: Preset,
    pub method: Method,
    pub board: BoardConfig,
    pub ppo: PpoConfig,
    pub smbi: SmbiConfig,
    pub features: FeatureConfig,
    pub reward: RewardConfig,
    pub max_iterations: usize,
    /// Consecutive satisfied iterations that end the session.
    pub satisfied_streak: usize,
    /// Iterations over which specificity must stay within `plateau_tolerance`
    /// (relative spread) to count as a plateau; 0 disables the check.
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
    pub validation_seconds: f64,
    pub validation_actions: ActionMode,
    pub density_scale: DensityScale,
}

/// How the frozen policy picks actions in validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// Sampled from the Gaussian head, as during training.
    #[default]
    Sampled,
    /// The mean action.
    Mean,
}

impl SessionConfig {
    pub fn new(env: EnvKind, preset: Preset, method: Method) -> Self {
        let board = BoardConfig::for_env(env, preset);
        Self {
            env,
            preset,
            method,
            board,
            ppo: PpoConfig::for_preset(preset),
            smbi: SmbiConfig::default(),
            features: FeatureConfig {
                sample_time: board.sample_time,
                ..FeatureConfig::default()
            },
            reward: RewardConfig::with_mode(method.reward_mode()),
            max_iterations: 40,
            satisfied_streak: 3,
            plateau_window: 5,
            plateau_tolerance: 0.02,
            validation_seconds: 40.0,
            validation_actions: ActionMode::default(),
            density_scale: DensityScale::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.board.validate()?;
        self.ppo.validate()?;
        self.smbi.validate()?;
        self.features.validate()?;
        self.reward.validate()?;
        if self.reward.mode != self.method.reward_mode() {
            return Err(Error::InvalidConfig(format!(
                "reward mode {:?} does not match method {}",
                self.reward.mode, self.method
            )));
        }
        if self.max_iterations == 0 || self.satisfied_streak == 0 {
            return Err(Error::InvalidConfig("max_iterations and satisfied_streak must be at least 1".into()));
        }
        if !(self.validation_seconds > 0.0) || !(self.plateau_tolerance >= 0.0) {
            return Err(Error::InvalidConfig("validation_seconds must be positive".into()));
        }
        Ok(())
    }

    pub fn validation_steps(&self) -> usize {
        (self.validation_seconds / self.board.sample_time).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Satisfied,
    Plateau,
    Budget,
    HumanStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub metrics: MetricsRecord,
    pub steps: usize,
    pub termination: Termination,
    /// Sum of the unscaled rewards the update was computed from.
    pub episode_return: f64,
    pub update: Option<LearnOutcome>,
    pub smbi: UpdateDiagnostics,
    /// L∞ distance between the reward before and after this iteration.
    pub reward_change: f64,
    /// Grid cells visited for the first time in this iteration.
    pub new_cells: usize,
    pub reward_checksum: String,
    pub policy_checksum: String,
    pub partner_radius: Option<f64>,
    pub partner_target: Option<[f64; 2]>,
    pub satisfied: Option<bool>,
}

/// The evolving state of one learning run.
#[derive(Debug, Clone)]
pub struct Session {
    pub cfg: SessionConfig,
    pub learner: Learner,
    smbi: Smbi,
    goal: GoalField,
    history: History,
    reward: RewardField,
    visited: Vec<bool>,
    episode_rng: ChaCha8Rng,
    logs: Vec<IterationLog>,
    streak: usize,
}

impl Session {
    /// A fresh session. `Fixed` requires `initial_policy`; the others start
    /// from it when given and from a random network otherwise.
    pub fn new(cfg: SessionConfig, seed: u64, initial_policy: Option<Policy>) -> Result<Self> {
        cfg.validate()?;
        let grid = GoalGrid::for_board(&cfg.board, cfg.smbi.resolution[0], cfg.smbi.resolution[1])?;
        let smbi = Smbi::new(grid, cfg.smbi, cfg.board.episode_steps)?;
        let goal = smbi.prior();
        let history = History::new();
        let features = FeatureKind::ALL.map(|k| FeatureField::uniform(k, &grid, &cfg.features));
        let reward = compose(&goal, &features, &cfg.reward)?;
        let learner = match (initial_policy, cfg.method) {
            (Some(p), _) => Learner::from_policy(p, cfg.ppo.clone(), seed),
            (None, Method::Fixed) => {
                return Err(Error::InvalidConfig("the fixed method needs a pretrained policy".into()));
            }
            (None, _) => Learner::new(cfg.ppo.clone(), seed)?,
        };
        Ok(Self {
            visited: vec![false; grid.len()],
            smbi,
            goal,
            history,
            reward,
            learner,
            episode_rng: derive_rng(seed, 13),
            logs: Vec::new(),
            streak: 0,
            cfg,
        })
    }

    /// The reward the next episode runs under.
    pub fn reward(&self) -> &RewardField {
        &self.reward
    }

    pub fn goal(&self) -> &GoalField {
        &self.goal
    }

    pub fn logs(&self) -> &[IterationLog] {
        &self.logs
    }

    pub fn iteration(&self) -> usize {
        self.logs.len()
    }

    /// Runs one episode and the updates that follow it.
    pub fn run_iteration(
        &mut self,
        human: &mut dyn Controller,
        stop: &mut dyn FnMut(&BoardState) -> bool,
        on_state: &mut dyn FnMut(&BoardState),
    ) -> Result<IterationLog> {
        let k = self.iteration();
        let rollout = self.learner.rollout(human, &self.cfg.board, &mut self.episode_rng, stop, on_state)?;
        let traj = &rollout.trajectory;
        if traj.is_empty() {
            return Err(Error::Empty("episode"));
        }

        let mut new_cells = 0;
        for p in traj.positions() {
            let (c, _) = self.smbi.grid().cell_of(p);
            if !self.visited[c] {
                self.visited[c] = true;
                new_cells += 1;
            }
        }
        self.history.push(k, traj.clone())?;
        self.history.truncate_front(self.cfg.features.window);
        self.goal = self.smbi.update(&self.goal, traj)?;
        let features = extract_all(&self.history, self.smbi.grid(), &self.cfg.features)?;
        let mut next = compose(&self.goal, &features, &self.cfg.reward)?;
        next.iteration_index = k + 1;
        let reward_change = next.max_abs_difference(&self.reward);
        self.reward = next;

        let penalty = self.cfg.reward.fall_off_penalty();
        let update = if self.cfg.method == Method::Fixed {
            None
        } else {
            Some(self.learner.learn(&rollout, &self.reward, penalty)?)
        };
        let episode_return = match &update {
            Some(u) => u.episode_return,
            None => {
                let mut r: f64 = traj.next_positions().map(|p| self.reward.reward_at(p)).sum();
                if traj.termination() == Termination::FellOff {
                    r += penalty;
                }
                r
            }
        };
        let log = IterationLog {
            iteration: k,
            metrics: MetricsRecord::of(traj, k, self.cfg.density_scale),
            steps: traj.len(),
            termination: traj.termination(),
            episode_return,
            update,
            smbi: self.goal.diagnostics,
            reward_change,
            new_cells,
            reward_checksum: self.reward.to_dump().checksum(),
            policy_checksum: self.learner.policy.checksum(),
            partner_radius: None,
            partner_target: None,
            satisfied: None,
        };
        self.logs.push(log.clone());
        Ok(log)
    }

    /// Trajectory of the most recent iteration.
    pub fn last_trajectory(&self) -> Option<&Trajectory> {
        self.history.entries().last().and_then(|e| e.trajectories.last())
    }

    /// Records the partner's view of the last iteration and returns the
    /// updated satisfied streak.
    pub fn record_partner(&mut self, radius: f64, target: [f64; 2], satisfied: bool) -> usize {
        if let Some(log) = self.logs.last_mut() {
            log.partner_radius = Some(radius);
            log.partner_target = Some(target);
            log.satisfied = Some(satisfied);
        }
        self.streak = if satisfied { self.streak + 1 } else { 0 };
        self.streak
    }

    /// Whether the session should end after the iterations run so far.
    pub fn stop_reason(&self) -> Option<StopReason> {
        if self.streak >= self.cfg.satisfied_streak {
            return Some(StopReason::Satisfied);
        }
        let w = self.cfg.plateau_window;
        if w >= 2 && self.logs.len() >= w {
            let recent: Vec<f64> = self.logs[self.logs.len() - w..].iter().map(|l| l.metrics.specificity).collect();
            if is_plateau(&recent, self.cfg.plateau_tolerance) {
                return Some(StopReason::Plateau);
            }
        }
        if self.logs.len() >= self.cfg.max_iterations {
            return Some(StopReason::Budget);
        }
        None
    }

    /// Frozen-policy validation episode of `validation_seconds`.
    pub fn validate(&mut self, human: &mut dyn Controller, on_state: &mut dyn FnMut(&BoardState)) -> Result<(Trajectory, MetricsRecord)> {
        let steps = self.cfg.validation_steps();
        let traj = match self.cfg.validation_actions {
            ActionMode::Mean => run_deterministic(&self.learner.policy, human, &self.cfg.board, steps, &mut self.episode_rng, on_state)?,
            ActionMode::Sampled => {
                let board = BoardConfig {
                    episode_steps: steps,
                    ..self.cfg.board
                };
                let mut frozen = self.learner.clone();
                frozen.rollout(human, &board, &mut self.episode_rng, &mut |_| false, on_state)?.trajectory
            }
        };
        let m = MetricsRecord::of(&traj, self.iteration(), self.cfg.density_scale);
        Ok((traj, m))
    }
}

/// The spread of `recent` is below `tolerance` times its (positive) mean.
pub fn is_plateau(recent: &[f64], tolerance: f64) -> bool {
    if recent.is_empty() {
        return false;
    }
    let hi = recent.iter().cloned().fold(f64::MIN, f64::max);
    let lo = recent.iter().cloned().fold(f64::MAX, f64::min);
    let mean = recent.iter().sum::<f64>() / recent.len() as f64;
    mean > 0.0 && (hi - lo) < tolerance * mean
}

/// Everything one simulated run produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub env: EnvKind,
    pub seed: u64,
    pub partner_index: usize,
    pub partner: PartnerParams,
    pub iterations: Vec<IterationLog>,
    pub stop_reason: StopReason,
    pub validation: MetricsRecord,
    pub validation_trajectory: Trajectory,
    pub final_reward: RewardField,
    /// Reward snapshots taken at the requested cadence, the initial and
    /// final ones included.
    #[serde(default)]
    pub snapshots: Vec<RewardField>,
    pub final_policy_checksum: String,
    pub initial_policy_checksum: String,
}

/// A full simulated session against a general-goal partner, followed by a
/// frozen validation episode in which the partner aims at its goal centre.
/// With `snapshot_every > 0` the reward is kept every that many iterations.
pub fn run_simulated(
    cfg: &SessionConfig,
    partner_params: PartnerParams,
    partner_index: usize,
    seed: u64,
    initial_policy: Option<Policy>,
    snapshot_every: usize,
) -> Result<RunResult> {
    let mut session = Session::new(cfg.clone(), seed, initial_policy)?;
    let mut snapshots = Vec::new();
    if snapshot_every > 0 {
        snapshots.push(session.reward.clone());
    }
    let initial_policy_checksum = session.learner.policy.checksum();
    let mut partner = GeneralGoalPartner::new(partner_params, &cfg.board)?;
    let stop_reason = loop {
        let k = session.iteration();
        partner.begin_iteration(k);
        let log = session.run_iteration(&mut partner, &mut |_| false, &mut |_| {})?;
        let satisfied = log.steps > 0 && session.last_trajectory().is_some_and(|t| partner.goal_satisfied(t));
        session.record_partner(partner.radius(), partner.internal_target(), satisfied);
        let stop = session.stop_reason();
        if snapshot_every > 0 && (session.iteration() % snapshot_every == 0 || stop.is_some()) {
            snapshots.push(session.reward.clone());
        }
        if let Some(r) = stop {
            break r;
        }
    };
    partner.set_target(partner.params.goal_center);
    let (validation_trajectory, validation) = session.validate(&mut partner, &mut |_| {})?;
    Ok(RunResult {
        method: cfg.method,
        env: cfg.env,
        seed,
        partner_index,
        partner: partner_params,
        iterations: session.logs.clone(),
        stop_reason,
        validation,
        validation_trajectory,
        final_reward: session.reward.clone(),
        snapshots,
        final_policy_checksum: session.learner.policy.checksum(),
        initial_policy_checksum,
    })
}

/// Trains the baseline centre-keeper on a static Gaussian reward around the
/// ball's start position. The partner is passive and each episode starts from
/// a random position, so the keeper learns to bring the ball back from
/// anywhere on the board. Training stops after `iterations` full episodes'
/// worth of steps.
pub fn pretrain_keeper(env: EnvKind, preset: Preset, iterations: usize, seed: u64) -> Result<Checkpoint> {
    let board = BoardConfig::for_env(env, preset);
    let ppo = PpoConfig::for_preset(preset);
    let grid = GoalGrid::for_board(&board, 41, 41)?;
    let field = RewardField::gaussian_bump(grid, board.ball_start, 0.1 * board.width(), 1.0);
    let penalty = RewardConfig::default().fall_off_penalty() / RewardConfig::default().alpha;
    let mut learner = Learner::new(ppo.clone(), seed)?;
    let mut episode_rng = derive_rng(seed, 21);
    let mut starts = derive_rng(seed, 22);
    let budget = iterations * board.episode_steps;
    let mut used = 0;
    while used < budget {
        let start = BoardConfig {
            ball_start: [
                starts.random_range(-0.6..0.6) * board.half_width,
                starts.random_range(-0.6..0.6) * board.half_height,
            ],
            ..board
        };
        let rollout = learner.rollout(&mut Passive, &start, &mut episode_rng, &mut |_| false, &mut |_| {})?;
        used += rollout.trajectory.len();
        learner.learn(&rollout, &field, penalty)?;
    }
    Ok(Checkpoint {
        version: Checkpoint::VERSION,
        ppo,
        board,
        policy: learner.policy,
        note: format!("centre keeper, {env}, {iterations} iterations, seed {seed}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(env: EnvKind, method: Method, iterations: usize) -> SessionConfig {
        let mut cfg = SessionConfig::new(env, Preset::Sim, method);
        cfg.board.episode_steps = 200;
        cfg.max_iterations = iterations;
        cfg.validation_seconds = 5.0;
        cfg
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("ppo".parse::<Method>().is_err());
    }

    #[test]
    fn plateau_rule() {
        assert!(is_plateau(&[100.0, 100.5, 101.0, 100.2, 100.9], 0.02));
        assert!(!is_plateau(&[100.0, 103.0, 101.0, 100.2, 100.9], 0.02));
        assert!(!is_plateau(&[0.0; 5], 0.02));
        assert!(!is_plateau(&[], 0.02));
    }

    #[test]
    fn fixed_method_needs_and_keeps_its_policy() {
        let cfg = short(EnvKind::Env1, Method::Fixed, 3);
        assert!(Session::new(cfg.clone(), 1, None).is_err());
        let policy = Policy::new(&cfg.ppo, &mut derive_rng(5, 0));
        let partner = PartnerParams::preset(EnvKind::Env1);
        let r = run_simulated(&cfg, partner, 0, 2, Some(policy.clone()), 0).unwrap();
        assert_eq!(r.iterations.len(), 3);
        assert_eq!(r.initial_policy_checksum, policy.checksum());
        assert_eq!(r.final_policy_checksum, policy.checksum());
        assert!(r.iterations.iter().all(|l| l.policy_checksum == policy.checksum() && l.update.is_none()));
    }

    #[test]
    fn learning_methods_update_the_policy() {
        let cfg = short(EnvKind::Env1, Method::Evl, 2);
        let r = run_simulated(&cfg, PartnerParams::preset(EnvKind::Env1), 0, 3, None, 0).unwrap();
        assert_ne!(r.initial_policy_checksum, r.final_policy_checksum);
        assert!(r.iterations.iter().all(|l| l.update.as_ref().is_some_and(|u| u.chunks >= 1 && u.error.is_none())));
    }

    #[test]
    fn runs_are_deterministic() {
        for env in [EnvKind::Env1, EnvKind::Env2] {
            let cfg = short(env, Method::Evl, 3);
            let p = PartnerParams::population(env, 2, 9)[1];
            let a = run_simulated(&cfg, p, 1, 4, None, 1).unwrap();
            let b = run_simulated(&cfg, p, 1, 4, None, 1).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            let c = run_simulated(&cfg, p, 1, 5, None, 1).unwrap();
            assert_ne!(a.final_policy_checksum, c.final_policy_checksum);
        }
    }

    #[test]
    fn reward_moves_whenever_new_cells_are_visited() {
        for method in [Method::Evl, Method::Bayes] {
            let cfg = short(EnvKind::Env2, method, 6);
            let r = run_simulated(&cfg, PartnerParams::preset(EnvKind::Env2), 0, 6, None, 2).unwrap();
            assert!(r.iterations[0].new_cells > 0);
            for l in &r.iterations {
                if l.new_cells > 0 {
                    assert!(l.reward_change > 0.0, "{method} iteration {}", l.iteration);
                }
            }
            let idx: Vec<usize> = r.snapshots.iter().map(|s| s.iteration_index).collect();
            assert_eq!(idx.first(), Some(&0));
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(r.snapshots.last().unwrap(), &r.final_reward);
        }
    }

    #[test]
    fn validation_episode_has_requested_length() {
        let mut cfg = short(EnvKind::Env1, Method::Bayes, 1);
        for mode in [ActionMode::Sampled, ActionMode::Mean] {
            cfg.validation_actions = mode;
            let r = run_simulated(&cfg, PartnerParams::preset(EnvKind::Env1), 0, 7, None, 0).unwrap();
            assert_eq!(r.validation_trajectory.len(), 100);
            assert_eq!(r.stop_reason, StopReason::Budget);
        }
    }
}
