//! Fixed-timestep physics of a ball rolling on a board tilted jointly by two
//! agents.
//!
//! Both agents command a tilt *rate* per axis; the commands add, the tilt is
//! integrated and clamped, and the ball accelerates with `g·sin(tilt)` minus
//! Coulomb rolling friction. Edges either carry a wall (inelastic bounce) or are
//! open, in which case crossing them ends the episode.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which board edges carry a wall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Walls {
    /// Edge at `x = -half_width`.
    pub left: bool,
    /// Edge at `x = +half_width`.
    pub right: bool,
    /// Edge at `y = -half_height`.
    pub bottom: bool,
    /// Edge at `y = +half_height`.
    pub top: bool,
}

impl Walls {
    pub const ALL: Walls = Walls {
        left: true,
        right: true,
        bottom: true,
        top: true,
    };

    pub fn open_count(&self) -> usize {
        [self.left, self.right, self.bottom, self.top]
            .iter()
            .filter(|w| !**w)
            .count()
    }
}

/// Timing preset: the simulation column or the slower physical-rig column of
/// the hyperparameter table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Sim,
    Physical,
}

impl Preset {
    pub fn sample_time(self) -> f64 {
        match self {
            Preset::Sim => 0.05,
            Preset::Physical => 0.1,
        }
    }

    pub fn episode_steps(self) -> usize {
        match self {
            Preset::Sim => 800,
            Preset::Physical => 400,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(Preset::Sim),
            "physical" => Ok(Preset::Physical),
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }
}

/// The two task environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    /// Walled on all four sides.
    Env1,
    /// Right and top walls removed; the ball can fall off there.
    Env2,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Env1 => "env1",
            EnvKind::Env2 => "env2",
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "env1" => Ok(EnvKind::Env1),
            "env2" => Ok(EnvKind::Env2),
            other => Err(Error::InvalidConfig(format!("unknown environment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardConfig {
    pub half_width: f64,
    pub half_height: f64,
    pub walls: Walls,
    /// Tilt limit per axis, radians.
    pub max_tilt: f64,
    /// Tilt rate produced by a unit command, radians per second.
    pub max_tilt_rate: f64,
    pub gravity: f64,
    pub rolling_friction_coeff: f64,
    pub restitution: f64,
    /// Integration and control period τ, seconds.
    pub sample_time: f64,
    /// Episode length Γ in steps.
    pub episode_steps: usize,
    pub ball_start: [f64; 2],
}

impl Default for BoardConfig {
    fn default() -> Self {
        Self {
            half_width: 0.25,
            half_height: 0.25,
            walls: Walls::ALL,
            max_tilt: 0.26,
            max_tilt_rate: 0.52,
            gravity: 9.81,
            rolling_friction_coeff: 0.05,
            restitution: 0.5,
            sample_time: Preset::Sim.sample_time(),
            episode_steps: Preset::Sim.episode_steps(),
            ball_start: [0.0, 0.0],
        }
    }
}

impl BoardConfig {
    pub fn env1(preset: Preset) -> Self {
        Self {
            sample_time: preset.sample_time(),
            episode_steps: preset.episode_steps(),
            ..Self::default()
        }
    }

    pub fn env2(preset: Preset) -> Self {
        Self {
            walls: Walls {
                left: true,
                right: false,
                bottom: true,
                top: false,
            },
            ..Self::env1(preset)
        }
    }

    pub fn for_env(env: EnvKind, preset: Preset) -> Self {
        match env {
            EnvKind::Env1 => Self::env1(preset),
            EnvKind::Env2 => Self::env2(preset),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("half_width", self.half_width),
            ("half_height", self.half_height),
            ("max_tilt", self.max_tilt),
            ("sample_time", self.sample_time),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return Err(Error::InvalidConfig(format!(
                "restitution must lie in [0, 1], got {}",
                self.restitution
            )));
        }
        if !(0.0..1.0).contains(&self.rolling_friction_coeff) {
            return Err(Error::InvalidConfig(format!(
                "rolling_friction_coeff must lie in [0, 1), got {}",
                self.rolling_friction_coeff
            )));
        }
        if self.max_tilt_rate < 0.0 || self.gravity < 0.0 {
            return Err(Error::InvalidConfig("tilt rate and gravity must be non-negative".into()));
        }
        if self.episode_steps == 0 {
            return Err(Error::InvalidConfig("episode_steps must be at least 1".into()));
        }
        let [x, y] = self.ball_start;
        if x.abs() > self.half_width || y.abs() > self.half_height {
            return Err(Error::InvalidConfig("ball_start lies outside the board".into()));
        }
        Ok(())
    }

    /// Wall-clock duration an episode models.
    pub fn episode_seconds(&self) -> f64 {
        self.episode_steps as f64 * self.sample_time
    }

    pub fn width(&self) -> f64 {
        2.0 * self.half_width
    }

    pub fn diagonal(&self) -> f64 {
        (self.width().powi(2) + (2.0 * self.half_height).powi(2)).sqrt()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: BoardConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn initial_state(&self) -> BoardState {
        BoardState {
            ball_pos: self.ball_start,
            ball_vel: [0.0; 2],
            tilt: [0.0; 2],
            step_index: 0,
            terminated: Termination::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    #[default]
    None,
    FellOff,
    EpisodeEnd,
    HumanStop,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::None => "none",
            Termination::FellOff => "fell_off",
            Termination::EpisodeEnd => "episode_end",
            Termination::HumanStop => "human_stop",
        }
    }

    pub fn is_terminal(self) -> bool {
        self != Termination::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardState {
    pub ball_pos: [f64; 2],
    pub ball_vel: [f64; 2],
    /// (roll about x, pitch about y) in radians.
    pub tilt: [f64; 2],
    pub step_index: usize,
    pub terminated: Termination,
}

/// Roll/pitch rate commands from both agents, each component in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ActionPair {
    pub human: [f64; 2],
    pub robot: [f64; 2],
}

impl ActionPair {
    pub fn new(human: [f64; 2], robot: [f64; 2]) -> Self {
        Self { human, robot }.clamped()
    }

    pub fn clamped(self) -> Self {
        Self {
            human: clamp_command(self.human),
            robot: clamp_command(self.robot),
        }
    }
}

/// Clamps both command components into `[-1, 1]`; NaN maps to 0.
pub fn clamp_command(cmd: [f64; 2]) -> [f64; 2] {
    cmd.map(|c| if c.is_nan() { 0.0 } else { c.clamp(-1.0, 1.0) })
}

/// Advances the board by one sample period.
pub fn step(state: &BoardState, actions: &ActionPair, cfg: &BoardConfig) -> Result<BoardState> {
    if state.terminated.is_terminal() {
        return Err(Error::Terminated(state.terminated));
    }
    let actions = actions.clamped();
    let dt = cfg.sample_time;
    let limits = [cfg.half_width, cfg.half_height];
    let walls_lo = [cfg.walls.left, cfg.walls.bottom];
    let walls_hi = [cfg.walls.right, cfg.walls.top];
    let static_limit = cfg.rolling_friction_coeff * cfg.gravity;

    let mut next = *state;
    let mut fell = false;
    for axis in 0..2 {
        let rate = (actions.human[axis] + actions.robot[axis]) * cfg.max_tilt_rate;
        let tilt = (state.tilt[axis] + rate * dt).clamp(-cfg.max_tilt, cfg.max_tilt);
        next.tilt[axis] = tilt;

        let drive = cfg.gravity * tilt.sin();
        let v0 = state.ball_vel[axis];
        let v = if v0 != 0.0 {
            let v1 = v0 + (drive - static_limit * v0.signum()) * dt;
            // Friction alone cannot reverse the motion.
            if v1.signum() != v0.signum() && drive.abs() <= static_limit {
                0.0
            } else {
                v1
            }
        } else if drive.abs() > static_limit {
            (drive - static_limit * drive.signum()) * dt
        } else {
            0.0
        };

        let mut p = state.ball_pos[axis] + v * dt;
        let mut v = v;
        let limit = limits[axis];
        if p > limit {
            if walls_hi[axis] {
                p = limit;
                v = -v.abs() * cfg.restitution;
            } else {
                fell = true;
            }
        } else if p < -limit {
            if walls_lo[axis] {
                p = -limit;
                v = v.abs() * cfg.restitution;
            } else {
                fell = true;
            }
        }
        next.ball_pos[axis] = p;
        next.ball_vel[axis] = v;
    }

    next.step_index = state.step_index + 1;
    if fell {
        next.ball_pos = state.ball_pos;
        next.terminated = Termination::FellOff;
    } else if next.step_index >= cfg.episode_steps {
        next.terminated = Termination::EpisodeEnd;
    }
    Ok(next)
}

/// Something that emits a roll/pitch command for a board state.
///
/// Policies draw randomness only from the generator they are handed, which keeps
/// an episode a pure function of its seed.
pub trait Controller {
    fn act(&mut self, state: &BoardState, rng: &mut ChaCha8Rng) -> [f64; 2];
}

impl<F> Controller for F
where
    F: FnMut(&BoardState, &mut ChaCha8Rng) -> [f64; 2],
{
    fn act(&mut self, state: &BoardState, rng: &mut ChaCha8Rng) -> [f64; 2] {
        self(state, rng)
    }
}

/// A controller that never moves its side of the board.
#[derive(Debug, Clone, Copy, Default)]
pub struct Passive;

impl Controller for Passive {
    fn act(&mut self, _: &BoardState, _: &mut ChaCha8Rng) -> [f64; 2] {
        [0.0; 2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    /// State the actions were chosen in.
    pub state: BoardState,
    pub actions: ActionPair,
}

/// One episode: every decision state with the actions taken in it, plus the
/// state the episode ended in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub final_state: BoardState,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn termination(&self) -> Termination {
        self.final_state.terminated
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.records.iter().map(|r| r.state.ball_pos).collect()
    }

    /// Position reached after each record's actions were applied.
    pub fn next_positions(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.records
            .iter()
            .skip(1)
            .map(|r| r.state.ball_pos)
            .chain(std::iter::once(self.final_state.ball_pos))
    }

    pub fn human_actions(&self) -> Vec<[f64; 2]> {
        self.records.iter().map(|r| r.actions.human).collect()
    }

    pub fn action_pairs(&self) -> Vec<ActionPair> {
        self.records.iter().map(|r| r.actions).collect()
    }

    /// Builds a trajectory directly from ball positions, with zero velocities,
    /// tilts and actions. Handy for fixtures.
    pub fn from_positions(positions: &[[f64; 2]]) -> Self {
        let records: Vec<_> = positions
            .iter()
            .enumerate()
            .map(|(i, &p)| TrajectoryRecord {
                step: i,
                state: BoardState {
                    ball_pos: p,
                    ball_vel: [0.0; 2],
                    tilt: [0.0; 2],
                    step_index: i,
                    terminated: Termination::None,
                },
                actions: ActionPair::default(),
            })
            .collect();
        let final_state = BoardState {
            ball_pos: positions.last().copied().unwrap_or([0.0; 2]),
            ball_vel: [0.0; 2],
            tilt: [0.0; 2],
            step_index: positions.len(),
            terminated: Termination::EpisodeEnd,
        };
        Self {
            records,
            final_state,
        }
    }

    /// Writes the CSV form with columns
    /// `step,x,y,vx,vy,roll,pitch,h_roll,h_pitch,r_roll,r_pitch,terminated`.
    /// Only the last row carries the episode's termination cause.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "step", "x", "y", "vx", "vy", "roll", "pitch", "h_roll", "h_pitch", "r_roll",
            "r_pitch", "terminated",
        ])?;
        let last = self.records.len().saturating_sub(1);
        for (i, r) in self.records.iter().enumerate() {
            let s = &r.state;
            let cause = if i == last {
                self.termination()
            } else {
                Termination::None
            };
            w.write_record(&[
                r.step.to_string(),
                s.ball_pos[0].to_string(),
                s.ball_pos[1].to_string(),
                s.ball_vel[0].to_string(),
                s.ball_vel[1].to_string(),
                s.tilt[0].to_string(),
                s.tilt[1].to_string(),
                r.actions.human[0].to_string(),
                r.actions.human[1].to_string(),
                r.actions.robot[0].to_string(),
                r.actions.robot[1].to_string(),
                cause.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Runs one episode from `cfg.ball_start` until it terminates.
///
/// Both controllers draw from one generator seeded with `seed`, human first at
/// every step.
pub fn run_episode<H, R>(human: &mut H, robot: &mut R, cfg: &BoardConfig, seed: u64) -> Result<Trajectory>
where
    H: Controller + ?Sized,
    R: Controller + ?Sized,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_episode_with(human, robot, cfg, &mut rng, |_| false)
}

/// Episode loop with an external generator and a stop predicate checked after
/// every step (a `true` ends the episode with [`Termination::HumanStop`]).
pub fn run_episode_with<H, R, S>(
    human: &mut H,
    robot: &mut R,
    cfg: &BoardConfig,
    rng: &mut ChaCha8Rng,
    mut stop: S,
) -> Result<Trajectory>
where
    H: Controller + ?Sized,
    R: Controller + ?Sized,
    S: FnMut(&BoardState) -> bool,
{
    cfg.validate()?;
    let mut state = cfg.initial_state();
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
    }
    Ok(Trajectory {
        records,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frictionless() -> BoardConfig {
        BoardConfig {
            rolling_friction_coeff: 0.0,
            ..BoardConfig::default()
        }
    }

    #[test]
    fn level_board_at_rest_stays_put() {
        let cfg = BoardConfig::env1(Preset::Sim);
        let mut s = cfg.initial_state();
        s.ball_pos = [0.07, -0.03];
        for _ in 0..100 {
            s = step(&s, &ActionPair::default(), &cfg).unwrap();
        }
        assert!((s.ball_pos[0] - 0.07).abs() < 1e-12);
        assert!((s.ball_pos[1] + 0.03).abs() < 1e-12);
    }

    #[test]
    fn locked_tilt_gives_constant_acceleration() {
        // Hand oracle: from rest, after k steps vx = k·τ·g·sin(θ).
        let cfg = frictionless();
        let theta = 0.1;
        let mut s = cfg.initial_state();
        s.tilt = [theta, 0.0];
        for k in 1..=12 {
            s = step(&s, &ActionPair::default(), &cfg).unwrap();
            let expected = k as f64 * 0.05 * 9.81 * theta.sin();
            assert!((s.ball_vel[0] - expected).abs() < 1e-12, "k={k}");
            assert_eq!(s.ball_vel[1], 0.0);
        }
    }

    #[test]
    fn env2_open_edge_ends_episode() {
        let cfg = BoardConfig::env2(Preset::Sim);
        let mut s = cfg.initial_state();
        s.ball_pos = [0.24, 0.0];
        s.ball_vel = [1.0, 0.0];
        let before = s.ball_pos;
        let next = step(&s, &ActionPair::new([1.0, 0.0], [1.0, 0.0]), &cfg).unwrap();
        assert_eq!(next.terminated, Termination::FellOff);
        assert_eq!(next.ball_pos, before);
        assert!(step(&next, &ActionPair::default(), &cfg).is_err());
    }

    #[test]
    fn wall_bounce_scales_normal_velocity() {
        let cfg = frictionless();
        let mut s = cfg.initial_state();
        s.ball_pos = [0.0, 0.24];
        s.ball_vel = [0.0, 1.0];
        let next = step(&s, &ActionPair::default(), &cfg).unwrap();
        assert_eq!(next.ball_pos[1], 0.25);
        assert!((next.ball_vel[1] + 0.5).abs() < 1e-12);
        assert_eq!(next.terminated, Termination::None);
    }

    #[test]
    fn presets_follow_walls_contract() {
        assert_eq!(BoardConfig::env1(Preset::Sim).walls.open_count(), 0);
        let w = BoardConfig::env2(Preset::Sim).walls;
        assert_eq!(w.open_count(), 2);
        // The open edges are adjacent: one per axis.
        assert!(w.left != w.right && w.bottom != w.top);
    }

    #[test]
    fn sim_episode_models_forty_seconds() {
        let cfg = BoardConfig::env1(Preset::Sim);
        assert_eq!(cfg.episode_steps, 800);
        assert_eq!(cfg.sample_time, 0.05);
        assert!((cfg.episode_seconds() - 40.0).abs() < 1e-9);
        let phys = BoardConfig::env1(Preset::Physical);
        assert!((phys.episode_seconds() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn zero_actions_give_constant_trajectory() {
        let cfg = BoardConfig::env1(Preset::Sim);
        let traj = run_episode(&mut Passive, &mut Passive, &cfg, 3).unwrap();
        assert_eq!(traj.len(), cfg.episode_steps);
        assert!(traj.records.iter().all(|r| r.state.ball_pos == cfg.ball_start));
        assert_eq!(traj.termination(), Termination::EpisodeEnd);
        for (i, r) in traj.records.iter().enumerate() {
            assert_eq!(r.step, i);
        }
    }

    #[test]
    fn same_seed_gives_identical_csv() {
        use rand::Rng;
        let cfg = BoardConfig::env2(Preset::Sim);
        let noisy = |_: &BoardState, rng: &mut ChaCha8Rng| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let a = run_episode(&mut noisy.clone(), &mut noisy.clone(), &cfg, 11).unwrap();
        let b = run_episode(&mut noisy.clone(), &mut noisy.clone(), &cfg, 11).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        let c = run_episode(&mut noisy.clone(), &mut noisy.clone(), &cfg, 12).unwrap();
        assert_ne!(a.to_csv_string(), c.to_csv_string());
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = BoardConfig::default();
        cfg.restitution = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = BoardConfig::default();
        cfg.sample_time = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = BoardConfig::default();
        cfg.rolling_friction_coeff = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = BoardConfig::env2(Preset::Physical);
        let text = serde_json::to_string(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("board.json");
        std::fs::write(&path, text).unwrap();
        assert_eq!(BoardConfig::from_json_file(&path).unwrap(), cfg);
    }

    fn kinetic(s: &BoardState) -> f64 {
        0.5 * (s.ball_vel[0].powi(2) + s.ball_vel[1].powi(2))
    }

    proptest! {
        #[test]
        fn tilt_never_exceeds_limit(cmds in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 1..200)) {
            let cfg = BoardConfig::env1(Preset::Sim);
            let mut s = cfg.initial_state();
            for (a, b, c, d) in cmds {
                s = step(&s, &ActionPair { human: [a, b], robot: [c, d] }, &cfg).unwrap();
                prop_assert!(s.tilt[0].abs() <= cfg.max_tilt && s.tilt[1].abs() <= cfg.max_tilt);
                prop_assert!(s.ball_pos[0].abs() <= cfg.half_width && s.ball_pos[1].abs() <= cfg.half_height);
                if s.terminated.is_terminal() { break; }
            }
        }

        #[test]
        fn bounce_never_adds_energy(v in 0.01f64..3.0, e in 0.0f64..=1.0) {
            let cfg = BoardConfig { restitution: e, rolling_friction_coeff: 0.0, ..BoardConfig::default() };
            let mut s = cfg.initial_state();
            s.ball_pos = [0.25 - 1e-4, 0.0];
            s.ball_vel = [v, 0.0];
            let next = step(&s, &ActionPair::default(), &cfg).unwrap();
            prop_assert!(kinetic(&next) <= kinetic(&s) + 1e-15);
        }
    }
}
