//! Scripted partners that start with a general goal region and narrow it down
//! while cooperating.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::board::{clamp_command, BoardConfig, BoardState, Controller, EnvKind, Trajectory};
use crate::error::{Error, Result};
use crate::metrics::{mean_position, specificity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartnerParams {
    /// Center of the general goal region.
    pub goal_center: [f64; 2],
    pub initial_radius: f64,
    pub radius_floor: f64,
    /// Fraction of the radius given up per iteration.
    pub specification_rate: f64,
    /// Desired tilt per meter of position error (rad/m).
    pub reactivity_gain: f64,
    /// Desired tilt per m/s of ball velocity (rad·s/m).
    pub damping: f64,
    /// Desired tilt per m·s of accumulated position error; makes the partner
    /// push harder while the ball is held away from the target.
    pub persistence: f64,
    /// Command per unit of normalized tilt error.
    pub command_gain: f64,
    /// Growth per second of the command multiplier while the ball is away
    /// from the target and not closing in; the partner pushes harder when
    /// blocked, up to a full command.
    pub effort_gain: f64,
    /// Ball speed under which the partner relaxes near its target (m/s).
    pub comfort_threshold: f64,
    /// Distance to the target counted as "near" (m).
    pub comfort_radius: f64,
    /// Gain multiplier on an axis where the ball moves away from the target.
    pub disagreement_response: f64,
    pub noise_std: f64,
    /// The partner reacts to the state this many steps in the past.
    pub reaction_delay_steps: usize,
    /// Mean per-step divergence from the episode mean (m) below which an
    /// episode counts as specific enough to stop.
    pub satisfaction_threshold: f64,
    pub rng_seed: u64,
}

impl PartnerParams {
    /// Nominal partner for an environment: Env 1 wants the ball moved along
    /// +Y, Env 2 wants it parked in the lower-left corner.
    pub fn preset(env: EnvKind) -> Self {
        let goal_center = match env {
            EnvKind::Env1 => [0.0, 0.12],
            EnvKind::Env2 => [-0.15, -0.15],
        };
        Self {
            goal_center,
            initial_radius: 0.08,
            radius_floor: 0.015,
            specification_rate: 0.1,
            reactivity_gain: 0.4,
            damping: 0.9,
            persistence: 0.3,
            command_gain: 0.45,
            effort_gain: 0.5,
            comfort_threshold: 0.02,
            comfort_radius: 0.02,
            disagreement_response: 1.3,
            noise_std: 0.15,
            reaction_delay_steps: 3,
            satisfaction_threshold: 0.02,
            rng_seed: 0,
        }
    }

    pub fn validate(&self, board: &BoardConfig) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("partner: {m}")));
        if !(self.initial_radius > 0.0 && self.radius_floor > 0.0 && self.radius_floor <= self.initial_radius) {
            return bad("need 0 < radius_floor <= initial_radius");
        }
        if !(self.specification_rate > 0.0 && self.specification_rate < 1.0) {
            return bad("specification_rate must lie in (0, 1)");
        }
        let [cx, cy] = self.goal_center;
        if cx.abs() + self.initial_radius > board.half_width || cy.abs() + self.initial_radius > board.half_height {
            return bad("goal region must lie on the board");
        }
        let nonneg = [
            self.reactivity_gain,
            self.damping,
            self.persistence,
            self.command_gain,
            self.effort_gain,
            self.comfort_threshold,
            self.comfort_radius,
            self.noise_std,
            self.satisfaction_threshold,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("gains, thresholds and noise must be finite and non-negative");
        }
        if !(self.disagreement_response >= 1.0) {
            return bad("disagreement_response must be at least 1");
        }
        Ok(())
    }

    /// `count` partners spread around the preset: gains, noise, delay and
    /// shrink rate vary, the goal region center is jittered inside the board.
    pub fn population(env: EnvKind, count: usize, seed: u64) -> Vec<PartnerParams> {
        let base = Self::preset(env);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_9a27);
        (0..count)
            .map(|i| {
                let mut scale = |lo: f64, hi: f64| rng.random_range(lo..hi);
                let jitter = [scale(-0.03, 0.03), scale(-0.03, 0.03)];
                let mut p = base;
                p.goal_center = match env {
                    EnvKind::Env1 => [base.goal_center[0] + jitter[0], base.goal_center[1] + jitter[1].abs()],
                    EnvKind::Env2 => [base.goal_center[0] + jitter[0].abs() * 0.5, base.goal_center[1] + jitter[1].abs() * 0.5],
                };
                p.reactivity_gain = base.reactivity_gain * scale(0.8, 1.25);
                p.damping = base.damping * scale(0.8, 1.25);
                p.persistence = base.persistence * scale(0.5, 1.5);
                p.command_gain = base.command_gain * scale(0.8, 1.25);
                p.effort_gain = base.effort_gain * scale(0.7, 1.4);
                p.noise_std = scale(0.05, 0.25);
                p.specification_rate = scale(0.06, 0.18);
                p.disagreement_response = scale(1.1, 1.6);
                p.reaction_delay_steps = rng.random_range(2..=4);
                p.rng_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                p
            })
            .collect()
    }
}

/// A synthetic human holding a general goal region.
#[derive(Debug, Clone)]
pub struct GeneralGoalPartner {
    pub params: PartnerParams,
    max_tilt: f64,
    breakaway_tilt: f64,
    radius: f64,
    iteration: usize,
    internal_target: [f64; 2],
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    seen: VecDeque<BoardState>,
    integral: [f64; 2],
    effort: [f64; 2],
    sample_time: f64,
}

impl GeneralGoalPartner {
    pub fn new(params: PartnerParams, board: &BoardConfig) -> Result<Self> {
        params.validate(board)?;
        let noise = Normal::new(0.0, params.noise_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut p = Self {
            params,
            max_tilt: board.max_tilt,
            breakaway_tilt: (1.2 * board.rolling_friction_coeff).min(1.0).asin(),
            radius: params.initial_radius,
            iteration: 0,
            internal_target: params.goal_center,
            rng: ChaCha8Rng::seed_from_u64(params.rng_seed),
            noise,
            seen: VecDeque::new(),
            integral: [0.0; 2],
            effort: [0.0; 2],
            sample_time: board.sample_time,
        };
        p.begin_iteration(0);
        Ok(p)
    }

    /// Radius of the goal region at iteration `k`.
    pub fn radius_at(&self, k: usize) -> f64 {
        let r = self.params.initial_radius * (1.0 - self.params.specification_rate).powi(k as i32);
        r.max(self.params.radius_floor)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn internal_target(&self) -> [f64; 2] {
        self.internal_target
    }

    /// Shrinks the region to iteration `k` and draws a new target inside it.
    pub fn begin_iteration(&mut self, k: usize) {
        self.iteration = k;
        self.radius = self.radius_at(k);
        let r = self.radius * self.rng.random::<f64>().sqrt();
        let a = self.rng.random_range(0.0..std::f64::consts::TAU);
        let c = self.params.goal_center;
        self.internal_target = [c[0] + r * a.cos(), c[1] + r * a.sin()];
        self.reset_episode();
    }

    /// Sets the target directly, e.g. for a validation episode.
    pub fn set_target(&mut self, target: [f64; 2]) {
        self.internal_target = target;
        self.reset_episode();
    }

    /// Forgets delayed observations and accumulated error.
    pub fn reset_episode(&mut self) {
        self.seen.clear();
        self.integral = [0.0; 2];
        self.effort = [0.0; 2];
    }

    pub fn in_region(&self, pos: [f64; 2]) -> bool {
        let c = self.params.goal_center;
        (pos[0] - c[0]).hypot(pos[1] - c[1]) <= self.radius
    }

    /// Command for the (possibly delayed) observed state. Uses the partner's
    /// own generator for noise.
    pub fn command(&mut self, state: &BoardState) -> [f64; 2] {
        self.seen.push_back(*state);
        while self.seen.len() > self.params.reaction_delay_steps + 1 {
            self.seen.pop_front();
        }
        let observed = self.seen[0];
        partner_act_state(self, &observed)
    }

    pub fn goal_satisfied(&self, traj: &Trajectory) -> bool {
        goal_satisfied(self, traj)
    }
}

fn partner_act_state(partner: &mut GeneralGoalPartner, s: &BoardState) -> [f64; 2] {
    let p = partner.params;
    let err = [
        partner.internal_target[0] - s.ball_pos[0],
        partner.internal_target[1] - s.ball_pos[1],
    ];
    let speed = s.ball_vel[0].hypot(s.ball_vel[1]);
    let relaxed = err[0].hypot(err[1]) < p.comfort_radius && speed < p.comfort_threshold;
    let mut cmd = [0.0; 2];
    for k in 0..2 {
        let near = err[k].abs() <= p.comfort_radius;
        let i = &mut partner.integral[k];
        *i = if near { 0.9 * *i } else { *i + err[k] * partner.sample_time };
        if p.persistence > 0.0 {
            let cap = partner.max_tilt / p.persistence;
            *i = i.clamp(-cap, cap);
        }
        let held = p.persistence * *i;
        // Outside the comfort radius the partner tilts past stiction.
        let breakaway = if err[k].abs() > p.comfort_radius {
            partner.breakaway_tilt * err[k].signum()
        } else {
            0.0
        };
        let desired = (p.reactivity_gain * err[k] - p.damping * s.ball_vel[k] + held + breakaway)
            .clamp(-partner.max_tilt, partner.max_tilt);
        let blocked = err[k].abs() > p.comfort_radius && err[k] * s.ball_vel[k] <= 0.0;
        let e = &mut partner.effort[k];
        *e = if blocked { *e + p.effort_gain * partner.sample_time } else { 0.95 * *e };
        if p.command_gain > 0.0 {
            *e = e.min((1.0 / p.command_gain - 1.0).max(0.0));
        }
        let mut c = p.command_gain * (1.0 + *e) * (desired - s.tilt[k]) / partner.max_tilt;
        if err[k] * s.ball_vel[k] < 0.0 && err[k].abs() > p.comfort_radius {
            c *= p.disagreement_response;
        }
        cmd[k] = c;
    }
    if !relaxed {
        for c in cmd.iter_mut() {
            *c += partner.noise.sample(&mut partner.rng);
        }
    }
    clamp_command(cmd)
}

/// The partner's command for `state`, seen without reaction delay.
pub fn partner_act(partner: &mut GeneralGoalPartner, state: &BoardState) -> [f64; 2] {
    partner_act_state(partner, state)
}

/// Whether an episode ended where the partner wants it and stayed put: the
/// episode mean lies in the current region and the mean per-step divergence
/// from it is under the satisfaction threshold.
pub fn goal_satisfied(partner: &GeneralGoalPartner, traj: &Trajectory) -> bool {
    let points = traj.positions();
    if points.is_empty() {
        return false;
    }
    let mu = mean_position(&points);
    partner.in_region(mu) && specificity(&points) / (points.len() as f64) < partner.params.satisfaction_threshold
}

impl Controller for GeneralGoalPartner {
    fn act(&mut self, state: &BoardState, _: &mut ChaCha8Rng) -> [f64; 2] {
        self.command(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::{run_episode, Passive, Preset};

    fn partner(env: EnvKind) -> (GeneralGoalPartner, BoardConfig) {
        let board = BoardConfig::for_env(env, Preset::Sim);
        (GeneralGoalPartner::new(PartnerParams::preset(env), &board).unwrap(), board)
    }

    #[test]
    fn null_point_and_sign() {
        let (mut p, board) = partner(EnvKind::Env1);
        let mut s = board.initial_state();
        s.ball_pos = p.internal_target();
        let c = partner_act(&mut p, &s);
        assert!(c[0].hypot(c[1]) < 0.02, "{c:?}");

        p.params.noise_std = 0.0;
        p.noise = Normal::new(0.0, 0.0).unwrap();
        s.ball_pos[0] += 0.1;
        assert!(partner_act(&mut p, &s)[0] < 0.0);
        s.ball_pos[0] -= 0.2;
        assert!(partner_act(&mut p, &s)[0] > 0.0);
    }

    #[test]
    fn region_shrinks_to_floor() {
        let (mut p, _) = partner(EnvKind::Env2);
        let radii: Vec<f64> = (0..100).map(|k| p.radius_at(k)).collect();
        let floor = p.params.radius_floor;
        for w in radii.windows(2) {
            if w[0] > floor {
                assert!(w[1] < w[0]);
            } else {
                assert_eq!(w[1], floor);
            }
        }
        assert_eq!(*radii.last().unwrap(), floor);
        assert!(floor >= 0.5 / 41.0);
        for k in 0..100 {
            p.begin_iteration(k);
            assert!(p.in_region(p.internal_target()));
        }
    }

    #[test]
    fn satisfaction_fixtures() {
        let (p, _) = partner(EnvKind::Env1);
        let c = p.params.goal_center;
        assert!(p.goal_satisfied(&Trajectory::from_positions(&[c; 50])));
        assert!(!p.goal_satisfied(&Trajectory::from_positions(&[[0.0, -0.2]; 50])));

        // Threshold boundary: a two-point trajectory around the center whose
        // per-step divergence equals half its spread.
        let th = p.params.satisfaction_threshold;
        let pts = |d: f64| Trajectory::from_positions(&[[c[0] - d, c[1]], [c[0] + d, c[1]]]);
        let oracle = |d: f64| {
            let (mx, my) = (c[0], c[1]);
            let u: f64 = [[c[0] - d, c[1]], [c[0] + d, c[1]]]
                .iter()
                .map(|q: &[f64; 2]| ((q[0] - mx).powi(2) + (q[1] - my).powi(2)).sqrt())
                .sum();
            u / 2.0 < th
        };
        for d in [0.5 * th, 0.999 * th, 1.001 * th, 2.0 * th] {
            assert_eq!(p.goal_satisfied(&pts(d)), oracle(d), "d={d}");
        }
    }

    #[test]
    fn commands_stay_in_range_and_are_deterministic() {
        for env in [EnvKind::Env1, EnvKind::Env2] {
            for params in PartnerParams::population(env, 15, 3) {
                let board = BoardConfig::for_env(env, Preset::Sim);
                let run = || {
                    let mut p = GeneralGoalPartner::new(params, &board).unwrap();
                    run_episode(&mut p, &mut Passive, &board, 1).unwrap()
                };
                let a = run();
                assert_eq!(a, run());
                for r in &a.records {
                    assert!(r.actions.human.iter().all(|c| c.abs() <= 1.0));
                }
            }
        }
    }

    #[test]
    fn mirroring_robot_reaches_satisfaction() {
        for env in [EnvKind::Env1, EnvKind::Env2] {
            let board = BoardConfig::for_env(env, Preset::Sim);
            let mut p = GeneralGoalPartner::new(PartnerParams::preset(env), &board).unwrap();
            let mut satisfied_at = None;
            for k in 0..40 {
                p.begin_iteration(k);
                let mut mirror = p.clone();
                let mut robot = move |s: &BoardState, _: &mut ChaCha8Rng| mirror.command(s);
                let traj = run_episode(&mut p, &mut robot, &board, k as u64).unwrap();
                if p.goal_satisfied(&traj) {
                    satisfied_at = Some(k);
                    break;
                }
            }
            assert!(satisfied_at.is_some(), "{env}");
        }
    }
}
