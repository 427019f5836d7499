//! Synthetic demonstration generators and a PD-tracked point-mass task.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Demonstration, GeneratorInfo, ObservationHistory};
use crate::error::{Error, Result};
use crate::stream::Env;
use crate::trajectory::Trajectory;

/// Waypoints per generated toy trajectory.
pub const TOY_WAYPOINTS: usize = 65;
/// History length used by every generator.
pub const HISTORY_LEN: usize = 2;
pub const BIMODAL_AMPLITUDE: f64 = 0.8;
pub const S_AMPLITUDE: f64 = 0.6;

/// Cubic smoothstep `3s² − 2s³` on `[0, 1]`, clamped outside.
pub fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// `n` labels, half `true` and half `false` (the odd one out drawn at
/// random), in random order.
fn balanced_labels<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<bool> {
    let mut labels: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    if n % 2 == 1 {
        labels[n - 1] = rng.random_bool(0.5);
    }
    labels.shuffle(rng);
    labels
}

/// Standard normal draw truncated to `±3`.
fn clipped_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(StandardNormal).clamp(-3.0, 3.0)
}

fn start_history(start: &[f64]) -> Result<ObservationHistory> {
    ObservationHistory::repeated(start, HISTORY_LEN)
}

fn toy_dataset(demos: Vec<Demonstration>, info: GeneratorInfo) -> Result<Dataset> {
    Ok(Dataset::new(demos, 1, 1, HISTORY_LEN, 1.0)?.with_generator(info))
}

fn require_n(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::config("n", format!("need at least {min} demonstrations")));
    }
    Ok(())
}

/// Two behavior modes from a common start: smooth paths from 0 to `+0.8`
/// or `−0.8`, each with its amplitude jittered by clipped Gaussian noise.
/// Exactly half the demos go each way (up to one for odd `n`).
pub fn gen_bimodal_1d<R: Rng + ?Sized>(n: usize, rng: &mut R, noise_std: f64) -> Result<Dataset> {
    require_n(n, 2)?;
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::config("noise_std", "must be a finite nonnegative real"));
    }
    let h = start_history(&[0.0])?;
    let mut demos = Vec::with_capacity(n);
    for up in balanced_labels(n, rng) {
        let amp = BIMODAL_AMPLITUDE + noise_std * clipped_normal(rng);
        let sign = if up { 1.0 } else { -1.0 };
        let traj = Trajectory::from_fn(TOY_WAYPOINTS, 1, |t| vec![sign * amp * smoothstep(t)])?;
        demos.push(Demonstration { history: h.clone(), trajectory: traj });
    }
    toy_dataset(demos, GeneratorInfo { name: "bimodal".into(), seed: 0, noise_std: Some(noise_std) })
}

/// `±A·sin(2π·min(t, 0.75))`: up then down through zero at `t = 0.5` for
/// the "S", the mirror image for the other mode. Both hold still over the
/// last quarter.
pub fn s_curve(sign: f64, amp: f64, t: f64) -> f64 {
    sign * amp * (2.0 * std::f64::consts::PI * t.min(0.75)).sin()
}

/// Two mirrored S-shaped modes that cross `a = 0` at `t = 0.5`.
pub fn gen_intersecting_s<R: Rng + ?Sized>(n: usize, rng: &mut R, noise_std: f64) -> Result<Dataset> {
    require_n(n, 2)?;
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::config("noise_std", "must be a finite nonnegative real"));
    }
    let h = start_history(&[0.0])?;
    let mut demos = Vec::with_capacity(n);
    for up in balanced_labels(n, rng) {
        let amp = S_AMPLITUDE + noise_std * clipped_normal(rng);
        let sign = if up { 1.0 } else { -1.0 };
        let traj = Trajectory::from_fn(TOY_WAYPOINTS, 1, |t| vec![s_curve(sign, amp, t)])?;
        demos.push(Demonstration { history: h.clone(), trajectory: traj });
    }
    toy_dataset(
        demos,
        GeneratorInfo { name: "intersecting-s".into(), seed: 0, noise_std: Some(noise_std) },
    )
}

/// Straight lines `ξ(t) = c·t` with slopes `c ~ U[−1, 1]`, so every
/// demonstrated velocity lies in `[−1, 1]`.
pub fn gen_lines<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Dataset> {
    require_n(n, 1)?;
    let h = start_history(&[0.0])?;
    let demos = (0..n)
        .map(|_| {
            let c: f64 = rng.random_range(-1.0..=1.0);
            Ok(Demonstration {
                history: h.clone(),
                trajectory: Trajectory::from_fn(TOY_WAYPOINTS, 1, |t| vec![c * t])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    toy_dataset(demos, GeneratorInfo { name: "lines".into(), seed: 0, noise_std: None })
}

/// One straight demonstration `ξ(t) = slope·t`.
pub fn gen_single_line(slope: f64) -> Result<Dataset> {
    let demo = Demonstration {
        history: start_history(&[0.0])?,
        trajectory: Trajectory::from_fn(TOY_WAYPOINTS, 1, |t| vec![slope * t])?,
    };
    toy_dataset(vec![demo], GeneratorInfo { name: "single-line".into(), seed: 0, noise_std: None })
}

/// Point-mass task parameters. Positions are in the plane; actions are
/// target positions tracked by a PD controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointMassConfig {
    pub start: [f64; 2],
    pub goals: [[f64; 2]; 2],
    pub goal_radius: f64,
    /// Distance that maps to a score of zero.
    pub diag: f64,
    pub kp: f64,
    pub kd: f64,
    pub sim_hz: f64,
    /// Seconds each action is tracked for.
    pub action_period: f64,
    pub episode_seconds: f64,
    /// Duration of the expert's reaching motion.
    pub motion_seconds: f64,
    /// Std of the uniform-in-disc start perturbation radius.
    pub start_jitter: f64,
    pub obs_noise: f64,
    pub seed: u64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        PointMassConfig {
            start: [0.0, 0.0],
            goals: [[-0.6, 0.8], [0.6, 0.8]],
            goal_radius: 0.08,
            diag: 1.0,
            kp: 40.0,
            kd: 8.0,
            sim_hz: 100.0,
            action_period: 0.1,
            episode_seconds: 4.0,
            motion_seconds: 3.2,
            start_jitter: 0.01,
            obs_noise: 0.0,
            seed: 0,
        }
    }
}

impl PointMassConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let checks = [
            ("env.goal_radius", self.goal_radius),
            ("env.diag", self.diag),
            ("env.kp", self.kp),
            ("env.kd", self.kd),
            ("env.sim_hz", self.sim_hz),
            ("env.action_period", self.action_period),
            ("env.episode_seconds", self.episode_seconds),
            ("env.motion_seconds", self.motion_seconds),
        ];
        for (field, v) in checks {
            if !pos(v) {
                return Err(Error::config(field, "must be a positive real"));
            }
        }
        for (field, v) in [("env.start_jitter", self.start_jitter), ("env.obs_noise", self.obs_noise)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be a finite nonnegative real"));
            }
        }
        let a = self.goals[0];
        let b = self.goals[1];
        if ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() <= 2.0 * self.goal_radius {
            return Err(Error::config("env.goals", "goal discs must be disjoint"));
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.action_period * self.sim_hz).round().max(1.0) as usize
    }

    pub fn episode_actions(&self) -> usize {
        (self.episode_seconds / self.action_period).round() as usize
    }

    /// Score for a final position: 1 inside either goal disc, otherwise
    /// `1 − clamp(d / diag, 0, 1)` for the distance `d` to the nearest goal
    /// center.
    pub fn score(&self, pos: [f64; 2]) -> f64 {
        let d = self
            .goals
            .iter()
            .map(|g| ((pos[0] - g[0]).powi(2) + (pos[1] - g[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        if d <= self.goal_radius {
            1.0
        } else {
            1.0 - (d / self.diag).clamp(0.0, 1.0)
        }
    }

    /// Expert reaching path from `start` to `goal`, evaluated at `time`
    /// seconds.
    pub fn expert_position(&self, start: [f64; 2], goal: [f64; 2], time: f64) -> [f64; 2] {
        let s = smoothstep(time / self.motion_seconds);
        [start[0] + s * (goal[0] - start[0]), start[1] + s * (goal[1] - start[1])]
    }

    fn jittered_start<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        [
            self.start[0] + self.start_jitter * clipped_normal(rng),
            self.start[1] + self.start_jitter * clipped_normal(rng),
        ]
    }
}

/// Expert demonstrations for the point-mass task. Each of `episodes`
/// episodes reaches one goal (balanced); every action step of an episode
/// yields one window: the last two observed positions and the next
/// `t_pred` seconds of the path at `waypoints` uniform samples.
pub fn gen_pointmass<R: Rng + ?Sized>(
    episodes: usize,
    rng: &mut R,
    cfg: &PointMassConfig,
    t_pred: f64,
    waypoints: usize,
) -> Result<Dataset> {
    require_n(episodes, 2)?;
    cfg.validate()?;
    if waypoints < 2 {
        return Err(Error::config("waypoints", "need at least 2"));
    }
    let period = cfg.action_period;
    let steps = cfg.episode_actions();
    let mut demos = Vec::with_capacity(episodes * steps);
    for right in balanced_labels(episodes, rng) {
        let goal = cfg.goals[usize::from(right)];
        let start = cfg.jittered_start(rng);
        let mut observed = vec![start.to_vec()];
        for j in 0..steps {
            let now = j as f64 * period;
            let history = ObservationHistory::from_recent(&observed, HISTORY_LEN)?;
            let traj = Trajectory::from_fn(waypoints, 2, |t| cfg.expert_position(start, goal, now + t * t_pred).to_vec())?;
            demos.push(Demonstration { history, trajectory: traj });
            observed.push(cfg.expert_position(start, goal, now + period).to_vec());
        }
    }
    Ok(Dataset::new(demos, 2, 2, HISTORY_LEN, t_pred)?.with_generator(GeneratorInfo {
        name: "pointmass".into(),
        seed: 0,
        noise_std: None,
    }))
}

/// Double-integrator point mass driven by a PD controller toward a target
/// that moves linearly from the previous action to the current one over
/// each action period.
#[derive(Clone, Debug)]
pub struct PointMassEnv {
    cfg: PointMassConfig,
    pos: [f64; 2],
    vel: [f64; 2],
    target: [f64; 2],
    steps: usize,
    rng: ChaCha8Rng,
}

impl PointMassEnv {
    pub fn new(cfg: PointMassConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(PointMassEnv { pos: cfg.start, vel: [0.0; 2], target: cfg.start, steps: 0, rng, cfg })
    }

    pub fn config(&self) -> &PointMassConfig {
        &self.cfg
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    fn observe(&mut self) -> Vec<f64> {
        let s = self.cfg.obs_noise;
        let mut o = self.pos.to_vec();
        if s > 0.0 {
            for v in &mut o {
                *v += s * self.rng.sample::<f64, _>(StandardNormal);
            }
        }
        o
    }

    /// Tracks `target` for one action period and returns the largest
    /// distance to the moving reference seen during the period.
    pub fn track(&mut self, target: [f64; 2]) -> f64 {
        let n = self.cfg.substeps();
        let h = 1.0 / self.cfg.sim_hz;
        let period = n as f64 * h;
        let from = self.target;
        let ref_vel = [(target[0] - from[0]) / period, (target[1] - from[1]) / period];
        let mut max_err: f64 = 0.0;
        for i in 0..n {
            let s = i as f64 / n as f64;
            for j in 0..2 {
                let r = from[j] + s * (target[j] - from[j]);
                let acc = self.cfg.kp * (r - self.pos[j]) + self.cfg.kd * (ref_vel[j] - self.vel[j]);
                self.vel[j] += h * acc;
                self.pos[j] += h * self.vel[j];
            }
            let s1 = (i + 1) as f64 / n as f64;
            let dx = from[0] + s1 * (target[0] - from[0]) - self.pos[0];
            let dy = from[1] + s1 * (target[1] - from[1]) - self.pos[1];
            max_err = max_err.max((dx * dx + dy * dy).sqrt());
        }
        self.target = target;
        max_err
    }
}

impl Env for PointMassEnv {
    fn action_dim(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn reset(&mut self) -> Vec<f64> {
        let start = self.cfg.jittered_start(&mut self.rng);
        self.pos = start;
        self.vel = [0.0; 2];
        self.target = start;
        self.steps = 0;
        self.observe()
    }

    fn measured_state(&self) -> Vec<f64> {
        self.pos.to_vec()
    }

    fn execute(&mut self, action: &[f64]) -> Result<Vec<f64>> {
        if action.len() != 2 || action.iter().any(|v| !v.is_finite()) {
            return Err(Error::EnvFault(format!("invalid action {action:?}")));
        }
        self.track([action[0], action[1]]);
        if self.pos.iter().any(|v| !v.is_finite() || v.abs() > 1e3) {
            return Err(Error::EnvFault("point mass left the workspace".into()));
        }
        self.steps += 1;
        Ok(self.observe())
    }

    fn is_done(&self) -> bool {
        self.steps >= self.cfg.episode_actions()
    }

    fn score(&self) -> f64 {
        self.cfg.score(self.pos)
    }
}
