//! Streaming execution of a velocity field.
//!
//! Within a chunk the history is frozen and the field is integrated with
//! explicit Euler steps of size `dt`. Every new action is handed to the
//! consumer before the next velocity evaluation starts, so the robot can
//! move while the flow is still being integrated. Across chunks the
//! integration restarts at `t = 0` from either the last generated action or
//! the measured robot state.

use std::io::Write;
use std::path::Path;
use std::sync::mpsc;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::chunk::ChunkParams;
use crate::dataset::ObservationHistory;
use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::trajectory::Trajectory;

/// Closed-loop environment driven one action at a time.
pub trait Env {
    fn action_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    /// Resets the episode and returns the first observation.
    fn reset(&mut self) -> Vec<f64>;
    /// Current robot configuration, used for state imitation.
    fn measured_state(&self) -> Vec<f64>;
    /// Executes one action and returns the resulting observation. An error
    /// is a fault that ends the rollout.
    fn execute(&mut self, action: &[f64]) -> Result<Vec<f64>>;
    fn is_done(&self) -> bool;
    fn score(&self) -> f64;
}

/// Where each chunk's integration starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// From the most recently generated action.
    ActionImitation,
    /// From the robot's measured state.
    StateImitation,
}

impl std::str::FromStr for InitMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "action" | "action_imitation" | "action-imitation" => Ok(InitMode::ActionImitation),
            "state" | "state_imitation" | "state-imitation" => Ok(InitMode::StateImitation),
            other => Err(format!("unknown init mode `{other}`")),
        }
    }
}

/// Integrates one chunk from a full initial state (`(a, z)` for latent
/// fields). `sink(i, t, action)` receives action `i` at flow time `t`
/// before evaluation `i + 1` begins.
pub fn integrate_chunk_from_state<F, S>(
    field: &F,
    h_chunk: &ObservationHistory,
    init: &[f64],
    chunk: &ChunkParams,
    mut sink: S,
) -> Result<Vec<Vec<f64>>>
where
    F: VelocityField + ?Sized,
    S: FnMut(usize, f64, &[f64]) -> Result<()>,
{
    let sd = field.state_dim();
    let ad = field.action_dim();
    Error::check_dim("initial state", sd, init.len())?;
    let n = chunk.steps();
    let dt = chunk.dt();
    let h = h_chunk.encode();
    let mut state = init.to_vec();
    let mut v = vec![0.0; sd];
    let mut actions = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        field.velocity(&state, t, h, &mut v)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteVelocity { step: i, t });
        }
        for (s, vi) in state.iter_mut().zip(&v) {
            *s += vi * dt;
        }
        sink(i, (i + 1) as f64 * dt, &state[..ad])?;
        actions.push(state[..ad].to_vec());
    }
    Ok(actions)
}

/// Integrates one chunk of a plain (non-latent) field from `a_init`.
pub fn integrate_chunk<F, S>(
    field: &F,
    h_chunk: &ObservationHistory,
    a_init: &[f64],
    chunk: &ChunkParams,
    sink: S,
) -> Result<Vec<Vec<f64>>>
where
    F: VelocityField + ?Sized,
    S: FnMut(usize, f64, &[f64]) -> Result<()>,
{
    if field.is_latent() {
        return Err(Error::config(
            "model.variant",
            "latent fields need an initial latent; use integrate_chunk_from_state",
        ));
    }
    integrate_chunk_from_state(field, h_chunk, a_init, chunk, sink)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub chunk: usize,
    /// Flow time of the action within its chunk.
    pub t: f64,
    pub action: Vec<f64>,
    pub obs: Vec<f64>,
    /// Nanoseconds since the rollout started, when the action was executed.
    pub wall_ns: u128,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutRecord {
    pub steps: Vec<StepRecord>,
    /// Index into `steps` where each chunk begins.
    pub chunk_starts: Vec<usize>,
    /// Initial integration state of each chunk (action part).
    pub chunk_inits: Vec<Vec<f64>>,
    pub score: f64,
    pub failed: Option<String>,
}

impl RolloutRecord {
    pub fn final_action(&self) -> Option<&[f64]> {
        self.steps.last().map(|s| s.action.as_slice())
    }

    /// CSV with columns `step,chunk,t,a0..,obs0..,wall_ns`. With
    /// `include_wall = false` the wall-time column is omitted, which makes
    /// the output reproducible byte for byte.
    pub fn to_csv(&self, include_wall: bool) -> String {
        let ad = self.steps.first().map_or(0, |s| s.action.len());
        let od = self.steps.first().map_or(0, |s| s.obs.len());
        let mut out = String::from("step,chunk,t");
        for i in 0..ad {
            out.push_str(&format!(",a{i}"));
        }
        for i in 0..od {
            out.push_str(&format!(",obs{i}"));
        }
        if include_wall {
            out.push_str(",wall_ns");
        }
        out.push('\n');
        for s in &self.steps {
            out.push_str(&format!("{},{},{}", s.step, s.chunk, s.t));
            for v in s.action.iter().chain(&s.obs) {
                out.push_str(&format!(",{v}"));
            }
            if include_wall {
                out.push_str(&format!(",{}", s.wall_ns));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, include_wall: bool) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv(include_wall).as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Runs the policy in a receding-horizon loop until the environment reports
/// completion or `max_steps` actions have been executed.
///
/// Each chunk runs the integrator on a worker thread that feeds a queue
/// bounded at one chunk; this thread executes actions as they arrive.
/// Latent fields draw a fresh `z(0) ~ N(0, I)` per chunk from `rng`; the
/// action part always starts deterministically.
pub fn run_receding_horizon<F, E, R>(
    field: &F,
    env: &mut E,
    chunk: &ChunkParams,
    init_mode: InitMode,
    history_len: usize,
    max_steps: usize,
    rng: &mut R,
) -> Result<RolloutRecord>
where
    F: VelocityField + ?Sized,
    E: Env + ?Sized,
    R: Rng + ?Sized,
{
    let ad = field.action_dim();
    Error::check_dim("env action_dim", ad, env.action_dim())?;
    let start = Instant::now();
    let first_obs = env.reset();
    let mut history = ObservationHistory::repeated(&first_obs, history_len)?;
    let mut action = env.measured_state();
    Error::check_dim("measured state", ad, action.len())?;

    let mut rec = RolloutRecord::default();
    let mut step = 0;
    let mut chunk_idx = 0;
    while step < max_steps && !env.is_done() {
        let h_chunk = history.clone();
        if init_mode == InitMode::StateImitation {
            action = env.measured_state();
        }
        let mut init = action.clone();
        if field.is_latent() {
            init.extend((0..field.state_dim() - ad).map(|_| rng.sample::<f64, _>(StandardNormal)));
        }
        rec.chunk_starts.push(rec.steps.len());
        rec.chunk_inits.push(action.clone());

        let budget = chunk.steps().min(max_steps - step);
        let (tx, rx) = mpsc::sync_channel::<(usize, f64, Vec<f64>)>(chunk.steps());
        let mut fault = None;
        let producer_result = std::thread::scope(|s| {
            let (h_chunk, init) = (&h_chunk, &init);
            let producer = s.spawn(move || {
                integrate_chunk_from_state(field, h_chunk, init, chunk, |i, t, a| {
                    if i >= budget {
                        return Err(Error::SinkClosed);
                    }
                    tx.send((i, t, a.to_vec())).map_err(|_| Error::SinkClosed)
                })
            });
            for (expected, (i, t, a)) in rx.iter().enumerate() {
                assert_eq!(i, expected, "actions must arrive in order");
                match env.execute(&a) {
                    Ok(obs) => {
                        history.push(&obs)?;
                        rec.steps.push(StepRecord {
                            step,
                            chunk: chunk_idx,
                            t,
                            action: a.clone(),
                            obs,
                            wall_ns: start.elapsed().as_nanos(),
                        });
                        action = a;
                        step += 1;
                    }
                    Err(e) => {
                        fault = Some(e.to_string());
                        break;
                    }
                }
                if env.is_done() || step >= max_steps {
                    break;
                }
            }
            drop(rx);
            producer.join().expect("integrator thread panicked")
        });
        if let Some(f) = fault {
            rec.failed = Some(f);
            break;
        }
        match producer_result {
            Ok(_) | Err(Error::SinkClosed) => {}
            Err(e) => {
                rec.failed = Some(e.to_string());
                break;
            }
        }
        chunk_idx += 1;
    }
    rec.score = env.score();
    Ok(rec)
}

/// Integrates `n` full-horizon samples in lockstep and returns every
/// integrated state (the whole `(a, z)` for latent fields), each as a
/// trajectory over the `1 / dt + 1` grid points.
///
/// Plain fields start from `a₀ ~ N(a_init, σ²)` with `σ = sigma0_test`
/// (exactly `a_init` when it is zero). Latent fields start with `a₀ = a_init`
/// and `z₀ ~ N(0, I)`; `sigma0_test` is ignored for them.
pub fn sample_paths<F, R>(
    field: &F,
    history: &ObservationHistory,
    a_init: &[f64],
    sigma0_test: f64,
    n: usize,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<Trajectory>>
where
    F: VelocityField + ?Sized,
    R: Rng + ?Sized,
{
    if n == 0 {
        return Err(Error::Empty("sample count"));
    }
    if !(sigma0_test.is_finite() && sigma0_test >= 0.0) {
        return Err(Error::config("sigma0_test", "must be a finite nonnegative real"));
    }
    let steps_f = 1.0 / dt;
    let steps = steps_f.round();
    if !(dt > 0.0 && dt <= 1.0) || (steps_f - steps).abs() > 1e-9 {
        return Err(Error::config("dt", "1 / dt must be a positive integer"));
    }
    let steps = steps as usize;
    let sd = field.state_dim();
    let ad = field.action_dim();
    Error::check_dim("a_init", ad, a_init.len())?;
    let latent = field.is_latent();

    let mut states = Array2::<f64>::zeros((n, sd));
    for mut row in states.rows_mut() {
        for j in 0..sd {
            row[j] = if j < ad {
                let noise = if latent || sigma0_test == 0.0 {
                    0.0
                } else {
                    sigma0_test * rng.sample::<f64, _>(StandardNormal)
                };
                a_init[j] + noise
            } else {
                rng.sample(StandardNormal)
            };
        }
    }
    let mut paths: Vec<Vec<f64>> = states.rows().into_iter().map(|r| r.to_vec()).collect();
    let h = history.encode();
    for i in 0..steps {
        let t = i as f64 * dt;
        let v = field.velocity_batch(&states, t, h)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteVelocity { step: i, t });
        }
        states.scaled_add(dt, &v);
        for (p, row) in paths.iter_mut().zip(states.rows()) {
            p.extend(row.iter());
        }
    }
    paths.into_iter().map(|p| Trajectory::from_flat(sd, p)).collect()
}

/// Full-horizon action trajectories; see [`sample_paths`].
pub fn sample_trajectories<F, R>(
    field: &F,
    history: &ObservationHistory,
    a_init: &[f64],
    sigma0_test: f64,
    n: usize,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<Trajectory>>
where
    F: VelocityField + ?Sized,
    R: Rng + ?Sized,
{
    let ad = field.action_dim();
    let paths = sample_paths(field, history, a_init, sigma0_test, n, dt, rng)?;
    if !field.is_latent() {
        return Ok(paths);
    }
    paths
        .iter()
        .map(|p| {
            let flat: Vec<f64> = p.waypoints().flat_map(|w| w[..ad].iter().copied()).collect();
            Trajectory::from_flat(ad, flat)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ConstantField, Counted};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Mutex;

    fn h1() -> ObservationHistory {
        ObservationHistory::repeated(&[0.0], 2).unwrap()
    }

    #[test]
    fn chunk_emits_expected_count() {
        let chunk = ChunkParams::new(1.0, 0.5, 1.0 / 16.0).unwrap();
        let acts = integrate_chunk(&ConstantField(vec![0.0]), &h1(), &[0.3], &chunk, |_, _, _| Ok(())).unwrap();
        assert_eq!(acts.len(), 8);
        assert!(acts.iter().all(|a| a == &vec![0.3]));
    }

    #[test]
    fn constant_unit_field_is_integrated_exactly() {
        let chunk = ChunkParams::new(1.0, 1.0, 0.125).unwrap();
        let acts = integrate_chunk(&ConstantField(vec![1.0]), &h1(), &[0.25], &chunk, |_, _, _| Ok(())).unwrap();
        for (i, a) in acts.iter().enumerate() {
            assert!((a[0] - (0.25 + (i + 1) as f64 * 0.125)).abs() < 1e-15);
        }
    }

    #[test]
    fn sink_sees_action_before_next_evaluation() {
        #[derive(Debug, PartialEq)]
        enum Ev {
            Eval(usize),
            Emit(usize),
        }
        struct Logging<'a>(&'a Mutex<Vec<Ev>>, &'a Counted<ConstantField>);
        impl VelocityField for Logging<'_> {
            fn state_dim(&self) -> usize {
                1
            }
            fn velocity(&self, s: &[f64], t: f64, h: &[f64], out: &mut [f64]) -> Result<()> {
                let n = self.1.calls();
                self.0.lock().unwrap().push(Ev::Eval(n));
                self.1.velocity(s, t, h, out)
            }
        }
        let log = Mutex::new(Vec::new());
        let counted = Counted::new(ConstantField(vec![0.5]));
        let field = Logging(&log, &counted);
        let chunk = ChunkParams::new(1.0, 1.0, 0.25).unwrap();
        integrate_chunk(&field, &h1(), &[0.0], &chunk, |i, _, _| {
            log.lock().unwrap().push(Ev::Emit(i));
            Ok(())
        })
        .unwrap();
        let log = log.into_inner().unwrap();
        let expected: Vec<Ev> = (0..4).flat_map(|i| [Ev::Eval(i), Ev::Emit(i)]).collect();
        assert_eq!(log, expected);
    }

    #[test]
    fn non_finite_velocity_aborts() {
        let chunk = ChunkParams::new(1.0, 1.0, 0.5).unwrap();
        let r = integrate_chunk(&ConstantField(vec![f64::NAN]), &h1(), &[0.0], &chunk, |_, _, _| Ok(()));
        assert!(matches!(r, Err(Error::NonFiniteVelocity { step: 0, .. })));
    }

    #[test]
    fn deterministic_sampling_gives_identical_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let field = ConstantField(vec![0.7]);
        let s = sample_trajectories(&field, &h1(), &[0.1], 0.0, 2, 0.125, &mut rng).unwrap();
        assert_eq!(s[0], s[1]);
        assert_eq!(s[0].len(), 9);
        assert!((s[0].end()[0] - 0.8).abs() < 1e-12);
        assert!(sample_trajectories(&field, &h1(), &[0.1], 0.0, 2, 0.3, &mut rng).is_err());
    }

    /// Holds a position; measured state equals the last executed action.
    struct Hold {
        pos: Vec<f64>,
        steps: usize,
        horizon: usize,
    }

    impl Env for Hold {
        fn action_dim(&self) -> usize {
            1
        }
        fn obs_dim(&self) -> usize {
            1
        }
        fn reset(&mut self) -> Vec<f64> {
            self.steps = 0;
            self.pos.clone()
        }
        fn measured_state(&self) -> Vec<f64> {
            self.pos.clone()
        }
        fn execute(&mut self, a: &[f64]) -> Result<Vec<f64>> {
            if a[0].abs() > 10.0 {
                return Err(Error::EnvFault("out of range".into()));
            }
            self.pos = a.to_vec();
            self.steps += 1;
            Ok(self.pos.clone())
        }
        fn is_done(&self) -> bool {
            self.steps >= self.horizon
        }
        fn score(&self) -> f64 {
            1.0 - self.pos[0].abs().min(1.0)
        }
    }

    #[test]
    fn zero_field_holds_initial_position() {
        let mut env = Hold { pos: vec![0.4], steps: 0, horizon: 30 };
        let chunk = ChunkParams::new(1.0, 0.25, 1.0 / 16.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rec = run_receding_horizon(&ConstantField(vec![0.0]), &mut env, &chunk, InitMode::ActionImitation, 2, 100, &mut rng).unwrap();
        assert_eq!(rec.steps.len(), 30);
        assert!(rec.steps.iter().all(|s| s.action == vec![0.4]));
        assert_eq!(rec.chunk_starts, vec![0, 4, 8, 12, 16, 20, 24, 28]);
        assert!(rec.failed.is_none());
    }

    #[test]
    fn state_imitation_under_perfect_tracking_matches_action_imitation() {
        let chunk = ChunkParams::new(1.0, 0.25, 1.0 / 16.0).unwrap();
        let field = ConstantField(vec![0.5]);
        let mut recs = Vec::new();
        for mode in [InitMode::StateImitation, InitMode::ActionImitation] {
            let mut env = Hold { pos: vec![0.0], steps: 0, horizon: 20 };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            recs.push(run_receding_horizon(&field, &mut env, &chunk, mode, 2, 100, &mut rng).unwrap());
        }
        for (n, &s) in recs[0].chunk_starts.iter().enumerate().skip(1) {
            assert!((recs[0].chunk_inits[n][0] - recs[0].steps[s - 1].action[0]).abs() < 1e-12);
        }
        assert_eq!(recs[0].steps, recs[1].steps.iter().cloned().map(|mut s| { s.wall_ns = 0; s }).zip(&recs[0].steps).map(|(mut a, b)| { a.wall_ns = b.wall_ns; a }).collect::<Vec<_>>());
        // flow time restarts each chunk and advances by dt
        let ts: Vec<f64> = recs[0].steps[..4].iter().map(|s| s.t).collect();
        assert_eq!(ts, vec![0.0625, 0.125, 0.1875, 0.25]);
    }

    #[test]
    fn env_fault_returns_partial_record() {
        let mut env = Hold { pos: vec![9.0], steps: 0, horizon: 100 };
        let chunk = ChunkParams::new(1.0, 0.5, 0.125).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rec = run_receding_horizon(&ConstantField(vec![4.0]), &mut env, &chunk, InitMode::ActionImitation, 2, 100, &mut rng).unwrap();
        assert!(rec.failed.is_some());
        assert_eq!(rec.steps.len(), 2); // 9.5, 10.0 succeed; 10.5 faults
    }

    #[test]
    fn csv_layout() {
        let mut env = Hold { pos: vec![0.0], steps: 0, horizon: 2 };
        let chunk = ChunkParams::new(1.0, 1.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rec = run_receding_horizon(&ConstantField(vec![1.0]), &mut env, &chunk, InitMode::ActionImitation, 2, 10, &mut rng).unwrap();
        let csv = rec.to_csv(false);
        assert_eq!(csv, "step,chunk,t,a0,obs0\n0,0,0.5,0.5,0.5\n1,0,1,1,1\n");
        assert!(rec.to_csv(true).starts_with("step,chunk,t,a0,obs0,wall_ns\n"));
    }
}
