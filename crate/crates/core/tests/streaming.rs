use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use streaming_flow::envs::{PointMassConfig, PointMassEnv};
use streaming_flow::field::{ConditionalField, ConstantField};
use streaming_flow::stream::{integrate_chunk, run_receding_horizon, sample_trajectories, InitMode};
use streaming_flow::*;

#[derive(Debug, PartialEq)]
enum Event {
    Eval,
    Emit(usize),
}

/// Zero field that logs every evaluation into a shared sequence.
struct Logged<'a> {
    log: &'a Mutex<Vec<Event>>,
}

impl VelocityField for Logged<'_> {
    fn state_dim(&self) -> usize {
        2
    }

    fn velocity(&self, _state: &[f64], _t: f64, _h: &[f64], out: &mut [f64]) -> Result<()> {
        self.log.lock().unwrap().push(Event::Eval);
        out.fill(0.25);
        Ok(())
    }
}

#[test]
fn each_action_reaches_the_sink_before_the_next_evaluation() {
    let log = Mutex::new(Vec::new());
    let field = Logged { log: &log };
    let h = ObservationHistory::repeated(&[0.0, 0.0], 2).unwrap();
    let chunk = ChunkParams::new(1.6, 0.8, 1.0 / 16.0).unwrap();
    let actions = integrate_chunk(&field, &h, &[0.0, 1.0], &chunk, |i, t, a| {
        assert!((t - (i + 1) as f64 / 16.0).abs() < 1e-12);
        assert_eq!(a.len(), 2);
        log.lock().unwrap().push(Event::Emit(i));
        Ok(())
    })
    .unwrap();
    assert_eq!(actions.len(), 8);
    let log = log.into_inner().unwrap();
    let expected: Vec<Event> = (0..8).flat_map(|i| [Event::Eval, Event::Emit(i)]).collect();
    assert_eq!(log, expected);
    assert!((actions[7][1] - (1.0 + 8.0 * 0.25 / 16.0)).abs() < 1e-12);
}

#[test]
fn zero_field_holds_the_point_mass_in_place() {
    let cfg = PointMassConfig { start_jitter: 0.0, ..Default::default() };
    let mut env = PointMassEnv::new(cfg).unwrap();
    let chunk = ChunkParams::from_steps(1.6, 8, 1.0 / 16.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rec = run_receding_horizon(&ConstantField(vec![0.0; 2]), &mut env, &chunk, InitMode::StateImitation, 2, 40, &mut rng)
        .unwrap();
    assert!(rec.failed.is_none());
    assert_eq!(rec.steps.len(), 40);
    assert_eq!(rec.chunk_starts, vec![0, 8, 16, 24, 32]);
    for s in &rec.steps {
        assert!(s.action.iter().all(|a| a.abs() < 1e-12));
    }
    assert!(env.position().iter().all(|p| p.abs() < 1e-9));
}

#[test]
fn flow_time_advances_by_dt_within_each_chunk() {
    let mut env = PointMassEnv::new(PointMassConfig::default()).unwrap();
    let chunk = ChunkParams::from_steps(1.6, 4, 1.0 / 16.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let field = ConstantField(vec![0.1, 0.2]);
    let rec = run_receding_horizon(&field, &mut env, &chunk, InitMode::ActionImitation, 2, 20, &mut rng).unwrap();
    for w in rec.steps.windows(2) {
        if w[0].chunk == w[1].chunk {
            assert!((w[1].t - w[0].t - 1.0 / 16.0).abs() < 1e-12);
        } else {
            assert!((w[1].t - 1.0 / 16.0).abs() < 1e-12);
        }
    }
    let csv = rec.to_csv(false);
    assert_eq!(csv.lines().next().unwrap(), "step,chunk,t,a0,a1,obs0,obs1");
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn euler_error_shrinks_with_dt() {
    let xi = Trajectory::from_fn(257, 1, |t| vec![(4.0 * t).sin()]).unwrap();
    let field = ConditionalField { trajectory: xi, flow: FlowConfig::new(3.0, 0.1).unwrap() };
    let h = ObservationHistory::repeated(&[0.0], 2).unwrap();
    let run = |dt: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        sample_trajectories(&field, &h, &[0.3], 0.0, 1, dt, &mut rng).unwrap().remove(0)
    };
    let reference = run(1.0 / 4096.0);
    let deviation = |tr: &Trajectory| {
        (0..=32)
            .map(|i| {
                let t = i as f64 / 32.0;
                (tr.eval(t).unwrap()[0] - reference.eval(t).unwrap()[0]).abs()
            })
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (deviation(&run(1.0 / 32.0)), deviation(&run(1.0 / 64.0)));
    assert!(coarse / fine >= 1.5, "{coarse} vs {fine}");
}

#[test]
fn deterministic_sampling_without_noise() {
    let xi = Trajectory::from_fn(17, 1, |t| vec![t]).unwrap();
    let field = ConditionalField { trajectory: xi, flow: FlowConfig::new(2.0, 0.1).unwrap() };
    let h = ObservationHistory::repeated(&[0.0], 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = sample_trajectories(&field, &h, &[0.0], 0.0, 2, 1.0 / 16.0, &mut rng).unwrap();
    assert_eq!(s[0], s[1]);
}
