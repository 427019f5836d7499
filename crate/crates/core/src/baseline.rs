//! A conventional trajectory-space flow-matching policy.
//!
//! The whole horizon of `H` waypoints is one vector in `R^{H·d}`. Sampling
//! starts from Gaussian noise and integrates a learned field over
//! `s ∈ [0, 1]`; no action exists until the last step finishes.

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, ObservationHistory};
use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::model::{FlowSpec, VelocityModel};
use crate::net::{Mlp, NetDims, TrainingSample};
use crate::train::{fit, TrainConfig, TrainOutcome};
use crate::trajectory::Trajectory;

pub const DEFAULT_HORIZON: usize = 16;

/// A training config for the baseline with the default horizon.
pub fn default_config() -> TrainConfig {
    TrainConfig {
        flow: FlowSpec::Baseline { horizon: DEFAULT_HORIZON },
        ..TrainConfig::default()
    }
}

/// `x_s = (1 − s)·x₀ + s·x₁` with `x₀ ~ N(0, I)`; the target is `x₁ − x₀`.
pub fn sample_baseline_target<R: Rng + ?Sized>(
    x1: &[f64],
    history: &ObservationHistory,
    rng: &mut R,
) -> TrainingSample {
    let s: f64 = rng.random();
    let mut state = Vec::with_capacity(x1.len());
    let mut target = Vec::with_capacity(x1.len());
    for &x in x1 {
        let x0: f64 = rng.sample(StandardNormal);
        state.push((1.0 - s) * x0 + s * x);
        target.push(x - x0);
    }
    TrainingSample { state, t: s, history: history.encode().to_vec(), target }
}

/// Trains the trajectory-space field on demonstrations resampled to the
/// configured horizon.
pub fn baseline_train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    ds.validate()?;
    let FlowSpec::Baseline { horizon } = cfg.flow else {
        return Err(Error::config("train.flow.variant", "baseline trainer needs variant `baseline`"));
    };
    let vectors = ds
        .trajectories()
        .map(|t| Ok(t.resample(horizon)?.as_flat().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = NetDims {
        state_dim: horizon * ds.action_dim,
        history_width: ds.history_width(),
        hidden: cfg.hidden.clone(),
    };
    let mut params = Mlp::init(rng.next_u64(), &dims)?;
    let n = ds.len();
    let losses = fit(&mut params, &cfg.adam(), cfg.num_steps, cfg.batch_size, &mut rng, |_, rng| {
        let i = rng.random_range(0..n);
        Ok(sample_baseline_target(&vectors[i], &ds.demos[i].history, rng))
    })?;
    let mut model = VelocityModel::new(
        cfg.flow,
        ds.action_dim,
        ds.obs_dim,
        ds.history_len,
        ds.t_pred_seconds,
        params,
        cfg.hidden.clone(),
    )?;
    model.train_config = Some(serde_json::to_value(cfg)?);
    Ok(TrainOutcome { model, losses })
}

fn horizon_of<F: VelocityField + ?Sized>(field: &F, action_dim: usize) -> Result<usize> {
    let sd = field.state_dim();
    if action_dim == 0 || !sd.is_multiple_of(action_dim) || sd / action_dim < 2 {
        return Err(Error::DimensionMismatch { what: "baseline state_dim", expected: action_dim, found: sd });
    }
    Ok(sd / action_dim)
}

/// Draws `n` trajectories by Euler-integrating from noise in `num_steps`
/// steps. Only the final state is reshaped into a trajectory.
pub fn baseline_sample_n<F, R>(
    field: &F,
    action_dim: usize,
    history: &ObservationHistory,
    num_steps: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>>
where
    F: VelocityField + ?Sized,
    R: Rng + ?Sized,
{
    if num_steps == 0 {
        return Err(Error::config("num_steps", "must be >= 1"));
    }
    if n == 0 {
        return Err(Error::Empty("sample count"));
    }
    horizon_of(field, action_dim)?;
    let sd = field.state_dim();
    let mut x = Array2::from_shape_fn((n, sd), |_| rng.sample::<f64, _>(StandardNormal));
    let ds = 1.0 / num_steps as f64;
    let h = history.encode();
    for i in 0..num_steps {
        let v = field.velocity_batch(&x, i as f64 * ds, h)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteVelocity { step: i, t: i as f64 * ds });
        }
        x.scaled_add(ds, &v);
    }
    x.rows()
        .into_iter()
        .map(|r| Trajectory::from_flat(action_dim, r.to_vec()))
        .collect()
}

/// One trajectory; see [`baseline_sample_n`].
pub fn baseline_sample<F, R>(
    field: &F,
    action_dim: usize,
    history: &ObservationHistory,
    num_steps: usize,
    rng: &mut R,
) -> Result<Trajectory>
where
    F: VelocityField + ?Sized,
    R: Rng + ?Sized,
{
    Ok(baseline_sample_n(field, action_dim, history, num_steps, 1, rng)?.remove(0))
}

/// Per-sample sequential variant that evaluates the field one state at a
/// time, as a robot controller would for a single chunk.
pub fn baseline_sample_single<F, R>(
    field: &F,
    action_dim: usize,
    history: &ObservationHistory,
    num_steps: usize,
    rng: &mut R,
) -> Result<Trajectory>
where
    F: VelocityField + ?Sized,
    R: Rng + ?Sized,
{
    if num_steps == 0 {
        return Err(Error::config("num_steps", "must be >= 1"));
    }
    horizon_of(field, action_dim)?;
    let sd = field.state_dim();
    let mut x: Vec<f64> = (0..sd).map(|_| rng.sample(StandardNormal)).collect();
    let mut v = vec![0.0; sd];
    let ds = 1.0 / num_steps as f64;
    let h = history.encode();
    for i in 0..num_steps {
        field.velocity(&x, i as f64 * ds, h, &mut v)?;
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += ds * vi;
        }
    }
    Trajectory::from_flat(action_dim, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ConstantField, Counted};

    fn h() -> ObservationHistory {
        ObservationHistory::repeated(&[0.0], 2).unwrap()
    }

    #[test]
    fn zero_field_returns_noise() {
        let field = ConstantField(vec![0.0; 8]);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let traj = baseline_sample(&field, 2, &h(), 5, &mut a).unwrap();
        let noise: Vec<f64> = (0..8).map(|_| b.sample(StandardNormal)).collect();
        assert_eq!(traj.as_flat(), noise.as_slice());
        assert_eq!(traj.len(), 4);
    }

    #[test]
    fn single_step_is_one_push() {
        let field = ConstantField(vec![0.5, -1.0]);
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        let traj = baseline_sample(&field, 1, &h(), 1, &mut a).unwrap();
        let x0: Vec<f64> = (0..2).map(|_| b.sample(StandardNormal)).collect();
        assert_eq!(traj.as_flat(), &[x0[0] + 0.5, x0[1] - 1.0]);
    }

    #[test]
    fn evaluation_count_equals_steps() {
        let field = Counted::new(ConstantField(vec![0.0; 16]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        baseline_sample_single(&field, 1, &h(), 10, &mut rng).unwrap();
        assert_eq!(field.calls(), 10);
        field.reset();
        baseline_sample_n(&field, 1, &h(), 10, 4, &mut rng).unwrap();
        assert_eq!(field.calls(), 10);
    }

    #[test]
    fn targets_follow_linear_interpolant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x1 = [0.3, -0.2, 0.9];
        for _ in 0..20 {
            let s = sample_baseline_target(&x1, &h(), &mut rng);
            for j in 0..3 {
                let x0 = x1[j] - s.target[j];
                assert!((s.state[j] - ((1.0 - s.t) * x0 + s.t * x1[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn plain_config_rejected() {
        let ds = crate::envs::gen_single_line(1.0).unwrap();
        assert!(baseline_train(&ds, &TrainConfig::default()).is_err());
        let mut cfg = default_config();
        cfg.flow = FlowSpec::Baseline { horizon: 1 };
        assert!(baseline_train(&ds, &cfg).is_err());
    }
}
