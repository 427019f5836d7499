//! Conditional flow-matching training.
//!
//! Each step draws `batch_size` demonstrations uniformly with replacement,
//! one `(t, a)` pair per draw, regresses the network onto the analytic
//! conditional velocity at that point and takes one Adam step.

use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Demonstration};
use crate::error::{Error, Result};
use crate::flows::{
    conditional_velocity_into, latent_conditional_velocity_into, latent_joint, FlowConfig,
    LatentFlowConfig,
};
use crate::model::{FlowSpec, VelocityModel};
use crate::net::{adam_step, AdamConfig, AdamState, Batch, Mlp, NetDims, TrainingSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub flow: FlowSpec,
    pub batch_size: usize,
    pub num_steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            flow: FlowSpec::Plain(FlowConfig::default()),
            batch_size: 256,
            num_steps: 5000,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            seed: 0,
            hidden: NetDims::default_hidden(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(Error::config("train.num_steps", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("train.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("train.beta2", "must lie in [0, 1)"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::config("train.eps", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("train.hidden", "layer widths must be positive"));
        }
        match &self.flow {
            FlowSpec::Plain(f) => f.validate_for_training(),
            FlowSpec::Latent(l) => {
                l.validate()?;
                if l.sigma0 <= 0.0 {
                    return Err(Error::config("train.flow.sigma0", "must be positive during training"));
                }
                Ok(())
            }
            FlowSpec::Baseline { horizon } => {
                if *horizon < 2 {
                    return Err(Error::config("train.flow.horizon", "must be >= 2"));
                }
                Ok(())
            }
        }
    }
}

/// `(a, t, h, v_target)` for the plain conditional flow.
pub fn sample_cfm_target<R: Rng + ?Sized>(
    demo: &Demonstration,
    cfg: &FlowConfig,
    rng: &mut R,
) -> Result<TrainingSample> {
    let xi = &demo.trajectory;
    let t: f64 = rng.random();
    let a = crate::flows::conditional_marginal(xi, t, cfg)?.sample(rng);
    let mut target = vec![0.0; xi.dim()];
    conditional_velocity_into(xi, &a, t, cfg, &mut target)?;
    Ok(TrainingSample {
        state: a,
        t,
        history: demo.history.encode().to_vec(),
        target,
    })
}

/// `((a, z), t, h, (v_a, v_z))` for the latent-variable flow. The state and
/// target vectors are the concatenations `[a, z]` and `[v_a, v_z]`.
pub fn sample_cfm_target_latent<R: Rng + ?Sized>(
    demo: &Demonstration,
    cfg: &LatentFlowConfig,
    rng: &mut R,
) -> Result<TrainingSample> {
    let xi = &demo.trajectory;
    let d = xi.dim();
    let t: f64 = rng.random();
    let (a, z) = latent_joint(xi, t, cfg)?.sample(rng)?;
    let mut target = vec![0.0; 2 * d];
    let (va, vz) = target.split_at_mut(d);
    latent_conditional_velocity_into(xi, &a, &z, t, cfg, va, vz)?;
    let mut state = a;
    state.extend_from_slice(&z);
    Ok(TrainingSample {
        state,
        t,
        history: demo.history.encode().to_vec(),
        target,
    })
}

/// Per-step training losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub losses: Vec<f64>,
}

impl LossCurve {
    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// Mean of the final `n` recorded losses.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let n = n.min(self.losses.len()).max(1);
        self.losses[self.losses.len() - n..].iter().sum::<f64>() / n as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Generic minibatch regression loop shared by the policy and baseline
/// trainers.
pub(crate) fn fit<R, S>(
    params: &mut Mlp,
    adam: &AdamConfig,
    num_steps: usize,
    batch_size: usize,
    rng: &mut R,
    mut draw: S,
) -> Result<LossCurve>
where
    R: Rng,
    S: FnMut(usize, &mut R) -> Result<TrainingSample>,
{
    let mut state = AdamState::new(params);
    let mut curve = LossCurve {
        losses: Vec::with_capacity(num_steps),
    };
    let mut samples = Vec::with_capacity(batch_size);
    for step in 0..num_steps {
        samples.clear();
        for _ in 0..batch_size {
            samples.push(draw(step, rng)?);
        }
        let batch = Batch::from_samples(&samples)?;
        let (loss, grads) = params.loss_grad(&batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        adam_step(params, &mut state, &grads, adam)?;
        curve.losses.push(loss);
    }
    Ok(curve)
}

pub struct TrainOutcome {
    pub model: VelocityModel,
    pub losses: LossCurve,
}

/// Trains with demonstrations drawn uniformly with replacement.
pub fn train_policy(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let n = ds.len();
    train_policy_with_sampler(ds, cfg, move |_, rng: &mut ChaCha8Rng| rng.random_range(0..n))
}

/// Like [`train_policy`], with the demonstration index of every batch
/// element chosen by `pick(step, rng)`.
pub fn train_policy_with_sampler<P>(ds: &Dataset, cfg: &TrainConfig, mut pick: P) -> Result<TrainOutcome>
where
    P: FnMut(usize, &mut ChaCha8Rng) -> usize,
{
    cfg.validate()?;
    ds.validate()?;
    if let FlowSpec::Baseline { .. } = cfg.flow {
        return Err(Error::config(
            "train.flow.variant",
            "baseline models are trained with baseline::baseline_train",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = NetDims {
        state_dim: cfg.flow.state_dim(ds.action_dim),
        history_width: ds.history_width(),
        hidden: cfg.hidden.clone(),
    };
    let mut params = Mlp::init(rng.next_u64(), &dims)?;
    let flow = cfg.flow;
    let losses = fit(&mut params, &cfg.adam(), cfg.num_steps, cfg.batch_size, &mut rng, |step, rng| {
        let idx = pick(step, rng);
        let demo = ds.demos.get(idx).ok_or(Error::DimensionMismatch {
            what: "demo index",
            expected: ds.len(),
            found: idx,
        })?;
        match &flow {
            FlowSpec::Plain(f) => sample_cfm_target(demo, f, rng),
            FlowSpec::Latent(l) => sample_cfm_target_latent(demo, l, rng),
            FlowSpec::Baseline { .. } => unreachable!("rejected above"),
        }
    })?;
    let mut model = VelocityModel::new(
        flow,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ObservationHistory;
    use crate::trajectory::Trajectory;

    fn line_demo() -> Demonstration {
        Demonstration {
            history: ObservationHistory::repeated(&[0.0], 2).unwrap(),
            trajectory: Trajectory::from_fn(17, 1, |t| vec![t]).unwrap(),
        }
    }

    #[test]
    fn degenerate_tube_targets_are_the_demo() {
        let demo = line_demo();
        let cfg = FlowConfig { k: 0.0, sigma0: 1e-12 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let s = sample_cfm_target(&demo, &cfg, &mut rng).unwrap();
            assert!((s.state[0] - s.t).abs() < 1e-6);
            assert!((s.target[0] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_demo_target_closed_form() {
        let demo = line_demo();
        let cfg = FlowConfig { k: 3.0, sigma0: 0.2 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let s = sample_cfm_target(&demo, &cfg, &mut rng).unwrap();
            let expect = 1.0 - cfg.k * (s.state[0] - s.t);
            assert!((s.target[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_times_are_uniform() {
        let demo = line_demo();
        let cfg = FlowConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut ts: Vec<f64> = (0..n)
            .map(|_| sample_cfm_target(&demo, &cfg, &mut rng).unwrap().t)
            .collect();
        ts.sort_by(f64::total_cmp);
        let ks = ts
            .iter()
            .enumerate()
            .map(|(i, &t)| ((i + 1) as f64 / n as f64 - t).abs().max((t - i as f64 / n as f64).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS = {ks}");
    }

    #[test]
    fn latent_targets_at_joint_mean_reduce_to_demo_velocity() {
        // With σ₀ → 0 and t tiny, z is essentially the initial N(0, 1) draw.
        let demo = line_demo();
        let cfg = LatentFlowConfig::new(1e-9, 0.2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut zs = Vec::new();
        for _ in 0..20_000 {
            let s = sample_cfm_target_latent(&demo, &cfg, &mut rng).unwrap();
            if s.t < 0.01 {
                zs.push(s.state[1]);
            }
        }
        let n = zs.len() as f64;
        let mean = zs.iter().sum::<f64>() / n;
        let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 4.0 / n.sqrt(), "{mean}");
        assert!((var - 1.0).abs() < 0.15, "{var}");

        let t = 0.6;
        let (va, _) = crate::flows::latent_conditional_velocity(
            &demo.trajectory,
            &[t],
            &[t * t],
            t,
            &cfg,
        )
        .unwrap();
        assert!((va[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = TrainConfig::default();
        c.num_steps = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.flow = FlowSpec::Plain(FlowConfig { k: 1.0, sigma0: 0.0 });
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn loss_curve_csv() {
        let c = LossCurve { losses: vec![0.5, 0.25] };
        assert_eq!(c.to_csv(), "step,loss\n0,0.5\n1,0.25\n");
        assert_eq!(c.tail_mean(1), 0.25);
    }
}
