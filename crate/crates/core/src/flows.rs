//! Analytic conditional flows around a single demonstration.
//!
//! The plain flow pairs the field `ξ̇(t) − k (a − ξ(t))` with the initial
//! distribution `N(ξ(0), σ₀²)`; its per-time marginals form a Gaussian tube
//! `N(ξ(t), σ₀² e^{−2kt})`.
//!
//! The latent flow lives on the extended state `(a, z)`. The action starts
//! (almost) deterministically at `ξ(0)` while `z(0) ~ N(0, I)` carries the
//! stochasticity; both are pushed forward by an affine-in-state map, so the
//! joint distribution at every `t` is Gaussian with per-dimension 2×2
//! covariance. All Gaussians here are isotropic across action dimensions and
//! latent dimension `i` is paired with action dimension `i`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{Action, Trajectory};

/// Gain and initial spread of the stabilizing conditional flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub k: f64,
    pub sigma0: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { k: 5.0, sigma0: 0.05 }
    }
}

impl FlowConfig {
    pub fn new(k: f64, sigma0: f64) -> Result<Self> {
        let cfg = FlowConfig { k, sigma0 };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `σ₀ = 0` is permitted here; training additionally requires `σ₀ > 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k >= 0.0) {
            return Err(Error::config("flow.k", "must be a finite nonnegative real"));
        }
        if !(self.sigma0.is_finite() && self.sigma0 >= 0.0) {
            return Err(Error::config("flow.sigma0", "must be a finite nonnegative real"));
        }
        Ok(())
    }

    pub fn validate_for_training(&self) -> Result<()> {
        self.validate()?;
        if self.sigma0 <= 0.0 {
            return Err(Error::config("flow.sigma0", "must be positive during training"));
        }
        Ok(())
    }

    /// Tube standard deviation `σ₀ e^{−kt}`.
    pub fn std_at(&self, t: f64) -> f64 {
        self.sigma0 * (-self.k * t).exp()
    }
}

/// Parameters of the latent-variable flow. The residual deviation `σ_r` is
/// always derived from the other three.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentFlowConfig {
    pub sigma0: f64,
    pub sigma1: f64,
    pub k: f64,
}

impl LatentFlowConfig {
    pub fn new(sigma0: f64, sigma1: f64, k: f64) -> Result<Self> {
        let cfg = LatentFlowConfig { sigma0, sigma1, k };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k >= 0.0) {
            return Err(Error::config("flow.k", "must be a finite nonnegative real"));
        }
        if !(self.sigma0.is_finite() && self.sigma0 >= 0.0) {
            return Err(Error::config("flow.sigma0", "must be a finite nonnegative real"));
        }
        if !(self.sigma1.is_finite() && self.sigma1 > 0.0) {
            return Err(Error::config("flow.sigma1", "must be a finite positive real"));
        }
        if self.sigma1 < self.sigma0 * (-self.k).exp() {
            return Err(Error::config("flow.sigma1", "must satisfy sigma1 >= sigma0 * exp(-k)"));
        }
        Ok(())
    }

    /// `σ_r = sqrt(σ₁² − σ₀² e^{−2k})`.
    pub fn sigma_r(&self) -> f64 {
        (self.sigma1 * self.sigma1 - self.sigma0 * self.sigma0 * (-2.0 * self.k).exp())
            .max(0.0)
            .sqrt()
    }

    /// `1 − (1 − σ₁) t`, the contraction factor of the latent.
    fn latent_scale(&self, t: f64) -> f64 {
        1.0 - (1.0 - self.sigma1) * t
    }
}

/// Isotropic Gaussian over action space.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl Gaussian {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .map(|m| m + self.std * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// Joint Gaussian over `(a, z)`: per action dimension a 2×2 covariance
/// `[[s11, s12], [s12, s22]]`, shared by all dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian2 {
    pub mean_a: Vec<f64>,
    pub mean_z: Vec<f64>,
    pub s11: f64,
    pub s12: f64,
    pub s22: f64,
}

impl Gaussian2 {
    pub const PSD_TOL: f64 = 1e-12;

    pub fn check_psd(&self) -> Result<()> {
        let det = self.s11 * self.s22 - self.s12 * self.s12;
        if self.s11 < 0.0 || self.s22 < 0.0 || det < -Self::PSD_TOL {
            return Err(Error::NotPsd { det });
        }
        Ok(())
    }

    /// Draws `(a, z)` through the lower Cholesky factor of the 2×2 block.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_psd()?;
        let l11 = self.s11.sqrt();
        let (l21, l22) = if l11 > 0.0 {
            let l21 = self.s12 / l11;
            (l21, (self.s22 - l21 * l21).max(0.0).sqrt())
        } else {
            (0.0, self.s22.sqrt())
        };
        let mut a = Vec::with_capacity(self.mean_a.len());
        let mut z = Vec::with_capacity(self.mean_z.len());
        for (ma, mz) in self.mean_a.iter().zip(&self.mean_z) {
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            a.push(ma + l11 * e1);
            z.push(mz + l21 * e1 + l22 * e2);
        }
        Ok((a, z))
    }
}

/// `v_ξ(a, t) = ξ̇(t) − k (a − ξ(t))`, written into `out`.
pub fn conditional_velocity_into(
    xi: &Trajectory,
    a: &[f64],
    t: f64,
    cfg: &FlowConfig,
    out: &mut [f64],
) -> Result<()> {
    Error::check_dim("action", xi.dim(), a.len())?;
    let mut pos = vec![0.0; xi.dim()];
    xi.eval_into(t, &mut pos)?;
    xi.deriv_into(t, out)?;
    for ((o, p), ai) in out.iter_mut().zip(&pos).zip(a) {
        *o -= cfg.k * (ai - p);
    }
    Ok(())
}

pub fn conditional_velocity(xi: &Trajectory, a: &[f64], t: f64, cfg: &FlowConfig) -> Result<Vec<f64>> {
    let mut out = vec![0.0; xi.dim()];
    conditional_velocity_into(xi, a, t, cfg, &mut out)?;
    Ok(out)
}

/// Per-time marginal of the conditional flow: `N(ξ(t), σ₀² e^{−2kt})`.
pub fn conditional_marginal(xi: &Trajectory, t: f64, cfg: &FlowConfig) -> Result<Gaussian> {
    Ok(Gaussian {
        mean: xi.eval(t)?.into_inner(),
        std: cfg.std_at(t),
    })
}

pub fn sample_conditional<R: Rng + ?Sized>(
    xi: &Trajectory,
    t: f64,
    cfg: &FlowConfig,
    rng: &mut R,
) -> Result<Action> {
    Action::new(conditional_marginal(xi, t, cfg)?.sample(rng))
}

/// Pushes `(a₀, z₀)` through the latent flow to time `t`:
///
/// ```text
/// a = ξ(t) + (a₀ − ξ(0)) e^{−kt} + σ_r t z₀
/// z = (1 − (1 − σ₁) t) z₀ + t ξ(t)
/// ```
pub fn latent_flow_forward(
    xi: &Trajectory,
    a0: &[f64],
    z0: &[f64],
    t: f64,
    cfg: &LatentFlowConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    Error::check_dim("a0", xi.dim(), a0.len())?;
    Error::check_dim("z0", xi.dim(), z0.len())?;
    let pos = xi.eval(t)?;
    let start = xi.start();
    let decay = (-cfg.k * t).exp();
    let sr_t = cfg.sigma_r() * t;
    let scale = cfg.latent_scale(t);
    let mut a = Vec::with_capacity(a0.len());
    let mut z = Vec::with_capacity(z0.len());
    for i in 0..a0.len() {
        a.push(pos[i] + (a0[i] - start[i]) * decay + sr_t * z0[i]);
        z.push(scale * z0[i] + t * pos[i]);
    }
    Ok((a, z))
}

/// Inverse of [`latent_flow_forward`] at time `t`.
pub fn latent_flow_inverse(
    xi: &Trajectory,
    a: &[f64],
    z: &[f64],
    t: f64,
    cfg: &LatentFlowConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    Error::check_dim("a", xi.dim(), a.len())?;
    Error::check_dim("z", xi.dim(), z.len())?;
    let pos = xi.eval(t)?;
    let start = xi.start();
    let grow = (cfg.k * t).exp();
    let sr_t = cfg.sigma_r() * t;
    let scale = cfg.latent_scale(t);
    let mut a0 = Vec::with_capacity(a.len());
    let mut z0 = Vec::with_capacity(z.len());
    for i in 0..a.len() {
        let zi0 = (z[i] - t * pos[i]) / scale;
        z0.push(zi0);
        a0.push(start[i] + (a[i] - pos[i] - sr_t * zi0) * grow);
    }
    Ok((a0, z0))
}

/// Conditional velocity of the latent flow at `(a, z, t)`, written into
/// `va` and `vz`.
pub fn latent_conditional_velocity_into(
    xi: &Trajectory,
    a: &[f64],
    z: &[f64],
    t: f64,
    cfg: &LatentFlowConfig,
    va: &mut [f64],
    vz: &mut [f64],
) -> Result<()> {
    let d = xi.dim();
    Error::check_dim("a", d, a.len())?;
    Error::check_dim("z", d, z.len())?;
    Error::check_dim("va", d, va.len())?;
    Error::check_dim("vz", d, vz.len())?;
    let mut pos = vec![0.0; d];
    let mut vel = vec![0.0; d];
    xi.eval_into(t, &mut pos)?;
    xi.deriv_into(t, &mut vel)?;
    let scale = cfg.latent_scale(t);
    let coupling = cfg.sigma_r() * (1.0 + cfg.k * t) / scale;
    let contraction = (1.0 - cfg.sigma1) / scale;
    for i in 0..d {
        let dz = z[i] - t * pos[i];
        va[i] = vel[i] - cfg.k * (a[i] - pos[i]) + coupling * dz;
        vz[i] = pos[i] + t * vel[i] - contraction * dz;
    }
    Ok(())
}

pub fn latent_conditional_velocity(
    xi: &Trajectory,
    a: &[f64],
    z: &[f64],
    t: f64,
    cfg: &LatentFlowConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut va = vec![0.0; xi.dim()];
    let mut vz = vec![0.0; xi.dim()];
    latent_conditional_velocity_into(xi, a, z, t, cfg, &mut va, &mut vz)?;
    Ok((va, vz))
}

/// Joint Gaussian of `(a, z)` at time `t` under the latent flow.
pub fn latent_joint(xi: &Trajectory, t: f64, cfg: &LatentFlowConfig) -> Result<Gaussian2> {
    let pos = xi.eval(t)?.into_inner();
    let sr = cfg.sigma_r();
    let scale = cfg.latent_scale(t);
    let s0 = cfg.sigma0 * (-cfg.k * t).exp();
    Ok(Gaussian2 {
        mean_z: pos.iter().map(|p| t * p).collect(),
        mean_a: pos,
        s11: s0 * s0 + sr * sr * t * t,
        s12: sr * t * scale,
        s22: scale * scale,
    })
}
