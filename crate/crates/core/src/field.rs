//! The velocity-field abstraction shared by learned models, analytic flows
//! and test doubles.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::flows::{conditional_velocity_into, FlowConfig};
use crate::trajectory::Trajectory;

pub trait VelocityField: Sync {
    /// Dimension of the integrated state.
    fn state_dim(&self) -> usize;

    /// Leading part of the state that is an action. Equal to `state_dim`
    /// except for latent-variable fields, whose state is `(a, z)`.
    fn action_dim(&self) -> usize {
        self.state_dim()
    }

    fn is_latent(&self) -> bool {
        self.action_dim() != self.state_dim()
    }

    fn velocity(&self, state: &[f64], t: f64, history: &[f64], out: &mut [f64]) -> Result<()>;

    /// Velocities for every row of `states` under a shared `t` and history.
    fn velocity_batch(&self, states: &Array2<f64>, t: f64, history: &[f64]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(states.raw_dim());
        for (s, mut o) in states.rows().into_iter().zip(out.rows_mut()) {
            self.velocity(
                s.as_slice().expect("contiguous row"),
                t,
                history,
                o.as_slice_mut().expect("contiguous row"),
            )?;
        }
        Ok(out)
    }
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn velocity(&self, state: &[f64], t: f64, history: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).velocity(state, t, history, out)
    }
    fn velocity_batch(&self, states: &Array2<f64>, t: f64, history: &[f64]) -> Result<Array2<f64>> {
        (**self).velocity_batch(states, t, history)
    }
}

/// Counts evaluations of the wrapped field. A batched call counts once.
pub struct Counted<F> {
    inner: F,
    calls: AtomicUsize,
}

impl<F> Counted<F> {
    pub fn new(inner: F) -> Self {
        Counted {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }
}

impl<F: VelocityField> VelocityField for Counted<F> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn velocity(&self, state: &[f64], t: f64, history: &[f64], out: &mut [f64]) -> Result<()> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.velocity(state, t, history, out)
    }
    fn velocity_batch(&self, states: &Array2<f64>, t: f64, history: &[f64]) -> Result<Array2<f64>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.velocity_batch(states, t, history)
    }
}

/// A field that returns the same vector everywhere.
#[derive(Clone, Debug)]
pub struct ConstantField(pub Vec<f64>);

impl VelocityField for ConstantField {
    fn state_dim(&self) -> usize {
        self.0.len()
    }
    fn velocity(&self, state: &[f64], _t: f64, _h: &[f64], out: &mut [f64]) -> Result<()> {
        Error::check_dim("state", self.0.len(), state.len())?;
        out.copy_from_slice(&self.0);
        Ok(())
    }
}

/// The analytic stabilizing field around a single trajectory, ignoring the
/// history.
#[derive(Clone, Debug)]
pub struct ConditionalField {
    pub trajectory: Trajectory,
    pub flow: FlowConfig,
}

impl VelocityField for ConditionalField {
    fn state_dim(&self) -> usize {
        self.trajectory.dim()
    }
    fn velocity(&self, state: &[f64], t: f64, _h: &[f64], out: &mut [f64]) -> Result<()> {
        conditional_velocity_into(&self.trajectory, state, t.clamp(0.0, 1.0), &self.flow, out)
    }
}
