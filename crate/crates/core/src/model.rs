//! Trained velocity models and their checkpoint files.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::flows::{FlowConfig, LatentFlowConfig};
use crate::net::{write_features, Mlp, NetDims, TIME_FEATURES};

const CHECKPOINT_FORMAT: &str = "sfp-checkpoint/1";

/// Which conditional construction a model was trained against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum FlowSpec {
    Plain(FlowConfig),
    Latent(LatentFlowConfig),
    /// Trajectory-space flow over `horizon` waypoints.
    Baseline { horizon: usize },
}

impl FlowSpec {
    pub fn name(&self) -> &'static str {
        match self {
            FlowSpec::Plain(_) => "plain",
            FlowSpec::Latent(_) => "latent",
            FlowSpec::Baseline { .. } => "baseline",
        }
    }

    pub fn state_dim(&self, action_dim: usize) -> usize {
        match self {
            FlowSpec::Plain(_) => action_dim,
            FlowSpec::Latent(_) => 2 * action_dim,
            FlowSpec::Baseline { horizon } => horizon * action_dim,
        }
    }
}

/// `v_θ(a, t | h)` together with the metadata needed to use it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityModel {
    pub format: String,
    pub flow: FlowSpec,
    pub action_dim: usize,
    pub obs_dim: usize,
    pub history_len: usize,
    pub t_pred_seconds: f64,
    pub net: NetDims,
    /// Echo of the training configuration, for provenance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<serde_json::Value>,
    pub params: Mlp,
}

impl VelocityModel {
    pub fn new(
        flow: FlowSpec,
        action_dim: usize,
        obs_dim: usize,
        history_len: usize,
        t_pred_seconds: f64,
        params: Mlp,
        hidden: Vec<usize>,
    ) -> Result<Self> {
        let net = NetDims {
            state_dim: flow.state_dim(action_dim),
            history_width: obs_dim * history_len,
            hidden,
        };
        let m = VelocityModel {
            format: CHECKPOINT_FORMAT.to_string(),
            flow,
            action_dim,
            obs_dim,
            history_len,
            t_pred_seconds,
            net,
            train_config: None,
            params,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::config("format", format!("expected {CHECKPOINT_FORMAT}")));
        }
        Error::check_dim("state_dim", self.flow.state_dim(self.action_dim), self.net.state_dim)?;
        Error::check_dim("history_width", self.obs_dim * self.history_len, self.net.history_width)?;
        Error::check_dim("network input", self.net.input_dim(), self.params.input_dim())?;
        Error::check_dim("network output", self.net.output_dim(), self.params.output_dim())?;
        Ok(())
    }

    pub fn history_width(&self) -> usize {
        self.net.history_width
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: VelocityModel = serde_json::from_str(&s).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            field: "checkpoint".into(),
            reason: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }
}

impl VelocityField for VelocityModel {
    fn state_dim(&self) -> usize {
        self.net.state_dim
    }

    fn action_dim(&self) -> usize {
        match self.flow {
            FlowSpec::Baseline { .. } => self.net.state_dim,
            _ => self.action_dim,
        }
    }

    fn velocity(&self, state: &[f64], t: f64, history: &[f64], out: &mut [f64]) -> Result<()> {
        Error::check_dim("state", self.net.state_dim, state.len())?;
        Error::check_dim("history", self.net.history_width, history.len())?;
        let v = self.params.forward(state, t, history)?;
        out.copy_from_slice(&v);
        Ok(())
    }

    fn velocity_batch(&self, states: &Array2<f64>, t: f64, history: &[f64]) -> Result<Array2<f64>> {
        Error::check_dim("state", self.net.state_dim, states.ncols())?;
        Error::check_dim("history", self.net.history_width, history.len())?;
        let mut x = Array2::zeros((states.nrows(), self.net.input_dim()));
        for (s, mut row) in states.rows().into_iter().zip(x.rows_mut()) {
            write_features(
                s.as_slice().expect("contiguous row"),
                t,
                history,
                row.as_slice_mut().expect("contiguous row"),
            );
        }
        debug_assert_eq!(x.ncols(), self.net.state_dim + TIME_FEATURES + history.len());
        self.params.forward_batch(x.view())
    }
}
