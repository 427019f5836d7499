use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Receding-horizon execution parameters.
///
/// `t_pred` and `t_chunk` are in seconds; `dt` is the integration step in
/// normalized flow time. A chunk integrates over `[0, t_chunk / t_pred]` and
/// yields `(t_chunk / t_pred) / dt` actions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChunk", into = "RawChunk")]
pub struct ChunkParams {
    t_pred: f64,
    t_chunk: f64,
    dt: f64,
    steps: usize,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
struct RawChunk {
    t_pred: f64,
    t_chunk: f64,
    dt: f64,
}

impl TryFrom<RawChunk> for ChunkParams {
    type Error = Error;

    fn try_from(r: RawChunk) -> Result<Self> {
        ChunkParams::new(r.t_pred, r.t_chunk, r.dt)
    }
}

impl From<ChunkParams> for RawChunk {
    fn from(c: ChunkParams) -> Self {
        RawChunk {
            t_pred: c.t_pred,
            t_chunk: c.t_chunk,
            dt: c.dt,
        }
    }
}

impl ChunkParams {
    pub fn new(t_pred: f64, t_chunk: f64, dt: f64) -> Result<Self> {
        if !(t_pred.is_finite() && t_pred > 0.0) {
            return Err(Error::config("chunk.t_pred", "must be a positive real"));
        }
        if !(t_chunk.is_finite() && t_chunk > 0.0 && t_chunk <= t_pred) {
            return Err(Error::config("chunk.t_chunk", "must satisfy 0 < t_chunk <= t_pred"));
        }
        if !(dt.is_finite() && dt > 0.0 && dt <= 1.0) {
            return Err(Error::config("chunk.dt", "must satisfy 0 < dt <= 1"));
        }
        let ratio = (t_chunk / t_pred) / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 || steps < 1.0 {
            return Err(Error::config(
                "chunk.dt",
                format!("(t_chunk / t_pred) / dt = {ratio} is not a positive integer"),
            ));
        }
        Ok(ChunkParams {
            t_pred,
            t_chunk,
            dt,
            steps: steps as usize,
        })
    }

    /// Chunk of `steps` actions out of a horizon of `1 / dt` actions.
    pub fn from_steps(t_pred: f64, steps: usize, dt: f64) -> Result<Self> {
        Self::new(t_pred, t_pred * steps as f64 * dt, dt)
    }

    pub fn t_pred(&self) -> f64 {
        self.t_pred
    }

    pub fn t_chunk(&self) -> f64 {
        self.t_chunk
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of actions emitted per chunk.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Wall-clock duration of one action in seconds.
    pub fn action_period(&self) -> f64 {
        self.t_pred * self.dt
    }
}
