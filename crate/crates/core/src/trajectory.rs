//! Actions and uniformly sampled action trajectories on normalized time.
//!
//! A [`Trajectory`] stores `M >= 2` waypoints at times `m / (M - 1)` and is
//! evaluated by piecewise-linear interpolation. Its time derivative is the
//! slope of the interpolant inside a segment and the central difference of
//! neighbouring waypoints at grid times (one-sided at the two ends).

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in action space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(Vec<f64>);

impl Action {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("action"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("action"));
        }
        Ok(Action(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Action(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Action {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Time-indexed action path `[0, 1] -> A` stored as uniform waypoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dim: usize,
    // row-major, `len() * dim` entries
    points: Vec<f64>,
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain { what: "t", value: t })
    }
}

impl Trajectory {
    pub fn new(waypoints: &[Vec<f64>]) -> Result<Self> {
        let dim = waypoints.first().map(Vec::len).unwrap_or(0);
        let mut points = Vec::with_capacity(dim * waypoints.len());
        for w in waypoints {
            Error::check_dim("waypoint", dim, w.len())?;
            points.extend_from_slice(w);
        }
        Self::from_flat(dim, points)
    }

    pub fn from_flat(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty("trajectory dimension"));
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                what: "flat trajectory length",
                expected: dim * (points.len() / dim + 1),
                found: points.len(),
            });
        }
        if points.len() / dim < 2 {
            return Err(Error::Empty("trajectory needs at least two waypoints"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory waypoint"));
        }
        Ok(Trajectory { dim, points })
    }

    /// Samples `f` at `m` uniformly spaced times in `[0, 1]`.
    pub fn from_fn(m: usize, dim: usize, mut f: impl FnMut(f64) -> Vec<f64>) -> Result<Self> {
        if m < 2 {
            return Err(Error::Empty("trajectory needs at least two waypoints"));
        }
        let mut points = Vec::with_capacity(m * dim);
        for i in 0..m {
            let v = f(i as f64 / (m - 1) as f64);
            Error::check_dim("waypoint", dim, v.len())?;
            points.extend_from_slice(&v);
        }
        Self::from_flat(dim, points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of waypoints.
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.len() - 1) as f64
    }

    pub fn waypoint(&self, m: usize) -> &[f64] {
        &self.points[m * self.dim..(m + 1) * self.dim]
    }

    pub fn waypoints(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn start(&self) -> &[f64] {
        self.waypoint(0)
    }

    pub fn end(&self) -> &[f64] {
        self.waypoint(self.len() - 1)
    }

    /// Locates `t` on the grid: `Ok(m)` when `t` is a grid time (up to a few
    /// ulps), otherwise `Err((segment, fraction))`.
    fn locate(&self, t: f64) -> std::result::Result<usize, (usize, f64)> {
        let segments = self.len() - 1;
        let s = t * segments as f64;
        let r = s.round();
        if (s - r).abs() <= 4.0 * f64::EPSILON * s.max(1.0) {
            return Ok(r as usize);
        }
        let i = (s.floor() as usize).min(segments - 1);
        Err((i, s - i as f64))
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        check_time(t)?;
        Error::check_dim("output", self.dim, out.len())?;
        match self.locate(t) {
            Ok(m) => out.copy_from_slice(self.waypoint(m)),
            Err((i, frac)) => {
                let (a, b) = (self.waypoint(i), self.waypoint(i + 1));
                for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
                    *o = x + frac * (y - x);
                }
            }
        }
        Ok(())
    }

    /// `ξ(t)`.
    pub fn eval(&self, t: f64) -> Result<Action> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out)?;
        Ok(Action(out))
    }

    pub fn deriv_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        check_time(t)?;
        Error::check_dim("output", self.dim, out.len())?;
        let inv_h = (self.len() - 1) as f64;
        let last = self.len() - 1;
        let (lo, hi, scale) = match self.locate(t) {
            Ok(0) => (0, 1, inv_h),
            Ok(m) if m == last => (last - 1, last, inv_h),
            Ok(m) => (m - 1, m + 1, 0.5 * inv_h),
            Err((i, _)) => (i, i + 1, inv_h),
        };
        let (a, b) = (self.waypoint(lo), self.waypoint(hi));
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = (y - x) * scale;
        }
        Ok(())
    }

    /// `ξ̇(t)`.
    pub fn deriv(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.deriv_into(t, &mut out)?;
        Ok(out)
    }

    /// Re-samples the interpolant on `m` uniform waypoints.
    pub fn resample(&self, m: usize) -> Result<Trajectory> {
        let mut buf = vec![0.0; self.dim];
        Trajectory::from_fn(m, self.dim, |t| {
            self.eval_into(t, &mut buf).expect("grid time in [0, 1]");
            buf.clone()
        })
    }

    /// Values of dimension `k` at every waypoint.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.waypoints().map(|w| w[k]).collect()
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.waypoints().map(<[f64]>::to_vec).collect()
    }
}
