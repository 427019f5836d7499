//! Observation histories, demonstrations and line-delimited dataset files.
//!
//! File layout (UTF-8, `\n` separated JSON objects):
//!
//! ```text
//! {"action_dim":1,"obs_dim":1,"history_len":2,"t_pred_seconds":1.0,"num_demos":2}
//! {"history":[[0.0],[0.0]],"waypoints":[[0.0],[0.4],[0.8]]}
//! {"history":[[0.0],[0.0]],"waypoints":[[0.0],[-0.4],[-0.8]]}
//! ```
//!
//! The header may carry an optional `generator` object describing how the
//! demonstrations were produced.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// The last `K` observations, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationHistory {
    obs_dim: usize,
    data: Vec<f64>,
}

impl ObservationHistory {
    pub fn new(observations: &[Vec<f64>]) -> Result<Self> {
        let obs_dim = observations.first().map(Vec::len).unwrap_or(0);
        if observations.is_empty() || obs_dim == 0 {
            return Err(Error::Empty("observation history"));
        }
        let mut data = Vec::with_capacity(obs_dim * observations.len());
        for o in observations {
            Error::check_dim("observation", obs_dim, o.len())?;
            data.extend_from_slice(o);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        Ok(ObservationHistory { obs_dim, data })
    }

    /// History of length `k` filled with a single observation, as at the
    /// start of an episode.
    pub fn repeated(obs: &[f64], k: usize) -> Result<Self> {
        Self::new(&vec![obs.to_vec(); k])
    }

    /// Builds a length-`k` history from the most recent observations,
    /// padding by repeating the oldest available one.
    pub fn from_recent(observations: &[Vec<f64>], k: usize) -> Result<Self> {
        if observations.is_empty() || k == 0 {
            return Err(Error::Empty("observations"));
        }
        let recent = &observations[observations.len() - observations.len().min(k)..];
        let mut window = vec![recent[0].clone(); k - recent.len()];
        window.extend_from_slice(recent);
        Self::new(&window)
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    /// `K`.
    pub fn len(&self) -> usize {
        self.data.len() / self.obs_dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat concatenation of the observations, the network's history input.
    pub fn encode(&self) -> &[f64] {
        &self.data
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.data[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn latest(&self) -> &[f64] {
        self.observation(self.len() - 1)
    }

    /// Drops the oldest observation and appends `obs`.
    pub fn push(&mut self, obs: &[f64]) -> Result<()> {
        Error::check_dim("observation", self.obs_dim, obs.len())?;
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        self.data.drain(..self.obs_dim);
        self.data.extend_from_slice(obs);
        Ok(())
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.data.chunks_exact(self.obs_dim).map(<[f64]>::to_vec).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub history: ObservationHistory,
    pub trajectory: Trajectory,
}

/// Free-form provenance recorded by the demo generators.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub name: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub demos: Vec<Demonstration>,
    pub action_dim: usize,
    pub obs_dim: usize,
    pub history_len: usize,
    pub t_pred_seconds: f64,
    pub generator: Option<GeneratorInfo>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    action_dim: usize,
    obs_dim: usize,
    history_len: usize,
    t_pred_seconds: f64,
    num_demos: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<GeneratorInfo>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoRecord {
    history: Vec<Vec<f64>>,
    waypoints: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        demos: Vec<Demonstration>,
        action_dim: usize,
        obs_dim: usize,
        history_len: usize,
        t_pred_seconds: f64,
    ) -> Result<Self> {
        let ds = Dataset {
            demos,
            action_dim,
            obs_dim,
            history_len,
            t_pred_seconds,
            generator: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_generator(mut self, info: GeneratorInfo) -> Self {
        self.generator = Some(info);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.demos.is_empty() {
            return Err(Error::Empty("dataset has no demonstrations"));
        }
        if self.action_dim == 0 || self.obs_dim == 0 || self.history_len == 0 {
            return Err(Error::Empty("dataset dimensions must be positive"));
        }
        if !(self.t_pred_seconds.is_finite() && self.t_pred_seconds > 0.0) {
            return Err(Error::config("t_pred_seconds", "must be a positive real"));
        }
        for d in &self.demos {
            Error::check_dim("demo action_dim", self.action_dim, d.trajectory.dim())?;
            Error::check_dim("demo obs_dim", self.obs_dim, d.history.obs_dim())?;
            Error::check_dim("demo history_len", self.history_len, d.history.len())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.demos.iter().map(|d| &d.trajectory)
    }

    /// Length of the flattened history vector, `K * obs_dim`.
    pub fn history_width(&self) -> usize {
        self.history_len * self.obs_dim
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = Header {
            action_dim: self.action_dim,
            obs_dim: self.obs_dim,
            history_len: self.history_len,
            t_pred_seconds: self.t_pred_seconds,
            num_demos: self.demos.len(),
            generator: self.generator.clone(),
        };
        let mut write_line = |s: String| -> Result<()> {
            w.write_all(s.as_bytes())
                .and_then(|_| w.write_all(b"\n"))
                .map_err(|e| Error::io(path, e))
        };
        write_line(serde_json::to_string(&header)?)?;
        for d in &self.demos {
            let rec = DemoRecord {
                history: d.history.to_nested(),
                waypoints: d.trajectory.to_nested(),
            };
            write_line(serde_json::to_string(&rec)?)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, field: &str, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            field: field.to_string(),
            reason,
        };
        let mut lines = BufReader::new(file).lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or_else(|| parse_err(1, "header", "file is empty".into()))?;
        let first = first.map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_str(&first)
            .map_err(|e| parse_err(1, "header", e.to_string()))?;
        if header.action_dim == 0 || header.obs_dim == 0 || header.history_len == 0 {
            return Err(parse_err(1, "header", "dimensions must be positive".into()));
        }

        let mut demos = Vec::with_capacity(header.num_demos);
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DemoRecord = serde_json::from_str(&line)
                .map_err(|e| parse_err(lineno, "demo", e.to_string()))?;
            if rec.history.len() != header.history_len {
                return Err(parse_err(
                    lineno,
                    "history",
                    format!("expected {} observations, found {}", header.history_len, rec.history.len()),
                ));
            }
            for (i, o) in rec.history.iter().enumerate() {
                if o.len() != header.obs_dim {
                    return Err(parse_err(
                        lineno,
                        &format!("history[{i}]"),
                        format!("expected obs_dim {}, found {}", header.obs_dim, o.len()),
                    ));
                }
            }
            if rec.waypoints.len() < 2 {
                return Err(parse_err(lineno, "waypoints", "need at least two waypoints".into()));
            }
            for (i, w) in rec.waypoints.iter().enumerate() {
                if w.len() != header.action_dim {
                    return Err(parse_err(
                        lineno,
                        &format!("waypoints[{i}]"),
                        format!("expected action_dim {}, found {}", header.action_dim, w.len()),
                    ));
                }
            }
            let history = ObservationHistory::new(&rec.history)
                .map_err(|e| parse_err(lineno, "history", e.to_string()))?;
            let trajectory = Trajectory::new(&rec.waypoints)
                .map_err(|e| parse_err(lineno, "waypoints", e.to_string()))?;
            demos.push(Demonstration { history, trajectory });
        }
        if demos.len() != header.num_demos {
            return Err(parse_err(
                1,
                "num_demos",
                format!("header declares {}, file holds {}", header.num_demos, demos.len()),
            ));
        }
        let ds = Dataset {
            demos,
            action_dim: header.action_dim,
            obs_dim: header.obs_dim,
            history_len: header.history_len,
            t_pred_seconds: header.t_pred_seconds,
            generator: header.generator,
        };
        ds.validate().map_err(|e| parse_err(1, "header", e.to_string()))?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_demo() -> Dataset {
        let h = ObservationHistory::repeated(&[0.0], 2).unwrap();
        let up = Trajectory::new(&[vec![0.0], vec![0.1 + 0.2], vec![0.8]]).unwrap();
        let down = Trajectory::new(&[vec![0.0], vec![-1.0 / 3.0], vec![-0.8]]).unwrap();
        Dataset::new(
            vec![
                Demonstration { history: h.clone(), trajectory: up },
                Demonstration { history: h, trajectory: down },
            ],
            1,
            1,
            2,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let ds = two_demo();
        ds.save(&p).unwrap();
        let back = Dataset::load(&p).unwrap();
        assert_eq!(ds, back);
        assert_eq!(back.demos[0].trajectory.waypoint(1)[0].to_bits(), (0.1f64 + 0.2).to_bits());
    }

    #[test]
    fn empty_dataset_is_rejected_on_save() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = two_demo();
        ds.demos.clear();
        assert!(matches!(ds.save(dir.path().join("x")), Err(Error::Empty(_))));
    }

    #[test]
    fn mismatched_action_dim_names_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(
            &p,
            "{\"action_dim\":1,\"obs_dim\":1,\"history_len\":1,\"t_pred_seconds\":1.0,\"num_demos\":2}\n\
             {\"history\":[[0.0]],\"waypoints\":[[0.0],[1.0]]}\n\
             {\"history\":[[0.0]],\"waypoints\":[[0.0],[1.0,2.0]]}\n",
        )
        .unwrap();
        match Dataset::load(&p) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "waypoints[1]");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(&p, "{\"action_dim\":1}\n").unwrap();
        let err = Dataset::load(&p).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
        assert!(err.contains("obs_dim"), "{err}");
    }

    #[test]
    fn demo_count_must_match_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.jsonl");
        std::fs::write(
            &p,
            "{\"action_dim\":1,\"obs_dim\":1,\"history_len\":1,\"t_pred_seconds\":1.0,\"num_demos\":2}\n\
             {\"history\":[[0.0]],\"waypoints\":[[0.0],[1.0]]}\n",
        )
        .unwrap();
        assert!(matches!(Dataset::load(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn history_padding_and_push() {
        let h = ObservationHistory::from_recent(&[vec![1.0]], 3).unwrap();
        assert_eq!(h.encode(), &[1.0, 1.0, 1.0]);
        let h = ObservationHistory::from_recent(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]], 2).unwrap();
        assert_eq!(h.encode(), &[3.0, 4.0]);
        let mut h = ObservationHistory::from_recent(&[vec![1.0], vec![2.0]], 3).unwrap();
        assert_eq!(h.encode(), &[1.0, 1.0, 2.0]);
        h.push(&[5.0]).unwrap();
        assert_eq!(h.encode(), &[1.0, 2.0, 5.0]);
        assert!(h.push(&[1.0, 2.0]).is_err());
    }
}
