//! Metrics and experiment harnesses.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baseline::baseline_sample_single;
use crate::chunk::ChunkParams;
use crate::dataset::{Dataset, ObservationHistory};
use crate::envs::{PointMassConfig, PointMassEnv};
use crate::error::{Error, Result};
use crate::field::{Counted, VelocityField};
use crate::parallel::map_indexed;
use crate::stream::{integrate_chunk_from_state, run_receding_horizon, sample_trajectories, InitMode, RolloutRecord};
use crate::trajectory::Trajectory;

/// Published per-chunk latencies (milliseconds) of a streaming policy and
/// a conventional diffusion policy on a GPU, kept for context next to the
/// local measurements.
pub const REFERENCE_STREAM_LATENCY_MS: f64 = 3.5;
pub const REFERENCE_BASELINE_LATENCY_MS: f64 = 40.2;

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// `m` evenly spaced times covering `[0, 1]`.
pub fn uniform_grid(m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..m).map(|i| i as f64 / (m - 1) as f64).collect(),
    }
}

fn sorted(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("sample set"));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Empirical Wasserstein-1 distance between two 1-D sample sets: the L1
/// distance between their quantile functions. With equal sizes this is the
/// mean absolute difference of the sorted samples.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    let a = sorted(a)?;
    let b = sorted(b)?;
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / na as f64);
    }
    // Walk the merged breakpoints i/na and j/nb of both step functions.
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < na && j < nb {
        let ua = (i + 1) as f64 / na as f64;
        let ub = (j + 1) as f64 / nb as f64;
        let next = ua.min(ub);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if ua <= next {
            i += 1;
        }
        if ub <= next {
            j += 1;
        }
    }
    Ok(total)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-timestep comparison of sampled and reference action marginals.
/// Entries are indexed `[time][dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalReport {
    pub grid: Vec<f64>,
    pub w1: Vec<Vec<f64>>,
    pub sample_mean: Vec<Vec<f64>>,
    pub sample_std: Vec<Vec<f64>>,
    pub ref_mean: Vec<Vec<f64>>,
    pub ref_std: Vec<Vec<f64>>,
}

impl MarginalReport {
    /// W1 averaged over grid times and dimensions.
    pub fn mean_w1(&self) -> f64 {
        let all: Vec<f64> = self.w1.iter().flatten().copied().collect();
        all.iter().sum::<f64>() / all.len() as f64
    }

    pub fn max_w1(&self) -> f64 {
        self.w1.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,dim,w1,sample_mean,sample_std,ref_mean,ref_std\n");
        for (i, t) in self.grid.iter().enumerate() {
            for d in 0..self.w1[i].len() {
                out.push_str(&format!(
                    "{t},{d},{},{},{},{},{}\n",
                    self.w1[i][d], self.sample_mean[i][d], self.sample_std[i][d], self.ref_mean[i][d], self.ref_std[i][d]
                ));
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_csv())
    }
}

/// Values of dimension `d` of every trajectory at time `t`.
fn values_at(trajs: &[&Trajectory], t: f64, d: usize) -> Result<Vec<f64>> {
    trajs.iter().map(|x| Ok(x.eval(t)?[d])).collect()
}

/// Compares samples against reference trajectories (typically the demo set
/// itself) at every time of `grid`, dimension by dimension.
pub fn w1_per_timestep(samples: &[Trajectory], reference: &[Trajectory], grid: &[f64]) -> Result<MarginalReport> {
    if samples.is_empty() || reference.is_empty() || grid.is_empty() {
        return Err(Error::Empty("marginal comparison input"));
    }
    let dim = reference[0].dim();
    for s in samples {
        Error::check_dim("sample dim", dim, s.dim())?;
    }
    let s_refs: Vec<&Trajectory> = samples.iter().collect();
    let r_refs: Vec<&Trajectory> = reference.iter().collect();
    let mut rep = MarginalReport {
        grid: grid.to_vec(),
        w1: Vec::new(),
        sample_mean: Vec::new(),
        sample_std: Vec::new(),
        ref_mean: Vec::new(),
        ref_std: Vec::new(),
    };
    for &t in grid {
        let (mut w, mut sm, mut ss, mut rm, mut rs) = (vec![], vec![], vec![], vec![], vec![]);
        for d in 0..dim {
            let xs = values_at(&s_refs, t, d)?;
            let ys = values_at(&r_refs, t, d)?;
            w.push(wasserstein1(&xs, &ys)?);
            let (m, s) = mean_std(&xs);
            sm.push(m);
            ss.push(s);
            let (m, s) = mean_std(&ys);
            rm.push(m);
            rs.push(s);
        }
        rep.w1.push(w);
        rep.sample_mean.push(sm);
        rep.sample_std.push(ss);
        rep.ref_mean.push(rm);
        rep.ref_std.push(rs);
    }
    Ok(rep)
}

/// Default mode label: 0 when the first action dimension ends nonnegative,
/// 1 otherwise.
pub fn sign_at_end(traj: &Trajectory) -> usize {
    usize::from(traj.end()[0] < 0.0)
}

/// Fraction of samples per mode label in `0..num_modes`.
pub fn mode_coverage<S>(samples: &[Trajectory], num_modes: usize, split: S) -> Result<Vec<f64>>
where
    S: Fn(&Trajectory) -> usize,
{
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let mut counts = vec![0usize; num_modes];
    for s in samples {
        let label = split(s);
        let slot = counts.get_mut(label).ok_or(Error::DimensionMismatch {
            what: "mode label",
            expected: num_modes,
            found: label,
        })?;
        *slot += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / samples.len() as f64).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationReport {
    pub err_k: f64,
    pub err_k0: f64,
    pub ratio: f64,
}

/// Terminal tracking error of two fields started from `ξ(0) + perturb`
/// (in every dimension) and Euler-integrated over `[0, 1]`.
pub fn stabilization_ablation<A, B>(
    model_k: &A,
    model_k0: &B,
    xi: &Trajectory,
    history: &ObservationHistory,
    perturb: f64,
    dt: f64,
) -> Result<AblationReport>
where
    A: VelocityField + ?Sized,
    B: VelocityField + ?Sized,
{
    let a0: Vec<f64> = xi.start().iter().map(|v| v + perturb).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let terminal_err = |traj: &Trajectory| -> f64 {
        traj.end().iter().zip(xi.end()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let ek = terminal_err(&sample_trajectories(model_k, history, &a0, 0.0, 1, dt, &mut rng)?[0]);
    let e0 = terminal_err(&sample_trajectories(model_k0, history, &a0, 0.0, 1, dt, &mut rng)?[0]);
    Ok(AblationReport { err_k: ek, err_k0: e0, ratio: ek / e0 })
}

/// Grid values of the first action dimension with `t ∈ [lo, hi]`.
fn values_in(traj: &Trajectory, lo: f64, hi: f64) -> Vec<f64> {
    let h = traj.spacing();
    traj.waypoints()
        .enumerate()
        .filter(|(i, _)| {
            let t = *i as f64 * h;
            t >= lo - 1e-12 && t <= hi + 1e-12
        })
        .map(|(_, w)| w[0])
        .collect()
}

/// Whether the first action dimension keeps one strict sign over
/// `t ∈ [0.1, 1.0]`.
pub fn keeps_sign(traj: &Trajectory) -> bool {
    let v = values_in(traj, 0.1, 1.0);
    v.iter().all(|&x| x > 0.0) || v.iter().all(|&x| x < 0.0)
}

/// Fraction of samples whose sign is constant over `t ∈ [0.1, 1.0]`.
pub fn sign_consistency(samples: &[Trajectory]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    Ok(samples.iter().filter(|s| keeps_sign(s)).count() as f64 / samples.len() as f64)
}

/// Shapes of 1-D paths that go out from zero, come back and (possibly)
/// cross, by the sign over the first and second halves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    /// Positive, then negative.
    S,
    /// Negative, then positive.
    MirroredS,
    /// Positive throughout.
    Three,
    /// Negative throughout.
    MirroredThree,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [ShapeClass::S, ShapeClass::MirroredS, ShapeClass::Three, ShapeClass::MirroredThree];

    pub fn of(traj: &Trajectory) -> ShapeClass {
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let early = mean(values_in(traj, 0.1, 0.4)) >= 0.0;
        let late = mean(values_in(traj, 0.6, 1.0)) >= 0.0;
        match (early, late) {
            (true, false) => ShapeClass::S,
            (false, true) => ShapeClass::MirroredS,
            (true, true) => ShapeClass::Three,
            (false, false) => ShapeClass::MirroredThree,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShapeClass::S => "s",
            ShapeClass::MirroredS => "mirrored_s",
            ShapeClass::Three => "three",
            ShapeClass::MirroredThree => "mirrored_three",
        }
    }
}

/// Counts per class, in [`ShapeClass::ALL`] order.
pub fn shape_classes(samples: &[Trajectory]) -> [usize; 4] {
    let mut counts = [0; 4];
    for s in samples {
        let c = ShapeClass::of(s);
        counts[ShapeClass::ALL.iter().position(|&x| x == c).expect("listed")] += 1;
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvexityReport {
    pub probes: usize,
    pub inside: usize,
    /// Candidate points rejected for lying outside every demo's tube.
    pub excluded: usize,
    pub fraction_inside: f64,
}

/// Probes the learned velocity at points taken from the field's own sample
/// paths and checks it lies in the per-dimension interval spanned by the
/// demonstrated velocities at that time, widened by `eps`.
///
/// Only points within `3σ(t) = 3σ₀e^{−kt}` (per dimension) of some
/// demonstration count; the property is a statement about the data
/// support, so points elsewhere are excluded and tallied separately.
#[allow(clippy::too_many_arguments)]
pub fn convexity_check<F, R>(
    field: &F,
    ds: &Dataset,
    samples: &[Trajectory],
    k: f64,
    sigma0: f64,
    eps: f64,
    num_probes: usize,
    rng: &mut R,
) -> Result<ConvexityReport>
where
    F: VelocityField + ?Sized,
    R: Rng + ?Sized,
{
    if samples.is_empty() || num_probes == 0 {
        return Err(Error::Empty("convexity probes"));
    }
    let d = ds.action_dim;
    Error::check_dim("field action_dim", d, field.action_dim())?;
    if field.is_latent() {
        return Err(Error::config("model.variant", "convexity check needs a plain model"));
    }
    let (mut probes, mut inside, mut excluded) = (0, 0, 0);
    let mut v = vec![0.0; d];
    let mut xi_t = vec![0.0; d];
    let mut dxi = vec![0.0; d];
    let max_attempts = num_probes * 200;
    let mut attempts = 0;
    while probes < num_probes && attempts < max_attempts {
        attempts += 1;
        let s = &samples[rng.random_range(0..samples.len())];
        let t: f64 = rng.random();
        let a = s.eval(t)?;
        let radius = 3.0 * sigma0 * (-k * t).exp();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        let mut home = None;
        for (i, demo) in ds.demos.iter().enumerate() {
            demo.trajectory.eval_into(t, &mut xi_t)?;
            demo.trajectory.deriv_into(t, &mut dxi)?;
            for j in 0..d {
                lo[j] = lo[j].min(dxi[j]);
                hi[j] = hi[j].max(dxi[j]);
            }
            if home.is_none() && a.iter().zip(&xi_t).all(|(x, y)| (x - y).abs() <= radius) {
                home = Some(i);
            }
        }
        let Some(i) = home else {
            excluded += 1;
            continue;
        };
        field.velocity(&a, t, ds.demos[i].history.encode(), &mut v)?;
        probes += 1;
        if (0..d).all(|j| v[j] >= lo[j] - eps && v[j] <= hi[j] + eps) {
            inside += 1;
        }
    }
    if probes == 0 {
        return Err(Error::Empty("no probe landed inside the data tube"));
    }
    Ok(ConvexityReport { probes, inside, excluded, fraction_inside: inside as f64 / probes as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    pub bound: f64,
    pub total: usize,
    pub outside: usize,
    pub fraction_outside: f64,
}

/// Counts sampled action coordinates whose magnitude exceeds the largest
/// demonstrated magnitude plus `3σ₀`.
pub fn position_bound_check(samples: &[Trajectory], ds: &Dataset, sigma0: f64) -> Result<BoundReport> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let bound = ds
        .trajectories()
        .flat_map(|t| t.as_flat().iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
        + 3.0 * sigma0;
    let total: usize = samples.iter().map(|s| s.as_flat().len()).sum();
    let outside = samples
        .iter()
        .flat_map(|s| s.as_flat().iter())
        .filter(|v| v.abs() > bound)
        .count();
    Ok(BoundReport { bound, total, outside, fraction_outside: outside as f64 / total as f64 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyReport {
    /// Network evaluations before the first action is available.
    pub stream_ttfa_evals: usize,
    pub baseline_ttfa_evals: usize,
    /// Median wall time to the first action, nanoseconds.
    pub stream_ttfa_ns: f64,
    pub baseline_ttfa_ns: f64,
    /// Mean wall time per executed action.
    pub stream_action_ns: f64,
    pub baseline_action_ns: f64,
    /// Mean wall time to produce one chunk.
    pub stream_chunk_ns: f64,
    pub baseline_chunk_ns: f64,
    pub actions_measured: usize,
    pub chunk_steps: usize,
    pub baseline_steps: usize,
}

impl LatencyReport {
    pub fn ttfa_ratio(&self) -> f64 {
        self.baseline_ttfa_ns / self.stream_ttfa_ns
    }

    /// CSV with the deterministic counters first and wall times in columns
    /// suffixed `_ns`.
    pub fn to_csv(&self) -> String {
        format!(
            "policy,ttfa_evals,chunk_steps,ttfa_ns,action_ns,chunk_ns,reference_ms\n\
             streaming,{},{},{},{},{},{}\nbaseline,{},{},{},{},{},{}\n",
            self.stream_ttfa_evals,
            self.chunk_steps,
            self.stream_ttfa_ns,
            self.stream_action_ns,
            self.stream_chunk_ns,
            REFERENCE_STREAM_LATENCY_MS,
            self.baseline_ttfa_evals,
            self.chunk_steps,
            self.baseline_ttfa_ns,
            self.baseline_action_ns,
            self.baseline_chunk_ns,
            REFERENCE_BASELINE_LATENCY_MS,
        )
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Compares the streaming policy with the trajectory-space baseline for a
/// single chunk at a time, as a controller would run them.
///
/// Both execute `chunk.steps()` actions per chunk; the baseline needs
/// `baseline_steps` evaluations before any of them exists. Measurement
/// continues until at least `min_actions` actions have been produced by
/// each policy.
#[allow(clippy::too_many_arguments)]
pub fn latency_bench<S, B>(
    stream: &S,
    baseline: &B,
    action_dim: usize,
    history: &ObservationHistory,
    a_init: &[f64],
    chunk: &ChunkParams,
    baseline_steps: usize,
    min_actions: usize,
) -> Result<LatencyReport>
where
    S: VelocityField,
    B: VelocityField,
{
    if stream.is_latent() {
        return Err(Error::config("model.variant", "latency bench expects a plain streaming model"));
    }
    let n = chunk.steps();
    let stream = Counted::new(stream);
    let baseline = Counted::new(baseline);
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let mut first_evals = None;
    integrate_chunk_from_state(&stream, history, a_init, chunk, |i, _, _| {
        if i == 0 {
            first_evals = Some(stream.calls());
        }
        Ok(())
    })?;
    let stream_ttfa_evals = first_evals.expect("chunk emits at least one action");
    baseline.reset();
    baseline_sample_single(&baseline, action_dim, history, baseline_steps, &mut rng)?;
    let baseline_ttfa_evals = baseline.calls();

    let chunks = min_actions.div_ceil(n).max(1);
    let (mut s_ttfa, mut s_chunk, mut b_chunk) = (Vec::new(), Vec::new(), Vec::new());
    // Interleave the two policies so slow drift affects both alike.
    for _ in 0..chunks {
        let start = Instant::now();
        let mut first = None;
        integrate_chunk_from_state(&stream, history, a_init, chunk, |i, _, a| {
            if i == 0 {
                first = Some(start.elapsed().as_nanos() as f64);
            }
            std::hint::black_box(a);
            Ok(())
        })?;
        s_chunk.push(start.elapsed().as_nanos() as f64);
        s_ttfa.push(first.expect("first action"));

        let start = Instant::now();
        let traj = baseline_sample_single(&baseline, action_dim, history, baseline_steps, &mut rng)?;
        std::hint::black_box(&traj);
        b_chunk.push(start.elapsed().as_nanos() as f64);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(LatencyReport {
        stream_ttfa_evals,
        baseline_ttfa_evals,
        stream_ttfa_ns: median(s_ttfa),
        // the baseline's first action exists only once the chunk is done
        baseline_ttfa_ns: median(b_chunk.clone()),
        stream_action_ns: mean(&s_chunk) / n as f64,
        baseline_action_ns: mean(&b_chunk) / n as f64,
        stream_chunk_ns: mean(&s_chunk),
        baseline_chunk_ns: mean(&b_chunk),
        actions_measured: chunks * n,
        chunk_steps: n,
        baseline_steps,
    })
}

/// Runs `n` independent point-mass rollouts, rollout `i` with environment
/// seed `seed + i`. Results are in rollout order.
pub fn pointmass_rollouts<F>(
    field: &F,
    env_cfg: &PointMassConfig,
    chunk: &ChunkParams,
    init_mode: InitMode,
    history_len: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<RolloutRecord>>
where
    F: VelocityField + ?Sized,
{
    env_cfg.validate()?;
    let results = map_indexed(n, |i| -> Result<RolloutRecord> {
        let cfg = PointMassConfig { seed: seed.wrapping_add(i as u64), ..env_cfg.clone() };
        let mut env = PointMassEnv::new(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64) ^ 0x5eed);
        let max_steps = env.config().episode_actions();
        run_receding_horizon(field, &mut env, chunk, init_mode, history_len, max_steps, &mut rng)
    });
    results.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub chunk_steps: usize,
    pub mean_score: f64,
    /// `mean_score` minus the best mean score; zero for the best row.
    pub relative_score: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Chunk size with the highest mean score (the first, on ties).
    pub fn peak(&self) -> Option<usize> {
        self.rows.iter().find(|r| r.relative_score == 0.0).map(|r| r.chunk_steps)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("chunk_steps,mean_score,relative_score,failures\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.chunk_steps, r.mean_score, r.relative_score, r.failures));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_csv())
    }
}

/// Mean point-mass score for each chunk size (in actions), reported
/// relative to the best.
#[allow(clippy::too_many_arguments)]
pub fn chunk_sweep<F>(
    field: &F,
    env_cfg: &PointMassConfig,
    t_pred: f64,
    dt: f64,
    chunk_sizes: &[usize],
    rollouts: usize,
    init_mode: InitMode,
    history_len: usize,
    seed: u64,
) -> Result<SweepReport>
where
    F: VelocityField + ?Sized,
{
    if chunk_sizes.is_empty() || rollouts == 0 {
        return Err(Error::Empty("chunk sweep"));
    }
    let mut rows = Vec::with_capacity(chunk_sizes.len());
    for &steps in chunk_sizes {
        let chunk = ChunkParams::from_steps(t_pred, steps, dt)?;
        let recs = pointmass_rollouts(field, env_cfg, &chunk, init_mode, history_len, rollouts, seed)?;
        let mean_score = recs.iter().map(|r| r.score).sum::<f64>() / rollouts as f64;
        let failures = recs.iter().filter(|r| r.failed.is_some()).count();
        rows.push(SweepRow { chunk_steps: steps, mean_score, relative_score: 0.0, failures });
    }
    let best = rows.iter().map(|r| r.mean_score).fold(f64::NEG_INFINITY, f64::max);
    for r in &mut rows {
        r.relative_score = r.mean_score - best;
    }
    Ok(SweepReport { rows })
}
