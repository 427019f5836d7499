//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line. Lines are written straight to stdout so they show up
//! even when libtest captures output.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use streaming_flow::baseline::{baseline_train, default_config};
use streaming_flow::envs::{gen_bimodal_1d, gen_intersecting_s, gen_lines, gen_pointmass, gen_single_line, PointMassConfig};
use streaming_flow::eval::{
    convexity_check, latency_bench, mode_coverage, position_bound_check, shape_classes, sign_at_end,
    sign_consistency, stabilization_ablation, uniform_grid, w1_per_timestep, chunk_sweep,
};
use streaming_flow::field::ConditionalField;
use streaming_flow::flows::{conditional_velocity, latent_flow_forward, latent_flow_inverse, latent_joint};
use streaming_flow::net::{Batch, Mlp, NetDims, TrainingSample};
use streaming_flow::stream::{sample_trajectories, InitMode};
use streaming_flow::*;

fn report(n: u32, name: &str, pass: bool, detail: String) {
    let line = format!("criterion {n:>2} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn plain(k: f64, sigma0: f64) -> FlowSpec {
    FlowSpec::Plain(FlowConfig::new(k, sigma0).unwrap())
}

/// Shared settings for the toy distribution-matching experiments.
fn toy_config(flow: FlowSpec, batch_size: usize) -> TrainConfig {
    TrainConfig { flow, num_steps: 8000, batch_size, lr: 3e-4, hidden: vec![64; 3], seed: 0, ..Default::default() }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[test]
fn c01_conditional_flow_monte_carlo() {
    let start = Instant::now();
    let (k, sigma0, dt) = (2.0, 0.1, 1e-3);
    let xi_fn = |t: f64| 0.5 * (2.0 * std::f64::consts::PI * t).sin();
    let xi = Trajectory::from_fn(1001, 1, |t| vec![xi_fn(t)]).unwrap();
    let cfg = FlowConfig::new(k, sigma0).unwrap();
    let v = |a: f64, t: f64| conditional_velocity(&xi, &[a], t, &cfg).unwrap()[0];
    let checkpoints = [250usize, 500, 1000];
    let mut at: Vec<Vec<f64>> = vec![Vec::new(); checkpoints.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let mut a = xi_fn(0.0) + sigma0 * rng.sample::<f64, _>(StandardNormal);
        for i in 0..1000 {
            let t = i as f64 * dt;
            let k1 = v(a, t);
            let k2 = v(a + 0.5 * dt * k1, t + 0.5 * dt);
            let k3 = v(a + 0.5 * dt * k2, t + 0.5 * dt);
            let k4 = v(a + dt * k3, (t + dt).min(1.0));
            a += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if let Some(j) = checkpoints.iter().position(|&c| c == i + 1) {
                at[j].push(a);
            }
        }
    }
    let mut pass = true;
    let mut detail = Vec::new();
    for (j, &c) in checkpoints.iter().enumerate() {
        let t = c as f64 * dt;
        let (m, s) = mean_std(&at[j]);
        let target = sigma0 * (-k * t).exp();
        let (em, es) = ((m - xi_fn(t)).abs(), (s / target - 1.0).abs());
        pass &= em <= 0.01 && es <= 0.05;
        detail.push(format!("t={t}: |mean err|={em:.4} std rel err={es:.4}"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 30.0;
    report(1, "conditional flow marginals", pass, format!("{}; {secs:.1}s", detail.join(", ")));
}

#[test]
fn c02_latent_joint_distribution() {
    let xi = Trajectory::from_fn(65, 1, |t| vec![0.4 * t - 0.2 * t * t + 0.1]).unwrap();
    let cfg = LatentFlowConfig::new(0.1, 0.3, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws: Vec<(f64, f64)> = (0..10_000)
        .map(|_| (0.1 + 0.1 * rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let mut pass = true;
    let mut worst = 0.0f64;
    let mut worst_inv = 0.0f64;
    for t in [0.0, 0.5, 1.0] {
        let g = latent_joint(&xi, t, &cfg).unwrap();
        let mut aa = Vec::new();
        let mut zz = Vec::new();
        for &(a0, z0) in &draws {
            let (a, z) = latent_flow_forward(&xi, &[a0], &[z0], t, &cfg).unwrap();
            let (ia, iz) = latent_flow_inverse(&xi, &a, &z, t, &cfg).unwrap();
            worst_inv = worst_inv.max((ia[0] - a0).abs()).max((iz[0] - z0).abs());
            aa.push(a[0]);
            zz.push(z[0]);
        }
        let n = aa.len() as f64;
        let (ma, sa) = mean_std(&aa);
        let (mz, sz) = mean_std(&zz);
        let c12 = aa.iter().zip(&zz).map(|(a, z)| (a - ma) * (z - mz)).sum::<f64>() / (n - 1.0);
        let scale = (g.s11 * g.s22).sqrt();
        let rel = |emp: f64, exact: f64| {
            if exact.abs() > 1e-12 { (emp / exact - 1.0).abs() } else { emp.abs() / scale }
        };
        worst = worst.max(rel(sa * sa, g.s11)).max(rel(c12, g.s12)).max(rel(sz * sz, g.s22));
    }
    pass &= worst <= 0.05 && worst_inv <= 1e-10;
    report(2, "latent joint covariance", pass, format!("worst rel err {worst:.4}, inverse err {worst_inv:.1e}"));
}

#[test]
fn c03_gradient_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for net in 0..20u64 {
        let state_dim = rng.random_range(1..=3);
        let history_width = rng.random_range(0..=3);
        let depth = rng.random_range(1..=3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=6)).collect();
        let dims = NetDims { state_dim, history_width, hidden };
        let mut p = Mlp::init(net, &dims).unwrap();
        for tensor in p.tensors_mut() {
            for w in tensor.iter_mut() {
                *w += 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let samples: Vec<TrainingSample> = (0..rng.random_range(1..=5))
            .map(|_| TrainingSample {
                state: (0..state_dim).map(|_| rng.sample(StandardNormal)).collect(),
                t: rng.random(),
                history: (0..history_width).map(|_| rng.sample(StandardNormal)).collect(),
                target: (0..state_dim).map(|_| rng.sample(StandardNormal)).collect(),
            })
            .collect();
        let batch = Batch::from_samples(&samples).unwrap();
        let (_, grads) = p.loss_grad(&batch).unwrap();
        let analytic: Vec<f64> = grads.tensors().flat_map(|t| t.to_vec()).collect();
        let eps = 1e-5;
        let mut idx = 0;
        let n_tensors = p.tensors().count();
        for ti in 0..n_tensors {
            let len = p.tensors().nth(ti).unwrap().len();
            for j in 0..len {
                let orig = p.tensors().nth(ti).unwrap()[j];
                p.tensors_mut().nth(ti).unwrap()[j] = orig + eps;
                let up = p.loss(&batch).unwrap();
                p.tensors_mut().nth(ti).unwrap()[j] = orig - eps;
                let down = p.loss(&batch).unwrap();
                p.tensors_mut().nth(ti).unwrap()[j] = orig;
                let fd = (up - down) / (2.0 * eps);
                let g = analytic[idx];
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-7);
                worst = worst.max(rel);
                idx += 1;
            }
        }
    }
    report(3, "gradient exactness", worst < 1e-4, format!("max rel err {worst:.2e} over 20 nets"));
}

#[test]
fn c04_bimodal_marginal_matching() {
    let ds = gen_bimodal_1d(200, &mut ChaCha8Rng::seed_from_u64(7), 0.02).unwrap();
    let start = Instant::now();
    let out = train_policy(&ds, &toy_config(plain(1.0, 0.05), 1024)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let demo = &ds.demos[0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples =
        sample_trajectories(&out.model, &demo.history, demo.trajectory.start(), 0.05, 500, 1.0 / 64.0, &mut rng)
            .unwrap();
    let reference: Vec<Trajectory> = ds.trajectories().cloned().collect();
    let rep = w1_per_timestep(&samples, &reference, &uniform_grid(17)).unwrap();
    let cov = mode_coverage(&samples, 2, sign_at_end).unwrap();
    let pass = rep.mean_w1() <= 0.05 && cov.iter().all(|&c| (0.45..=0.55).contains(&c)) && secs < 300.0;
    report(
        4,
        "bimodal marginal matching",
        pass,
        format!("mean W1 {:.4}, modes {:.3}/{:.3}, training {secs:.1}s", rep.mean_w1(), cov[0], cov[1]),
    );
}

#[test]
fn c05_stabilization_ablation() {
    let ds = gen_single_line(0.5).unwrap();
    let train = |k: f64| {
        let cfg = TrainConfig { flow: plain(k, 0.1), num_steps: 1500, hidden: vec![64; 3], ..Default::default() };
        train_policy(&ds, &cfg).unwrap().model
    };
    let (mk, m0) = (train(5.0), train(0.0));
    let demo = &ds.demos[0];
    let learned = stabilization_ablation(&mk, &m0, &demo.trajectory, &demo.history, 0.2, 1.0 / 64.0).unwrap();
    let k = 5.0;
    let exact = |k| ConditionalField { trajectory: demo.trajectory.clone(), flow: FlowConfig::new(k, 0.1).unwrap() };
    let oracle = stabilization_ablation(&exact(k), &exact(0.0), &demo.trajectory, &demo.history, 0.2, 1e-3).unwrap();
    let oracle_dev = (oracle.ratio / (-k).exp() - 1.0).abs();
    let pass = learned.ratio < 0.5 && oracle_dev <= 0.05;
    report(
        5,
        "stabilization ablation",
        pass,
        format!(
            "learned ratio {:.4} (err {:.4} vs {:.4}), analytic ratio {:.5} vs e^-5 {:.5}",
            learned.ratio,
            learned.err_k,
            learned.err_k0,
            oracle.ratio,
            (-k).exp()
        ),
    );
}

#[test]
fn c06_compositionality() {
    let ds = gen_intersecting_s(200, &mut ChaCha8Rng::seed_from_u64(7), 0.02).unwrap();
    let demo = &ds.demos[0];
    let reference: Vec<Trajectory> = ds.trajectories().cloned().collect();
    let dt = 1.0 / 512.0;

    let model = train_policy(&ds, &toy_config(plain(2.0, 0.05), 256)).unwrap().model;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples = sample_trajectories(&model, &demo.history, demo.trajectory.start(), 0.05, 500, dt, &mut rng).unwrap();
    let consistency = sign_consistency(&samples).unwrap();
    let w1 = w1_per_timestep(&samples, &reference, &uniform_grid(17)).unwrap().mean_w1();

    let latent = FlowSpec::Latent(LatentFlowConfig::new(0.05, 0.5, 2.0).unwrap());
    let lmodel = train_policy(&ds, &toy_config(latent, 256)).unwrap().model;
    let lsamples = sample_trajectories(&lmodel, &demo.history, demo.trajectory.start(), 0.0, 500, dt, &mut rng).unwrap();
    let classes = shape_classes(&lsamples);

    let pass = consistency >= 0.9 && w1 <= 0.05 && classes.iter().all(|&c| c > 0);
    report(
        6,
        "compositionality",
        pass,
        format!("sign consistency {consistency:.3}, mean W1 {w1:.4}, latent shape classes {classes:?}"),
    );
}

fn pointmass_data() -> Dataset {
    gen_pointmass(12, &mut ChaCha8Rng::seed_from_u64(5), &PointMassConfig::default(), 1.6, 17).unwrap()
}

#[test]
fn c07_streaming_latency() {
    let ds = pointmass_data();
    let short = |flow| TrainConfig { flow, num_steps: 200, ..Default::default() };
    let stream = train_policy(&ds, &short(plain(5.0, 0.05))).unwrap().model;
    let base = baseline_train(&ds, &TrainConfig { num_steps: 200, ..default_config() }).unwrap().model;
    let demo = &ds.demos[0];
    let chunk = ChunkParams::from_steps(1.6, 8, 1.0 / 16.0).unwrap();
    let rep = latency_bench(&stream, &base, ds.action_dim, &demo.history, demo.trajectory.start(), &chunk, 10, 1000)
        .unwrap();
    let pass = rep.stream_ttfa_evals == 1
        && rep.baseline_ttfa_evals == 10
        && rep.ttfa_ratio() >= 5.0
        && rep.stream_action_ns < rep.baseline_action_ns;
    report(
        7,
        "streaming latency",
        pass,
        format!(
            "evals {} vs {}, ttfa {:.1}us vs {:.1}us (ratio {:.1}), per action {:.1}us vs {:.1}us",
            rep.stream_ttfa_evals,
            rep.baseline_ttfa_evals,
            rep.stream_ttfa_ns / 1e3,
            rep.baseline_ttfa_ns / 1e3,
            rep.ttfa_ratio(),
            rep.stream_action_ns / 1e3,
            rep.baseline_action_ns / 1e3
        ),
    );
}

#[test]
fn c08_chunk_sweep() {
    let ds = pointmass_data();
    let cfg = TrainConfig { flow: plain(5.0, 0.05), num_steps: 1500, hidden: vec![64; 3], ..Default::default() };
    let model = train_policy(&ds, &cfg).unwrap().model;
    let sizes = [1, 2, 4, 8, 16];
    let rep = chunk_sweep(
        &model,
        &PointMassConfig::default(),
        1.6,
        1.0 / 16.0,
        &sizes,
        8,
        InitMode::ActionImitation,
        ds.history_len,
        0,
    )
    .unwrap();
    let best = rep.rows.iter().map(|r| r.relative_score).fold(f64::NEG_INFINITY, f64::max);
    let pass = rep.rows.len() == sizes.len()
        && rep.rows.iter().zip(sizes).all(|(r, s)| r.chunk_steps == s)
        && best == 0.0
        && rep.peak().is_some();
    let table: Vec<String> = rep.rows.iter().map(|r| format!("{}:{:.3}", r.chunk_steps, r.mean_score)).collect();
    let peak = rep.peak().map_or("none".to_string(), |p| p.to_string());
    report(8, "chunk sweep", pass, format!("scores {}, peak at {peak}", table.join(" ")));
}

#[test]
fn c09_constraint_properties() {
    let ds = gen_lines(200, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let (k, sigma0) = (0.1, 0.05);
    let cfg = TrainConfig { flow: plain(k, sigma0), num_steps: 3000, hidden: vec![64; 3], ..Default::default() };
    let model = train_policy(&ds, &cfg).unwrap().model;
    let demo = &ds.demos[0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples =
        sample_trajectories(&model, &demo.history, demo.trajectory.start(), sigma0, 256, 1.0 / 64.0, &mut rng).unwrap();
    let conv = convexity_check(&model, &ds, &samples, k, sigma0, 0.1, 512, &mut rng).unwrap();
    let bound = position_bound_check(&samples, &ds, sigma0).unwrap();
    let pass = conv.fraction_inside >= 0.95 && bound.fraction_outside < 0.01;
    report(
        9,
        "constraint properties",
        pass,
        format!(
            "{:.3} of {} probes inside [-1.1, 1.1] ({} excluded), {:.4} of actions beyond {:.3}",
            conv.fraction_inside, conv.probes, conv.excluded, bound.fraction_outside, bound.bound
        ),
    );
}

fn sfp(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_sfp")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "sfp {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Drops the named columns from a CSV file's text.
fn without_columns(text: &str, drop: &[&str]) -> String {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let keep: Vec<usize> = (0..header.len()).filter(|&i| !drop.contains(&header[i])).collect();
    let header = header.join(",");
    std::iter::once(header.as_str())
        .chain(lines)
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            keep.iter().filter_map(|&i| cells.get(i).copied()).collect::<Vec<_>>().join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

const WALL_COLUMNS: [&str; 5] = ["wall_ns", "ttfa_ns", "action_ns", "chunk_ns", "reference_ms"];

fn run_pipeline(dir: &Path) -> Vec<(String, String)> {
    let write = |name: &str, text: &str| std::fs::write(dir.join(name), text).unwrap();
    let mut stdout = Vec::new();
    let mut run = |args: &[&str]| stdout.push((args.join(" "), sfp(dir, args)));
    run(&["gen-data", "--env", "bimodal", "--n", "20", "--seed", "3", "--out", "bimodal.json"]);
    run(&["gen-data", "--env", "single-line", "--n", "1", "--out", "line.json"]);
    run(&["gen-data", "--env", "pointmass", "--n", "2", "--seed", "1", "--out", "pm.json"]);
    let train_cfg = |data: &str, out: &str, flow: &str| {
        format!(
            r#"{{"data": "{data}", "out_dir": "{out}", "train": {{"flow": {flow}, "num_steps": 20, "batch_size": 16, "hidden": [8, 8], "seed": 4}}}}"#
        )
    };
    write("bimodal.cfg.json", &train_cfg("bimodal.json", "m_bimodal", r#"{"variant": "plain", "k": 2.0, "sigma0": 0.05}"#));
    write("k.cfg.json", &train_cfg("line.json", "m_k", r#"{"variant": "plain", "k": 5.0, "sigma0": 0.1}"#));
    write("k0.cfg.json", &train_cfg("line.json", "m_k0", r#"{"variant": "plain", "k": 0.0, "sigma0": 0.1}"#));
    write("pm.cfg.json", &train_cfg("pm.json", "m_pm", r#"{"variant": "plain", "k": 5.0, "sigma0": 0.05}"#));
    write("base.cfg.json", &train_cfg("pm.json", "m_base", r#"{"variant": "baseline", "horizon": 16}"#));
    for c in ["bimodal", "k", "k0", "pm", "base"] {
        run(&["train", "--config", &format!("{c}.cfg.json")]);
    }
    let bm = "m_bimodal/model.json";
    run(&["sample", "--model", bm, "--data", "bimodal.json", "--n", "8", "--sigma0", "0.05", "--seed", "2", "--out-dir", "o_sample"]);
    run(&["rollout", "--model", "m_pm/model.json", "--max-steps", "12", "--out-dir", "o_rollout"]);
    run(&["eval", "marginals", "--model", bm, "--data", "bimodal.json", "--n", "16", "--out-dir", "o_marg"]);
    run(&["eval", "modes", "--model", bm, "--data", "bimodal.json", "--n", "16", "--out-dir", "o_modes"]);
    run(&["eval", "ablation", "--model-k", "m_k/model.json", "--model-k0", "m_k0/model.json", "--data", "line.json", "--out-dir", "o_abl"]);
    run(&["eval", "convexity", "--model", bm, "--data", "bimodal.json", "--probes", "16", "--n", "8", "--out-dir", "o_conv"]);
    run(&["bench", "--model", "m_pm/model.json", "--baseline", "m_base/model.json", "--data", "pm.json", "--min-actions", "16", "--out-dir", "o_bench"]);
    run(&["sweep-chunk", "--model", "m_pm/model.json", "--chunk-sizes", "1,4", "--rollouts", "2", "--out-dir", "o_sweep"]);
    run(&["plot", "--data", "bimodal.json", "--model", bm, "--n", "8", "--out-dir", "o_plot"]);
    stdout.retain(|(cmd, _)| !cmd.starts_with("bench"));
    stdout
}

fn snapshot(dir: &Path) -> Vec<(String, String)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                let text = std::fs::read_to_string(&p).unwrap();
                let text = if rel.ends_with(".csv") { without_columns(&text, &WALL_COLUMNS) } else { text };
                files.push((rel, text));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn c10_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let first_out = run_pipeline(dir.path());
    let first = snapshot(dir.path());
    let second_out = run_pipeline(dir.path());
    let second = snapshot(dir.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .chain(first_out.iter().zip(&second_out).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()))
        .collect();
    let pass = first.len() == second.len() && differing.is_empty();
    report(
        10,
        "cli determinism",
        pass,
        format!("{} files and {} summaries compared, differing: {differing:?}", first.len(), first_out.len()),
    );
}
