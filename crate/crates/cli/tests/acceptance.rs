//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! on stderr (bypassing the test harness capture); the test fails if any
//! criterion fails.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use pedaltrack_cli::commands::preset_scripts;
use pedaltrack_cli::{Preset, RunConfig};
use pedaltrack_core::fusion::FusionMode;
use pedaltrack_core::metrics::{ate, aye, cep, ci_coverage, pde};
use pedaltrack_core::mtimnet::{
    batch_loss_plain, batch_loss_tape, corrected_delta, routing_weights, train, ForwardMode,
    ModelConfig, Mtimnet, TASK_COUNT,
};
use pedaltrack_core::pipeline::{pws_pairs, track_model};
use pedaltrack_core::pws::{BikeGeometry, PwsConfig};
use pedaltrack_core::sins::{propagate, NavState, STANDARD_GRAVITY};
use pedaltrack_core::synth::{make_corpus, scenarios, Corpus, NoiseSpec};
use pedaltrack_core::{integrate_deltas, ImuSample, ImuWindow, MotionDelta, Pose2D, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ok_if(cond: bool, detail: String) -> Check {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn random_window(rng: &mut ChaCha8Rng, n: usize) -> ImuWindow {
    let s = (0..n)
        .map(|i| {
            let mut v = || rng.random_range(-1.0..1.0);
            ImuSample::new(
                i as f64 * 0.01,
                [9.81 + v(), v(), v()],
                [0.1 * v(), 0.1 * v(), 0.1 * v()],
            )
        })
        .collect();
    ImuWindow::new(s, n).unwrap()
}

fn gradient_oracle() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut configs = 0;
    while configs < 20 {
        let cfg = ModelConfig {
            window: rng.random_range(12..=24),
            n_experts: rng.random_range(3..=6),
            top_k: 2,
            feat_dim: 8,
            expert_dim: 4,
            conv_channels: rng.random_range(2..=4),
            kernel: [3, 5][rng.random_range(0..2)],
            stride: rng.random_range(1..=2),
            dropout: rng.random_range(0.0..0.3),
            seed: rng.random(),
            ..Default::default()
        };
        if cfg.validate().is_err() {
            continue;
        }
        configs += 1;
        let model = Mtimnet::new(cfg.clone()).unwrap();
        let batch = rng.random_range(2..=4);
        let inputs: Vec<Vec<f64>> = (0..batch)
            .map(|_| random_window(&mut rng, cfg.window).channel_major())
            .collect();
        let xs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
        let ys: Vec<MotionDelta> = (0..batch)
            .map(|_| {
                MotionDelta::new(rng.random_range(0.0..4.0), rng.random_range(-0.2..0.2)).unwrap()
            })
            .collect();
        let mode = ForwardMode::Train {
            dropout_seed: rng.random(),
        };
        let taped = batch_loss_tape(&model, &xs, &ys, mode).unwrap();
        let p = model.params();
        let trainable: Vec<usize> = (0..p.tensors().len())
            .filter(|&id| p.is_trainable(id))
            .flat_map(|id| p.offset(id)..p.offset(id) + p.tensor(id).len())
            .collect();
        let h = 1e-5;
        for i in trainable {
            let mut m = model.clone();
            *m.params_mut().flat_mut(i) += h;
            let up = batch_loss_plain(&m, &xs, &ys, mode, Some(&taped.residuals)).unwrap();
            *m.params_mut().flat_mut(i) -= 2.0 * h;
            let down = batch_loss_plain(&m, &xs, &ys, mode, Some(&taped.residuals)).unwrap();
            let fd = (up - down) / (2.0 * h);
            let a = taped.grads[i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ok_if(
        worst < 1e-4 && secs < 60.0,
        format!("{configs} configs, worst relative error {worst:.2e}, {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- 2

fn gating() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = Mtimnet::new(ModelConfig::default()).unwrap();
    let feat = model.config().feat_dim;
    let mut bad = 0;
    let mut worst_sum: f64 = 0.0;
    for i in 0..10_000 {
        let f: Vec<f64> = (0..feat).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w = model.gate_weights(&f, i % TASK_COUNT).unwrap();
        let nonzero = w.iter().filter(|&&x| x != 0.0).count();
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        if nonzero != 2 || w.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            bad += 1;
        }
    }
    // Shifts are bit-exact only when adding them is exact in floating
    // point, so logits live on a dyadic grid and shifts are integers.
    let mut shift_mismatch = 0;
    for _ in 0..10_000 {
        let logits: Vec<f64> = (0..8)
            .map(|_| rng.random_range(-(1i64 << 23)..(1i64 << 23)) as f64 / (1u64 << 20) as f64)
            .collect();
        let c = rng.random_range(-1000..1000) as f64;
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        if routing_weights(&logits, 2).unwrap() != routing_weights(&shifted, 2).unwrap() {
            shift_mismatch += 1;
        }
    }
    ok_if(
        bad == 0 && worst_sum <= 1e-12 && shift_mismatch == 0,
        format!(
            "10000 features: {bad} bad outputs, worst |sum-1| {worst_sum:.1e}; {shift_mismatch} shift mismatches"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn trajectory_oracle() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..4 {
        let script = scenarios::free_ride(120.0, seed);
        let corpus = make_corpus(
            &[script],
            &NoiseSpec {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let truth = &corpus.rides[0].truth;
        let again = integrate_deltas(truth.traj.poses()[0], &truth.deltas).unwrap();
        for (a, b) in again.poses().iter().zip(truth.traj.poses()) {
            worst = worst.max(a.distance_to(b));
        }
    }
    let square = vec![MotionDelta::new(10.0, FRAC_PI_2).unwrap(); 4];
    let end = *integrate_deltas(Pose2D::default(), &square).unwrap().last();
    let closure = end.x.hypot(end.y);
    ok_if(
        worst < 1e-9 && closure < 1e-12,
        format!("reintegration error {worst:.1e} m, square closure {closure:.1e} m"),
    )
}

// ---------------------------------------------------------------- 4

fn sins() -> Check {
    let still = ImuSample::new(0.0, [0.0, 0.0, STANDARD_GRAVITY], [0.0; 3]);
    let mut st = NavState::default();
    for _ in 0..10_000 {
        st = propagate(&st, &still, 0.01).unwrap();
    }
    let drift = st.pos.norm();

    let bias = 0.01;
    let biased = ImuSample::new(0.0, [bias, 0.0, STANDARD_GRAVITY], [0.0; 3]);
    let mut st = NavState::default();
    let mut pts = Vec::new();
    for k in 1..=10_000 {
        st = propagate(&st, &biased, 0.01).unwrap();
        if k % 500 == 0 {
            pts.push(((k as f64 * 0.01).ln(), st.pos.norm().ln()));
        }
    }
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    ok_if(
        drift < 1e-9 && (slope - 2.0).abs() <= 0.1,
        format!("stationary drift {drift:.1e} m, bias growth exponent {slope:.3}"),
    )
}

// ---------------------------------------------------------------- 5, 6

struct SpeedStats {
    cep95: Option<f64>,
    tcr: f64,
}

fn speed_stats(corpus: &Corpus, cfg: &PwsConfig) -> SpeedStats {
    let geom = BikeGeometry::default();
    let (mut errors, mut readings, mut candidates) = (Vec::new(), 0, 0);
    for ride in &corpus.rides {
        let (pairs, scan) = pws_pairs(&ride.stream, &ride.truth.speed, &geom, cfg).unwrap();
        errors.extend(pairs.iter().map(|(e, t)| e - t));
        readings += scan.readings.len();
        candidates += scan.candidates;
    }
    SpeedStats {
        cep95: cep(&errors, 0.95).ok(),
        tcr: if candidates == 0 {
            0.0
        } else {
            readings as f64 / candidates as f64
        },
    }
}

fn pws_accuracy() -> Check {
    let t0 = Instant::now();
    let corpus = make_corpus(
        &scenarios::pace_corpus(1800.0, 120.0, 5),
        &NoiseSpec {
            seed: 5,
            ..Default::default()
        },
    )
    .unwrap();
    let s = speed_stats(&corpus, &PwsConfig::default());
    let secs = t0.elapsed().as_secs_f64();
    let cep95 = s.cep95.unwrap_or(f64::INFINITY);
    ok_if(
        cep95 < 0.5 && s.tcr >= 0.4 && secs < 120.0,
        format!("CEP95 {cep95:.3} m/s, TCR {:.3}, {secs:.1} s", s.tcr),
    )
}

fn anomaly_gates() -> Check {
    let scripts: Vec<_> = (0..6)
        .map(|i| scenarios::fast_anomaly(300.0, 60 + i))
        .collect();
    let corpus = make_corpus(
        &scripts,
        &NoiseSpec {
            seed: 6,
            ..Default::default()
        },
    )
    .unwrap();
    let gated = speed_stats(&corpus, &PwsConfig::default());
    let open = PwsConfig {
        use_pcc: false,
        use_cpc: false,
        ..Default::default()
    };
    let ungated = speed_stats(&corpus, &open);
    let (with, without) = (
        gated.cep95.unwrap_or(f64::INFINITY),
        ungated.cep95.unwrap_or(0.0),
    );
    let reduction = 1.0 - with / without;

    let coast: Vec<_> = (0..24)
        .map(|i| scenarios::coasting(2.0 + (i % 4) as f64, 120.0))
        .collect();
    let coast = make_corpus(
        &coast,
        &NoiseSpec {
            seed: 7,
            ..Default::default()
        },
    )
    .unwrap();
    let coast_tcr = speed_stats(&coast, &PwsConfig::default()).tcr;
    ok_if(
        reduction >= 0.25 && coast_tcr <= 0.05,
        format!(
            "CEP95 {with:.3} gated vs {without:.3} open ({:.0}% lower); coasting TCR {coast_tcr:.3}",
            100.0 * reduction
        ),
    )
}

// ---------------------------------------------------------------- 7, 8, 9

struct Trained {
    model: Mtimnet,
    train_secs: f64,
}

fn free_corpus(seed: u64, minutes: f64) -> (RunConfig, Corpus) {
    let cfg = RunConfig::load(None, &[], Some(seed)).unwrap();
    let scripts = preset_scripts(Preset::Free, minutes * 60.0, 60.0, cfg.seed).unwrap();
    let corpus = make_corpus(&scripts, &cfg.noise).unwrap();
    (cfg, corpus)
}

/// Default training setup on the 10-minute free-ride corpus.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let (cfg, corpus) = free_corpus(1, 10.0);
        let data = corpus
            .strided_dataset(cfg.model.window, cfg.dataset.stride)
            .unwrap();
        let t0 = Instant::now();
        let (model, _) = train(&cfg.model, &cfg.train, &data).unwrap();
        Trained {
            model,
            train_secs: t0.elapsed().as_secs_f64(),
        }
    })
}

fn held_out() -> &'static Corpus {
    static CELL: OnceLock<Corpus> = OnceLock::new();
    CELL.get_or_init(|| free_corpus(2, 10.0).1)
}

fn held_out_windows(t: &Trained) -> Vec<(ImuWindow, MotionDelta)> {
    held_out().dataset(t.model.config().window).unwrap()
}

fn fusion_order() -> Check {
    let t = trained();
    let modes = [FusionMode::Off, FusionMode::Equal, FusionMode::Ivw];
    let mut ate_sum = [0.0; 3];
    let mut aye_equal = true;
    let geom = BikeGeometry::default();
    let pws = PwsConfig::default();
    for ride in &held_out().rides {
        let gt: &Trajectory = &ride.truth.traj;
        let mut ayes = Vec::new();
        for (k, mode) in modes.iter().enumerate() {
            let est = track_model(&ride.stream, &t.model, gt.poses()[0], *mode, &geom, &pws)
                .unwrap()
                .traj;
            ate_sum[k] += ate(&est, gt).unwrap();
            ayes.push(aye(&est, gt).unwrap().to_bits());
        }
        aye_equal &= ayes.iter().all(|&a| a == ayes[0]);
    }
    let n = held_out().rides.len() as f64;
    let [model, equal, ivw] = ate_sum.map(|s| s / n);
    let gain = 1.0 - ivw / model;
    ok_if(
        ivw <= equal && equal <= model && gain >= 0.05 && aye_equal,
        format!(
            "mean ATE model {model:.2} m, equal {equal:.2} m, ivw {ivw:.2} m ({:.0}% better); AYE identical: {aye_equal}",
            100.0 * gain
        ),
    )
}

/// Coverage of `corrected ± 1.96 σ` for displacement and heading increments.
fn coverages(t: &Trained) -> (f64, f64, usize) {
    let data = held_out_windows(t);
    let (mut dd, mut psi, mut y_dd, mut y_psi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (w, truth) in &data {
        let e = t.model.predict(w).unwrap();
        let c = corrected_delta(&e).unwrap();
        dd.push((c.dd, e.var_dd().sqrt()));
        psi.push((c.dpsi, e.var_dpsi().sqrt()));
        y_dd.push(truth.dd);
        y_psi.push(truth.dpsi);
    }
    let c_dd = ci_coverage(&dd, &y_dd, 1.96).unwrap();
    let c_psi = ci_coverage(&psi, &y_psi, 1.96).unwrap();
    (c_dd, c_psi, data.len())
}

fn coverage() -> Check {
    let (c_dd, c_psi, n) = coverages(trained());
    let inside = |c: f64| (0.90..=0.98).contains(&c);
    ok_if(
        inside(c_dd) && inside(c_psi),
        format!("dd {c_dd:.3}, dpsi {c_psi:.3} over {n} held-out windows"),
    )
}

fn training_smoke() -> Check {
    let t = trained();
    let data = held_out_windows(t);
    let mae = data
        .iter()
        .map(|(w, y)| (corrected_delta(&t.model.predict(w).unwrap()).unwrap().dd - y.dd).abs())
        .sum::<f64>()
        / data.len() as f64;
    ok_if(
        t.train_secs < 600.0 && mae < 0.25,
        format!(
            "50 epochs in {:.0} s, held-out displacement MAE {mae:.3} m",
            t.train_secs
        ),
    )
}

// ---------------------------------------------------------------- 10

fn line(offset: (f64, f64), n: usize) -> Trajectory {
    let stamps = (0..n).map(|k| k as f64).collect();
    let poses = (0..n)
        .map(|k| Pose2D::new(offset.0, k as f64 + offset.1, 0.0))
        .collect();
    Trajectory::new(stamps, poses).unwrap()
}

fn metric_fixtures() -> Check {
    let gt = line((0.0, 0.0), 101);
    let a = ate(&line((3.0, 4.0), 101), &gt).unwrap();
    let mut poses = gt.poses().to_vec();
    poses.last_mut().unwrap().x = 7.0;
    let drifted = Trajectory::new(gt.stamps().to_vec(), poses).unwrap();
    let p = pde(&drifted, &gt).unwrap();
    let ladder: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
    let c80 = cep(&ladder, 0.80).unwrap();
    let c95 = cep(&ladder, 0.95).unwrap();
    ok_if(
        a == 5.0 && (p - 0.07).abs() < 1e-12 && c80 == 0.8 && c95 == 1.0,
        format!("ate {a}, pde {p}, cep80 {c80}, cep95 {c95}"),
    )
}

// ---------------------------------------------------------------- 11

fn cli_run(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_pedaltrack"))
        .current_dir(dir)
        .args(args)
        .args(["--seed", "9"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = walk(dir);
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.strip_prefix(dir).unwrap().display().to_string(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn cli_session(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fs::write(
        dir.join("ride.toml"),
        "duration = 40.0\nspeed_profile = [[0.0, 2.5], [20.0, 3.5]]\n",
    )
    .unwrap();
    let small = "[model]\nfeat_dim = 16\nexpert_dim = 8\nconv_channels = 4\n[train]\nepochs = 2\nbatch = 16\n";
    fs::write(dir.join("run.toml"), small).unwrap();
    let c = ["--config", "run.toml"];
    let mut stdout = Vec::new();
    let steps: Vec<Vec<&str>> = vec![
        vec!["config"],
        vec!["simulate", "--script", "ride.toml", "--out", "ride"],
        vec![
            "corpus",
            "--preset",
            "free",
            "--minutes",
            "1",
            "--ride-seconds",
            "30",
            "--out",
            "corpus",
        ],
        vec!["train", "--corpus", "corpus", "--out", "model.json"],
        vec![
            "track",
            "--imu",
            "ride/imu.csv",
            "--mode",
            "dr",
            "--out",
            "dr.csv",
        ],
        vec![
            "track",
            "--imu",
            "ride/imu.csv",
            "--checkpoint",
            "model.json",
            "--mode",
            "model",
            "--out",
            "m.csv",
        ],
        vec![
            "track",
            "--imu",
            "ride/imu.csv",
            "--checkpoint",
            "model.json",
            "--mode",
            "model+pws-equal",
            "--out",
            "e.csv",
        ],
        vec![
            "track",
            "--imu",
            "ride/imu.csv",
            "--checkpoint",
            "model.json",
            "--mode",
            "model+pws-ivw",
            "--out",
            "i.csv",
        ],
        vec![
            "eval",
            "--est",
            "i.csv",
            "--gt",
            "ride/truth.csv",
            "--out",
            "eval.json",
        ],
        vec![
            "pws",
            "--imu",
            "ride/imu.csv",
            "--speed",
            "ride/speed.csv",
            "--out",
            "pws.json",
            "--readings",
            "readings.csv",
        ],
        vec!["calibrate", "--corpus", "corpus", "--out", "cal.json"],
    ];
    for s in &steps {
        let mut args = s.clone();
        args.extend(c);
        stdout.push((format!("stdout {}", s[0]), cli_run(dir, &args)));
    }
    let mut files = snapshot(dir);
    files.extend(stdout);
    files
}

fn cli_determinism() -> Check {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (cli_session(a.path()), cli_session(b.path()));
    let differing: Vec<&str> = ra
        .iter()
        .zip(&rb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    ok_if(
        ra.len() == rb.len() && differing.is_empty(),
        format!("{} outputs compared, differing: {differing:?}", ra.len()),
    )
}

// ----------------------------------------------------------------

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("gradient oracle", gradient_oracle),
        ("gating contract", gating),
        ("trajectory oracle", trajectory_oracle),
        ("strapdown drift", sins),
        ("pseudo wheel speed accuracy", pws_accuracy),
        ("anomaly gates", anomaly_gates),
        ("fusion ordering", fusion_order),
        ("uncertainty coverage", coverage),
        ("training smoke", training_smoke),
        ("metric fixtures", metric_fixtures),
        ("cli determinism", cli_determinism),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>())));
        let took = Duration::from_secs_f64(t0.elapsed().as_secs_f64().round());
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        writeln!(
            err,
            "criterion {:>2} {tag} {name}: {detail} [{took:?}]",
            i + 1
        )
        .unwrap();
        if result.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
