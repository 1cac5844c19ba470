use std::fs;
use std::path::{Path, PathBuf};

use pedaltrack_core::io::{
    read_imu, read_positions, read_records, read_trajectory, write_deltas, write_imu, write_json,
    write_positions, write_records, write_trajectory, SpeedRow,
};
use pedaltrack_core::metrics::{speed_report, traj_report};
use pedaltrack_core::mtimnet::{load_checkpoint, save_checkpoint, train};
use pedaltrack_core::pipeline::{pws_pairs, track_dr, track_model, TrackMode};
use pedaltrack_core::pws::{calibrate_variance, speed_level, DEFAULT_SIGMA2};
use pedaltrack_core::seed::sub_seed;
use pedaltrack_core::sins::NavState;
use pedaltrack_core::synth::{
    self, scenarios, strided_windows, GroundTruth, RideScript, FINE_RATE,
};
use pedaltrack_core::{Error, ImuSample, ImuWindow, MotionDelta, Pose2D, Result};
use serde::Serialize;

use crate::{Cli, Command, Mode, Preset, RunConfig};

pub fn dispatch(cli: &Cli) -> Result<()> {
    if let Command::Config = cli.command {
        print!("{}", RunConfig::default_toml());
        return Ok(());
    }
    let c = &cli.common;
    let cfg = RunConfig::load(c.config.as_deref(), &c.overrides, c.seed)?;
    match &cli.command {
        Command::Simulate { script, out } => simulate(&cfg, script, out),
        Command::Corpus {
            preset,
            minutes,
            ride_seconds,
            out,
        } => corpus(&cfg, *preset, *minutes, *ride_seconds, out),
        Command::Train { corpus, out, log } => {
            let dir = pick(corpus, &cfg.paths.corpus, "--corpus")?;
            train_cmd(&cfg, &dir, out, log.as_deref())
        }
        Command::Track {
            imu,
            checkpoint,
            mode,
            out,
        } => track(
            &cfg,
            imu,
            checkpoint.as_ref().or(cfg.paths.checkpoint.as_ref()),
            *mode,
            out,
        ),
        Command::Eval { est, gt, span, out } => eval(est, gt, *span, out.as_deref()),
        Command::Pws {
            imu,
            speed,
            out,
            readings,
        } => pws(&cfg, imu, speed, out.as_deref(), readings.as_deref()),
        Command::Calibrate { corpus, out } => {
            let dir = pick(corpus, &cfg.paths.corpus, "--corpus")?;
            calibrate(&cfg, &dir, out.as_deref())
        }
        Command::Config => unreachable!("handled above"),
    }
}

fn pick(flag: &Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("{name} is required")))
}

fn read_script(path: &Path) -> Result<RideScript> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let script: RideScript =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    script.validate()?;
    Ok(script)
}

fn speed_rows(truth: &GroundTruth) -> Vec<SpeedRow> {
    truth
        .speed
        .iter()
        .zip(&truth.cadence)
        .enumerate()
        .map(|(k, (&speed, &cadence))| SpeedRow {
            t: k as f64,
            speed,
            cadence,
        })
        .collect()
}

fn write_ride(dir: &Path, stream: &[ImuSample], truth: &GroundTruth) -> Result<()> {
    fs::create_dir_all(dir)?;
    let stamps: Vec<f64> = (0..truth.deltas.len()).map(|k| k as f64).collect();
    write_imu(&dir.join("imu.csv"), stream)?;
    write_trajectory(&dir.join("truth.csv"), &truth.traj)?;
    write_deltas(&dir.join("deltas.csv"), &stamps, &truth.deltas)?;
    write_positions(&dir.join("fine.csv"), FINE_RATE as f64, &truth.fine)?;
    write_records(&dir.join("speed.csv"), &speed_rows(truth))
}

fn simulate(cfg: &RunConfig, script: &Path, out: &Path) -> Result<()> {
    let script = read_script(script)?;
    let (stream, truth) = synth::generate(&script, &cfg.noise)?;
    write_ride(out, &stream, &truth)?;
    println!(
        "simulated {:.2} s, {} samples, {:.2} m",
        script.duration,
        stream.len(),
        truth.traj.path_length()
    );
    Ok(())
}

/// Writes into a sibling staging directory and renames it into place, so a
/// failure never leaves a half-written corpus behind.
fn write_dir_atomic(out: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let name = out
        .file_name()
        .ok_or_else(|| Error::Config(format!("bad output directory {}", out.display())))?
        .to_string_lossy()
        .into_owned();
    let parent = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let stage = parent.join(format!(".{name}.{}.tmp", std::process::id()));
    let _ = fs::remove_dir_all(&stage);
    fs::create_dir_all(&stage)?;
    if let Err(e) = fill(&stage) {
        let _ = fs::remove_dir_all(&stage);
        return Err(e);
    }
    if out.exists() {
        let old = parent.join(format!(".{name}.{}.old", std::process::id()));
        fs::rename(out, &old)?;
        fs::rename(&stage, out)?;
        fs::remove_dir_all(&old)?;
    } else {
        fs::rename(&stage, out)?;
    }
    Ok(())
}

pub fn preset_scripts(
    preset: Preset,
    total_s: f64,
    ride_s: f64,
    seed: u64,
) -> Result<Vec<RideScript>> {
    if !(total_s > 0.0) || !(ride_s > 0.0) {
        return Err(Error::Config(
            "corpus and ride lengths must be positive".into(),
        ));
    }
    let seed = sub_seed(seed, "corpus");
    let n = (total_s / ride_s).ceil() as usize;
    Ok(match preset {
        Preset::Free => scenarios::free_corpus(total_s, ride_s, seed),
        Preset::Pace => scenarios::pace_corpus(total_s, ride_s, seed),
        Preset::Fast => (0..n)
            .map(|i| scenarios::fast_anomaly(ride_s, sub_seed(seed, &format!("fast{i}"))))
            .collect(),
        Preset::Coast => (0..n)
            .map(|i| scenarios::coasting(2.0 + 0.5 * (i % 5) as f64, ride_s))
            .collect(),
    })
}

fn corpus(cfg: &RunConfig, preset: Preset, minutes: f64, ride_s: f64, out: &Path) -> Result<()> {
    let scripts = preset_scripts(preset, minutes * 60.0, ride_s, cfg.seed)?;
    let corpus = synth::make_corpus(&scripts, &cfg.noise)?;
    write_dir_atomic(out, |dir| {
        for (i, ride) in corpus.rides.iter().enumerate() {
            let rd = dir.join(format!("ride_{i:03}"));
            write_ride(&rd, &ride.stream, &ride.truth)?;
            let text = toml::to_string(&ride.script).map_err(|e| Error::Config(e.to_string()))?;
            pedaltrack_core::io::write_atomic(&rd.join("script.toml"), |w| {
                std::io::Write::write_all(w, text.as_bytes())
            })?;
        }
        Ok(())
    })?;
    let seconds: usize = corpus.rides.iter().map(|r| r.truth.deltas.len()).sum();
    println!("wrote {} rides, {seconds} s", corpus.rides.len());
    Ok(())
}

/// A ride read back from a corpus directory.
pub struct StoredRide {
    pub stream: Vec<ImuSample>,
    /// Initial heading of the truth trajectory.
    pub psi0: f64,
    /// Truth positions on the fine grid.
    pub fine: Vec<[f64; 2]>,
    pub speed: Vec<f64>,
}

pub fn load_corpus(dir: &Path) -> Result<Vec<StoredRide>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("cannot read corpus {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("ride_"))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Data(format!(
            "no ride_* directories in {}",
            dir.display()
        )));
    }
    dirs.iter()
        .map(|d| {
            let stream = read_imu(&d.join("imu.csv"))?;
            let psi0 = read_trajectory(&d.join("truth.csv"))?.poses()[0].psi;
            let fine = read_positions(&d.join("fine.csv"))?;
            let rows: Vec<SpeedRow> = read_records(&d.join("speed.csv"))?;
            Ok(StoredRide {
                stream,
                psi0,
                fine,
                speed: rows.iter().map(|r| r.speed).collect(),
            })
        })
        .collect()
}

/// Training windows every `stride` fine-grid ticks of each ride.
pub fn training_pairs(
    rides: &[StoredRide],
    window: usize,
    stride: usize,
) -> Result<Vec<(ImuWindow, MotionDelta)>> {
    let mut out = Vec::new();
    for r in rides {
        let rate = pedaltrack_core::pipeline::stream_rate(&r.stream)?;
        let rate = (rate * 1e6).round() / 1e6;
        out.extend(strided_windows(
            &r.stream, &r.fine, r.psi0, rate, window, stride,
        )?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

fn train_cmd(cfg: &RunConfig, corpus: &Path, out: &Path, log: Option<&Path>) -> Result<()> {
    let rides = load_corpus(corpus)?;
    let data = training_pairs(&rides, cfg.model.window, cfg.dataset.stride)?;
    let (model, outcome) = train(&cfg.model, &cfg.train, &data)?;
    let log = log.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    let rows: Vec<LossRow> = outcome
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(i, &loss)| LossRow { epoch: i + 1, loss })
        .collect();
    save_checkpoint(&model, out)?;
    write_records(&log, &rows)?;
    println!(
        "trained on {} windows, {} steps; loss {:.4} -> {:.4}",
        data.len(),
        outcome.steps,
        outcome.epoch_losses.first().copied().unwrap_or(f64::NAN),
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn track_mode(mode: Mode) -> TrackMode {
    match mode {
        Mode::Dr => TrackMode::DeadReckoning,
        Mode::Model => TrackMode::Model,
        Mode::ModelPwsEqual => TrackMode::ModelPwsEqual,
        Mode::ModelPwsIvw => TrackMode::ModelPwsIvw,
    }
}

fn track(
    cfg: &RunConfig,
    imu: &Path,
    checkpoint: Option<&PathBuf>,
    mode: Mode,
    out: &Path,
) -> Result<()> {
    let stream = read_imu(imu)?;
    let mode = track_mode(mode);
    let traj = match mode {
        TrackMode::DeadReckoning => {
            let start = NavState::for_bike(cfg.start.heading, cfg.geom.theta, cfg.start.speed);
            track_dr(&stream, &start, 1.0)?
        }
        _ => {
            let ckpt = checkpoint.ok_or_else(|| {
                Error::Config(format!("mode {} needs --checkpoint", mode.as_str()))
            })?;
            let model = load_checkpoint(ckpt)?;
            let start = Pose2D::new(0.0, 0.0, cfg.start.heading);
            track_model(&stream, &model, start, mode.fusion(), &cfg.geom, &cfg.pws)?.traj
        }
    };
    write_trajectory(out, &traj)?;
    println!(
        "{}: {} poses, {:.2} m",
        mode.as_str(),
        traj.len(),
        traj.path_length()
    );
    Ok(())
}

fn eval(est: &Path, gt: &Path, span: f64, out: Option<&Path>) -> Result<()> {
    let report = traj_report(&read_trajectory(est)?, &read_trajectory(gt)?, span)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PwsSummary {
    candidates: usize,
    readings: usize,
    anomalous: usize,
    tcr: f64,
    /// Absent when no reading could be scored.
    errors: Option<pedaltrack_core::metrics::SpeedReport>,
}

#[derive(Serialize)]
struct ReadingRow {
    t_mid: f64,
    speed: f64,
    period: f64,
    sigma2: f64,
}

fn pws(
    cfg: &RunConfig,
    imu: &Path,
    speed: &Path,
    out: Option<&Path>,
    readings: Option<&Path>,
) -> Result<()> {
    let stream = read_imu(imu)?;
    let rows: Vec<SpeedRow> = read_records(speed)?;
    let truth: Vec<f64> = rows.iter().map(|r| r.speed).collect();
    let (pairs, scan) = pws_pairs(&stream, &truth, &cfg.geom, &cfg.pws)?;
    let errors: Vec<f64> = pairs.iter().map(|(e, t)| (e - t).abs()).collect();
    let summary = PwsSummary {
        candidates: scan.candidates,
        readings: scan.readings.len(),
        anomalous: scan.anomalous,
        tcr: scan.tcr,
        errors: if errors.is_empty() {
            None
        } else {
            Some(speed_report(&errors, scan.tcr)?)
        },
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(p) = readings {
        let rows: Vec<ReadingRow> = scan
            .readings
            .iter()
            .map(|r| ReadingRow {
                t_mid: r.t_mid,
                speed: r.v,
                period: r.period,
                sigma2: r.sigma2,
            })
            .collect();
        write_records(p, &rows)?;
    }
    if let Some(p) = out {
        write_json(p, &summary)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Calibration {
    sigma2: [f64; 3],
    counts: [usize; 3],
}

fn calibrate(cfg: &RunConfig, corpus: &Path, out: Option<&Path>) -> Result<()> {
    let mut pairs = Vec::new();
    for ride in load_corpus(corpus)? {
        pairs.extend(pws_pairs(&ride.stream, &ride.speed, &cfg.geom, &cfg.pws)?.0);
    }
    let mut counts = [0; 3];
    for (e, _) in &pairs {
        counts[speed_level(*e)] += 1;
    }
    let cal = Calibration {
        sigma2: calibrate_variance(&pairs, DEFAULT_SIGMA2),
        counts,
    };
    println!("{}", serde_json::to_string_pretty(&cal)?);
    println!(
        "--set pws.sigma2=[{:e}, {:e}, {:e}]",
        cal.sigma2[0], cal.sigma2[1], cal.sigma2[2]
    );
    if let Some(p) = out {
        write_json(p, &cal)?;
    }
    Ok(())
}
