//! Synthetic rides with exact ground truth.
//!
//! A ride is described by a piecewise-linear speed profile and a
//! piecewise-constant yaw rate. The generator integrates them analytically
//! (positions by Gauss-Legendre quadrature) and synthesises the IMU stream a
//! bike-mounted device would see: gravity, along-track acceleration and a
//! pedalling ripple on the forward axis, centripetal acceleration on the
//! lateral axis, and the yaw rate projected through the mounting angle.
//! Bias and white noise are added last.
//!
//! Ground truth is sampled once per second. The pose heading at each tick is
//! the bearing of the chord from the previous tick, so that the per-second
//! deltas re-integrate to the ground-truth positions exactly.

pub mod scenarios;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    split_windows, wrap_angle, ImuSample, ImuWindow, MotionDelta, Pose2D, Trajectory,
};
use crate::pws::BikeGeometry;
use crate::seed::sub_seed;
use crate::sins::STANDARD_GRAVITY;

/// Speed above which the freewheel anomaly can occur, m/s.
pub const FREEWHEEL_SPEED: f64 = 4.5;
/// Stroke rate of the rider while the pedals slip, Hz.
pub const FREEWHEEL_STROKE_HZ: f64 = 0.9;
/// Relative amplitude of the third harmonic during the anomaly.
pub const FREEWHEEL_HARMONIC: f64 = 1.5;
/// Ground-truth positions per second on the fine grid.
pub const FINE_RATE: usize = 10;
/// Width of each ripple valley as a fraction of the half pedal cycle.
const VALLEY_WIDTH: f64 = 0.6;
/// No pedalling below this speed, m/s.
const MIN_PEDAL_SPEED: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub acc_bias: [f64; 3],
    pub gyro_bias: [f64; 3],
    pub acc_noise_std: f64,
    pub gyro_noise_std: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            acc_bias: [0.02, -0.015, 0.01],
            gyro_bias: [0.0005, -0.0003, 0.0004],
            acc_noise_std: 0.08,
            gyro_noise_std: 0.005,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            acc_bias: [0.0; 3],
            gyro_bias: [0.0; 3],
            acc_noise_std: 0.0,
            gyro_noise_std: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.acc_noise_std >= 0.0) || !(self.gyro_noise_std >= 0.0) {
            return Err(Error::Config(
                "noise standard deviations must be non-negative".into(),
            ));
        }
        crate::error::ensure_finite("noise biases", &[self.acc_bias, self.gyro_bias].concat())
            .map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RideScript {
    /// s
    pub duration: f64,
    /// Hz
    pub rate: f64,
    /// `[t, v]` knots of a piecewise-linear speed, held constant outside.
    pub speed_profile: Vec<[f64; 2]>,
    /// `[t_start, yaw_rate]`: the yaw rate (rad/s, clockwise positive) from
    /// `t_start` until the next entry. Zero before the first entry.
    pub turn_profile: Vec<[f64; 2]>,
    /// Depth of each pedalling valley, m/s².
    pub pedal_amp: f64,
    /// `[t0, t1]` intervals without pedalling.
    pub coast_intervals: Vec<[f64; 2]>,
    pub geom: BikeGeometry,
    /// Compass heading at `t = 0`, rad.
    pub initial_heading: f64,
    /// Inject the multi-peak freewheel pattern above [`FREEWHEEL_SPEED`].
    pub freewheel: bool,
}

impl Default for RideScript {
    fn default() -> Self {
        Self {
            duration: 60.0,
            rate: 100.0,
            speed_profile: vec![[0.0, 3.0]],
            turn_profile: Vec::new(),
            pedal_amp: 0.4,
            coast_intervals: Vec::new(),
            geom: BikeGeometry::default(),
            initial_heading: 0.0,
            freewheel: false,
        }
    }
}

impl RideScript {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.rate > 0.0) || !self.rate.is_finite() {
            return bad(format!("rate must be positive, got {}", self.rate));
        }
        if self.speed_profile.is_empty() {
            return bad("speed_profile needs at least one knot".into());
        }
        for w in self.speed_profile.windows(2) {
            if !(w[1][0] > w[0][0]) {
                return bad("speed_profile times must strictly increase".into());
            }
        }
        for [t, v] in &self.speed_profile {
            if !t.is_finite() || !(*v >= 0.0) || !v.is_finite() {
                return bad(format!("invalid speed knot [{t}, {v}]"));
            }
        }
        for w in self.turn_profile.windows(2) {
            if !(w[1][0] > w[0][0]) {
                return bad("turn_profile times must strictly increase".into());
            }
        }
        if self.turn_profile.iter().flatten().any(|v| !v.is_finite()) {
            return bad("turn_profile values must be finite".into());
        }
        if self
            .coast_intervals
            .iter()
            .any(|[a, b]| !a.is_finite() || !b.is_finite() || b < a)
        {
            return bad("coast intervals must be finite [t0, t1] with t0 <= t1".into());
        }
        if !(self.pedal_amp >= 0.0) || !self.initial_heading.is_finite() {
            return bad("pedal_amp must be non-negative and initial_heading finite".into());
        }
        self.geom.validate()
    }

    /// Number of IMU samples.
    pub fn samples(&self) -> usize {
        (self.duration * self.rate).round() as usize
    }

    /// Number of whole seconds covered by ground truth.
    pub fn seconds(&self) -> usize {
        self.duration.floor() as usize
    }
}

/// Closed-form evaluation of a script's kinematics.
struct Profile<'a> {
    script: &'a RideScript,
    /// Distance travelled at each speed knot.
    dist_at_knot: Vec<f64>,
}

impl<'a> Profile<'a> {
    fn new(script: &'a RideScript) -> Self {
        let k = &script.speed_profile;
        let mut dist_at_knot = vec![0.0; k.len()];
        for i in 1..k.len() {
            let dt = k[i][0] - k[i - 1][0];
            dist_at_knot[i] = dist_at_knot[i - 1] + 0.5 * (k[i][1] + k[i - 1][1]) * dt;
        }
        Self {
            script,
            dist_at_knot,
        }
    }

    fn segment(&self, t: f64) -> Option<usize> {
        let k = &self.script.speed_profile;
        if t < k[0][0] || k.len() == 1 {
            return None;
        }
        let i = k.partition_point(|kn| kn[0] <= t);
        (i < k.len()).then(|| i - 1)
    }

    fn speed(&self, t: f64) -> f64 {
        let k = &self.script.speed_profile;
        match self.segment(t) {
            Some(i) => {
                let u = (t - k[i][0]) / (k[i + 1][0] - k[i][0]);
                k[i][1] + u * (k[i + 1][1] - k[i][1])
            }
            None if t < k[0][0] => k[0][1],
            None => k[k.len() - 1][1],
        }
    }

    fn accel(&self, t: f64) -> f64 {
        let k = &self.script.speed_profile;
        match self.segment(t) {
            Some(i) => (k[i + 1][1] - k[i][1]) / (k[i + 1][0] - k[i][0]),
            None => 0.0,
        }
    }

    /// Distance travelled since the first knot (negative before it).
    fn distance(&self, t: f64) -> f64 {
        let k = &self.script.speed_profile;
        match self.segment(t) {
            Some(i) => {
                let dt = t - k[i][0];
                self.dist_at_knot[i] + k[i][1] * dt + 0.5 * self.accel(t) * dt * dt
            }
            None if t < k[0][0] => k[0][1] * (t - k[0][0]),
            None => {
                let last = k.len() - 1;
                self.dist_at_knot[last] + k[last][1] * (t - k[last][0])
            }
        }
    }

    fn yaw_rate(&self, t: f64) -> f64 {
        let tp = &self.script.turn_profile;
        let i = tp.partition_point(|e| e[0] <= t);
        if i == 0 {
            0.0
        } else {
            tp[i - 1][1]
        }
    }

    /// Unwrapped compass heading, `initial_heading + ∫₀ᵗ yaw_rate`.
    fn heading(&self, t: f64) -> f64 {
        let tp = &self.script.turn_profile;
        let mut h = self.script.initial_heading;
        for (i, e) in tp.iter().enumerate() {
            let end = tp.get(i + 1).map_or(f64::INFINITY, |n| n[0]);
            let (a, b) = (e[0].max(0.0), end.min(t));
            if b > a {
                h += e[1] * (b - a);
            }
        }
        h
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .script
            .speed_profile
            .iter()
            .map(|k| k[0])
            .chain(self.script.turn_profile.iter().map(|e| e[0]))
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    fn coasting(&self, t: f64) -> bool {
        self.script
            .coast_intervals
            .iter()
            .any(|[a, b]| t >= *a && t <= *b)
    }

    fn freewheeling(&self, t: f64) -> bool {
        self.script.freewheel && self.speed(t) > FREEWHEEL_SPEED
    }

    /// Pedalling ripple on the forward axis.
    fn ripple(&self, t: f64) -> f64 {
        let amp = self.script.pedal_amp;
        if amp == 0.0 || self.coasting(t) || self.speed(t) < MIN_PEDAL_SPEED {
            return 0.0;
        }
        if self.freewheeling(t) {
            let ph = std::f64::consts::TAU * FREEWHEEL_STROKE_HZ * t;
            return 0.5 * amp * (ph.cos() + FREEWHEEL_HARMONIC * (3.0 * ph).cos());
        }
        // two valleys per pedal revolution
        let revs = self.distance(t) / self.script.geom.metres_per_rev();
        let u = (2.0 * revs).rem_euclid(1.0);
        let dip = if u < VALLEY_WIDTH {
            0.5 * (1.0 - (std::f64::consts::TAU * u / VALLEY_WIDTH).cos())
        } else {
            0.0
        };
        amp * (0.5 * VALLEY_WIDTH - dip)
    }

    /// East/north displacement over `[a, b]`.
    fn displacement(&self, a: f64, b: f64, breaks: &[f64]) -> (f64, f64) {
        let mut cuts = vec![a];
        cuts.extend(breaks.iter().copied().filter(|&t| t > a && t < b));
        cuts.push(b);
        let (mut dx, mut dy) = (0.0, 0.0);
        for w in cuts.windows(2) {
            let pieces = ((w[1] - w[0]) / 0.25).ceil().max(1.0) as usize;
            let h = (w[1] - w[0]) / pieces as f64;
            for p in 0..pieces {
                let lo = w[0] + p as f64 * h;
                for (x, wt) in GAUSS_LEGENDRE_8 {
                    let t = lo + 0.5 * h * (1.0 + x);
                    let v = self.speed(t);
                    let (s, c) = self.heading(t).sin_cos();
                    dx += 0.5 * h * wt * v * s;
                    dy += 0.5 * h * wt * v * c;
                }
            }
        }
        (dx, dy)
    }
}

const GAUSS_LEGENDRE_8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Poses at `t = 0, 1, ..., seconds`.
    pub traj: Trajectory,
    /// Delta over second `k`, i.e. from pose `k` to pose `k + 1`.
    pub deltas: Vec<MotionDelta>,
    /// Mean speed over second `k`, m/s.
    pub speed: Vec<f64>,
    /// Pedal frequency over second `k`, Hz (0 while coasting).
    pub cadence: Vec<f64>,
    /// East/north positions every `1 / FINE_RATE` s.
    pub fine: Vec<[f64; 2]>,
}

impl GroundTruth {
    /// Motion over the second starting at fine tick `j`, if defined.
    pub fn delta_at(&self, j: usize) -> Option<MotionDelta> {
        let psi0 = self.traj.poses()[0].psi;
        window_delta(&self.fine, psi0, j).and_then(|r| r.ok())
    }
}

/// Generates the IMU stream and its ground truth.
pub fn generate(script: &RideScript, noise: &NoiseSpec) -> Result<(Vec<ImuSample>, GroundTruth)> {
    script.validate()?;
    noise.validate()?;
    let prof = Profile::new(script);
    let truth = ground_truth(&prof)?;
    let stream = imu_stream(&prof, noise);
    Ok((stream, truth))
}

fn ground_truth(prof: &Profile) -> Result<GroundTruth> {
    let s = prof.script;
    let n = s.seconds();
    let breaks = prof.breakpoints();
    let h = 1.0 / FINE_RATE as f64;
    let mut fine = Vec::with_capacity(n * FINE_RATE + 1);
    let mut at = [0.0, 0.0];
    fine.push(at);
    for j in 0..n * FINE_RATE {
        let (dx, dy) = prof.displacement(j as f64 * h, (j + 1) as f64 * h, &breaks);
        at = [at[0] + dx, at[1] + dy];
        fine.push(at);
    }
    let psi0 = wrap_angle(s.initial_heading);
    let mut poses = Vec::with_capacity(n + 1);
    let mut deltas = Vec::with_capacity(n);
    let mut speed = Vec::with_capacity(n);
    let mut cadence = Vec::with_capacity(n);
    for k in 0..=n {
        let j = k * FINE_RATE;
        let psi = fine_heading(&fine, psi0, j).expect("whole seconds have a heading");
        poses.push(Pose2D::new(fine[j][0], fine[j][1], psi));
        if k == n {
            break;
        }
        deltas.push(window_delta(&fine, psi0, j).expect("inside the ride")?);
        let (a, b) = (k as f64, (k + 1) as f64);
        let v = prof.distance(b) - prof.distance(a);
        speed.push(v);
        let mid = a + 0.5;
        cadence.push(if prof.coasting(mid) || prof.speed(mid) < MIN_PEDAL_SPEED {
            0.0
        } else if prof.freewheeling(mid) {
            FREEWHEEL_STROKE_HZ
        } else {
            v / s.geom.metres_per_rev()
        });
    }
    let stamps = (0..=n).map(|k| k as f64).collect();
    Ok(GroundTruth {
        traj: Trajectory::new(stamps, poses)?,
        deltas,
        speed,
        cadence,
        fine,
    })
}

/// Heading at fine tick `j`: the bearing of the chord covered in the second
/// before it, held while stopped, `psi0` at the start. `None` for ticks
/// inside the first second.
pub fn fine_heading(fine: &[[f64; 2]], psi0: f64, j: usize) -> Option<f64> {
    let mut j = j;
    loop {
        if j == 0 {
            return Some(psi0);
        }
        if j < FINE_RATE || j >= fine.len() {
            return None;
        }
        let (dx, dy) = (
            fine[j][0] - fine[j - FINE_RATE][0],
            fine[j][1] - fine[j - FINE_RATE][1],
        );
        if dx.hypot(dy) > 1e-9 {
            return Some(dx.atan2(dy));
        }
        j -= FINE_RATE;
    }
}

/// Motion over the second starting at fine tick `j`.
pub fn window_delta(fine: &[[f64; 2]], psi0: f64, j: usize) -> Option<Result<MotionDelta>> {
    let end = j + FINE_RATE;
    let a = fine_heading(fine, psi0, j)?;
    let b = fine_heading(fine, psi0, end)?;
    let dd = (fine[end][0] - fine[j][0]).hypot(fine[end][1] - fine[j][1]);
    Some(MotionDelta::new(dd, wrap_angle(b - a)))
}

fn imu_stream(prof: &Profile, noise: &NoiseSpec) -> Vec<ImuSample> {
    let s = prof.script;
    let (st, ct) = s.geom.theta.sin_cos();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let acc_n = Normal::new(0.0, noise.acc_noise_std).expect("validated std");
    let gyro_n = Normal::new(0.0, noise.gyro_noise_std).expect("validated std");
    (0..s.samples())
        .map(|i| {
            let t = i as f64 / s.rate;
            let v = prof.speed(t);
            let w = prof.yaw_rate(t);
            let fwd = prof.accel(t) + prof.ripple(t);
            let mut acc = [
                -st * fwd + ct * STANDARD_GRAVITY,
                v * w,
                ct * fwd + st * STANDARD_GRAVITY,
            ];
            let mut gyro = [-w * ct, 0.0, -w * st];
            for c in 0..3 {
                acc[c] += noise.acc_bias[c] + acc_n.sample(&mut rng);
            }
            for c in 0..3 {
                gyro[c] += noise.gyro_bias[c] + gyro_n.sample(&mut rng);
            }
            ImuSample::new(t, acc, gyro)
        })
        .collect()
}

/// Instantaneous compass heading of a script at time `t` (unwrapped).
pub fn heading_at(script: &RideScript, t: f64) -> f64 {
    Profile::new(script).heading(t)
}

/// Instantaneous speed of a script at time `t`.
pub fn speed_at(script: &RideScript, t: f64) -> f64 {
    Profile::new(script).speed(t)
}

/// One generated ride.
#[derive(Clone, Debug, PartialEq)]
pub struct Ride {
    pub script: RideScript,
    pub stream: Vec<ImuSample>,
    pub truth: GroundTruth,
}

impl Ride {
    /// Model windows paired with their truth deltas.
    pub fn windows(&self, window: usize) -> Result<Vec<(ImuWindow, MotionDelta)>> {
        let w = split_windows(&self.stream, window)?;
        Ok(w.into_iter()
            .zip(self.truth.deltas.iter().copied())
            .collect())
    }

    /// One-second windows starting every `stride` fine ticks.
    pub fn strided_windows(
        &self,
        window: usize,
        stride: usize,
    ) -> Result<Vec<(ImuWindow, MotionDelta)>> {
        strided_windows(
            &self.stream,
            &self.truth.fine,
            self.truth.traj.poses()[0].psi,
            self.script.rate,
            window,
            stride,
        )
    }
}

/// One-second windows of `stream` starting every `stride` ticks of the fine
/// truth grid, paired with their truth deltas. Windows whose start lies
/// inside the first second (other than at zero) have no defined heading
/// change and are skipped.
pub fn strided_windows(
    stream: &[ImuSample],
    fine: &[[f64; 2]],
    psi0: f64,
    rate: f64,
    window: usize,
    stride: usize,
) -> Result<Vec<(ImuWindow, MotionDelta)>> {
    let per_tick = rate / FINE_RATE as f64;
    if stride == 0 || per_tick.fract() != 0.0 || (window as f64 - rate).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "strided windows need a one-second window at a multiple of {FINE_RATE} Hz and a positive stride"
        )));
    }
    let per_tick = per_tick as usize;
    let mut out = Vec::new();
    let mut j = 0;
    while j * per_tick + window <= stream.len() && j + FINE_RATE < fine.len() {
        if let Some(d) = window_delta(fine, psi0, j) {
            let s = j * per_tick;
            out.push((ImuWindow::new(stream[s..s + window].to_vec(), window)?, d?));
        }
        j += stride;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub rides: Vec<Ride>,
}

impl Corpus {
    /// All `(window, delta)` pairs in ride order.
    pub fn dataset(&self, window: usize) -> Result<Vec<(ImuWindow, MotionDelta)>> {
        let mut out = Vec::new();
        for r in &self.rides {
            out.extend(r.windows(window)?);
        }
        Ok(out)
    }

    /// Like [`Corpus::dataset`] with windows starting every `stride` fine ticks.
    pub fn strided_dataset(
        &self,
        window: usize,
        stride: usize,
    ) -> Result<Vec<(ImuWindow, MotionDelta)>> {
        let mut out = Vec::new();
        for r in &self.rides {
            out.extend(r.strided_windows(window, stride)?);
        }
        Ok(out)
    }
}

/// Generates every scenario; ride `i` draws its noise from a sub-seed of
/// `noise.seed`.
pub fn make_corpus(scenarios: &[RideScript], noise: &NoiseSpec) -> Result<Corpus> {
    let rides = scenarios
        .iter()
        .enumerate()
        .map(|(i, script)| {
            let spec = NoiseSpec {
                seed: sub_seed(noise.seed, &format!("ride{i}")),
                ..noise.clone()
            };
            let (stream, truth) = generate(script, &spec)?;
            Ok(Ride {
                script: script.clone(),
                stream,
                truth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { rides })
}
