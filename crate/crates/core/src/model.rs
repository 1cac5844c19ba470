//! Shared domain types and planar trajectory kinematics.
//!
//! Heading convention: `psi` is a compass-style bearing measured from the +y
//! axis, positive clockwise toward +x. A unit step at heading `psi` therefore
//! moves by `(sin psi, cos psi)`. When a step carries both a heading increment
//! and a displacement, the heading is updated first and the displacement is
//! laid out along the new heading.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// One 6-axis inertial reading: specific force (m/s²) and angular rate (rad/s)
/// in the device frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    pub acc: [f64; 3],
    pub gyro: [f64; 3],
}

impl ImuSample {
    pub fn new(t: f64, acc: [f64; 3], gyro: [f64; 3]) -> Self {
        Self { t, acc, gyro }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.acc.iter().all(|v| v.is_finite())
            && self.gyro.iter().all(|v| v.is_finite())
    }

    /// Component-wise average of two readings, stamped at the midpoint.
    pub fn midpoint(&self, other: &ImuSample) -> ImuSample {
        let avg = |a: [f64; 3], b: [f64; 3]| {
            [
                0.5 * (a[0] + b[0]),
                0.5 * (a[1] + b[1]),
                0.5 * (a[2] + b[2]),
            ]
        };
        ImuSample {
            t: 0.5 * (self.t + other.t),
            acc: avg(self.acc, other.acc),
            gyro: avg(self.gyro, other.gyro),
        }
    }

    /// The six channels in the order `ax, ay, az, gx, gy, gz`.
    pub fn channels(&self) -> [f64; 6] {
        [
            self.acc[0],
            self.acc[1],
            self.acc[2],
            self.gyro[0],
            self.gyro[1],
            self.gyro[2],
        ]
    }
}

/// Checks that timestamps strictly increase and every value is finite.
pub fn validate_stream(samples: &[ImuSample]) -> Result<()> {
    if let Some(bad) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::Data(format!("non-finite IMU sample at index {bad}")));
    }
    if let Some(i) = samples.windows(2).position(|w| w[1].t <= w[0].t) {
        return Err(Error::Data(format!(
            "IMU timestamps not strictly increasing at index {}",
            i + 1
        )));
    }
    Ok(())
}

/// A fixed-length block of consecutive samples consumed by one model inference.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuWindow {
    samples: Vec<ImuSample>,
}

impl ImuWindow {
    pub fn new(samples: Vec<ImuSample>, expected_len: usize) -> Result<Self> {
        if samples.len() != expected_len {
            return Err(Error::Data(format!(
                "window has {} samples, expected {expected_len}",
                samples.len()
            )));
        }
        validate_stream(&samples)?;
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Channel-major copy of the window: `out[c * len + i]` is channel `c` of sample `i`.
    pub fn channel_major(&self) -> Vec<f64> {
        let n = self.samples.len();
        let mut out = vec![0.0; 6 * n];
        for (i, s) in self.samples.iter().enumerate() {
            for (c, v) in s.channels().into_iter().enumerate() {
                out[c * n + i] = v;
            }
        }
        out
    }
}

/// Splits a stream into consecutive non-overlapping windows of `len` samples.
/// A trailing partial window is dropped.
pub fn split_windows(stream: &[ImuSample], len: usize) -> Result<Vec<ImuWindow>> {
    if len == 0 {
        return Err(Error::Config("window length must be positive".into()));
    }
    stream
        .chunks_exact(len)
        .map(|c| ImuWindow::new(c.to_vec(), len))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Self {
            x,
            y,
            psi: wrap_angle(psi),
        }
    }

    pub fn distance_to(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Displacement and heading increment over one interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionDelta {
    pub dd: f64,
    pub dpsi: f64,
}

impl MotionDelta {
    pub fn new(dd: f64, dpsi: f64) -> Result<Self> {
        ensure_finite("motion delta", &[dd, dpsi])?;
        if dd < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "displacement must be non-negative, got {dd}"
            )));
        }
        Ok(Self { dd, dpsi })
    }
}

/// Timestamped sequence of planar poses.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    stamps: Vec<f64>,
    poses: Vec<Pose2D>,
}

impl Trajectory {
    pub fn new(stamps: Vec<f64>, poses: Vec<Pose2D>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::Data("trajectory must not be empty".into()));
        }
        if stamps.len() != poses.len() {
            return Err(Error::Data(format!(
                "{} timestamps for {} poses",
                stamps.len(),
                poses.len()
            )));
        }
        if stamps.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Data("trajectory timestamps must be monotone".into()));
        }
        Ok(Self { stamps, poses })
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    pub fn poses(&self) -> &[Pose2D] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn last(&self) -> &Pose2D {
        self.poses.last().expect("trajectory is never empty")
    }

    pub fn duration(&self) -> f64 {
        self.stamps[self.stamps.len() - 1] - self.stamps[0]
    }

    /// Sum of straight-line distances between consecutive poses.
    pub fn path_length(&self) -> f64 {
        self.poses.windows(2).map(|w| w[0].distance_to(&w[1])).sum()
    }

    /// Poses whose stamps fall on `t0, t0 + step, ...` (nearest sample, within half a sample).
    pub fn resample_at(&self, times: &[f64]) -> Result<Trajectory> {
        let mut out = Vec::with_capacity(times.len());
        let mut j = 0;
        for &t in times {
            while j + 1 < self.stamps.len()
                && (self.stamps[j + 1] - t).abs() <= (self.stamps[j] - t).abs()
            {
                j += 1;
            }
            out.push(self.poses[j]);
        }
        Trajectory::new(times.to_vec(), out)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Applies one displacement/heading increment to a pose.
pub fn step_pose(p: Pose2D, delta: MotionDelta) -> Result<Pose2D> {
    ensure_finite("pose", &[p.x, p.y, p.psi])?;
    ensure_finite("motion delta", &[delta.dd, delta.dpsi])?;
    let psi = wrap_angle(p.psi + delta.dpsi);
    Ok(Pose2D {
        x: p.x + delta.dd * psi.sin(),
        y: p.y + delta.dd * psi.cos(),
        psi,
    })
}

/// Folds [`step_pose`] over `deltas`, one delta per second starting at `t = 0`.
pub fn integrate_deltas(start: Pose2D, deltas: &[MotionDelta]) -> Result<Trajectory> {
    integrate_deltas_at(start, 0.0, 1.0, deltas)
}

/// Like [`integrate_deltas`] with an explicit start time and interval.
pub fn integrate_deltas_at(
    start: Pose2D,
    t0: f64,
    dt: f64,
    deltas: &[MotionDelta],
) -> Result<Trajectory> {
    let mut poses = Vec::with_capacity(deltas.len() + 1);
    let mut stamps = Vec::with_capacity(deltas.len() + 1);
    let mut p = start;
    poses.push(p);
    stamps.push(t0);
    for (i, d) in deltas.iter().enumerate() {
        p = step_pose(p, *d)?;
        poses.push(p);
        stamps.push(t0 + (i + 1) as f64 * dt);
    }
    Trajectory::new(stamps, poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn step_pose_examples() {
        let p = step_pose(Pose2D::default(), MotionDelta { dd: 1.0, dpsi: 0.0 }).unwrap();
        assert_eq!((p.x, p.y, p.psi), (0.0, 1.0, 0.0));

        let p = step_pose(
            Pose2D::default(),
            MotionDelta {
                dd: 1.0,
                dpsi: FRAC_PI_2,
            },
        )
        .unwrap();
        assert!(close(p.x, 1.0, 1e-15) && close(p.y, 0.0, 1e-15));
        assert_eq!(p.psi, FRAC_PI_2);

        let start = Pose2D {
            x: 3.0,
            y: 4.0,
            psi: PI / 4.0,
        };
        let p = step_pose(start, MotionDelta { dd: 0.0, dpsi: 0.3 }).unwrap();
        assert_eq!((p.x, p.y), (3.0, 4.0));
        assert!(close(p.psi, PI / 4.0 + 0.3, 1e-15));
    }

    #[test]
    fn step_pose_rejects_non_finite() {
        let bad = MotionDelta {
            dd: f64::NAN,
            dpsi: 0.0,
        };
        assert!(matches!(
            step_pose(Pose2D::default(), bad),
            Err(Error::InvalidArgument(_))
        ));
        let bad_pose = Pose2D {
            x: f64::INFINITY,
            y: 0.0,
            psi: 0.0,
        };
        assert!(step_pose(bad_pose, MotionDelta::default()).is_err());
    }

    #[test]
    fn integrate_examples() {
        let t = integrate_deltas(Pose2D::default(), &[]).unwrap();
        assert_eq!(t.poses(), &[Pose2D::default()]);

        let north = vec![MotionDelta { dd: 1.0, dpsi: 0.0 }; 4];
        let t = integrate_deltas(Pose2D::default(), &north).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!((t.last().x, t.last().y, t.last().psi), (0.0, 4.0, 0.0));
        assert_eq!(t.stamps(), &[0.0, 1.0, 2.0, 3.0, 4.0]);

        let square = vec![
            MotionDelta {
                dd: 1.0,
                dpsi: FRAC_PI_2
            };
            4
        ];
        let end = *integrate_deltas(Pose2D::default(), &square).unwrap().last();
        assert!(end.x.hypot(end.y) < 1e-12, "{end:?}");
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert_eq!(wrap_angle(3.0 * PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert!(close(wrap_angle(-FRAC_PI_2), -FRAC_PI_2, 0.0));
    }

    #[test]
    fn motion_delta_rejects_negative_displacement() {
        assert!(MotionDelta::new(-0.1, 0.0).is_err());
        assert!(MotionDelta::new(0.0, f64::NAN).is_err());
        assert!(MotionDelta::new(2.0, -0.5).is_ok());
    }

    #[test]
    fn window_length_and_channels() {
        let samples: Vec<_> = (0..4)
            .map(|i| ImuSample::new(i as f64, [1.0, 2.0, 3.0], [4.0, 5.0, i as f64]))
            .collect();
        assert!(ImuWindow::new(samples.clone(), 5).is_err());
        let w = ImuWindow::new(samples, 4).unwrap();
        let cm = w.channel_major();
        assert_eq!(cm.len(), 24);
        assert_eq!(&cm[20..24], &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(cm[4], 2.0);
    }

    #[test]
    fn stream_validation_rejects_repeated_time() {
        let s = ImuSample::new(1.0, [0.0; 3], [0.0; 3]);
        assert!(matches!(validate_stream(&[s, s]), Err(Error::Data(_))));
    }

    #[test]
    fn trajectory_rejects_empty_and_mismatch() {
        assert!(Trajectory::new(vec![], vec![]).is_err());
        assert!(Trajectory::new(vec![0.0, 1.0], vec![Pose2D::default()]).is_err());
        assert!(Trajectory::new(vec![1.0, 0.0], vec![Pose2D::default(); 2]).is_err());
    }

    fn delta_strategy() -> impl Strategy<Value = MotionDelta> {
        (0.0..10.0f64, -PI..PI).prop_map(|(dd, dpsi)| MotionDelta { dd, dpsi })
    }

    proptest! {
        #[test]
        fn step_preserves_distance(
            x in -1e3..1e3f64, y in -1e3..1e3f64, psi in -PI..PI,
            dd in -20.0..20.0f64, dpsi in -10.0..10.0f64,
        ) {
            let p = Pose2D { x, y, psi };
            let q = step_pose(p, MotionDelta { dd, dpsi }).unwrap();
            prop_assert!((p.distance_to(&q) - dd.abs()).abs() < 1e-9);
            prop_assert!(q.psi > -PI && q.psi <= PI);
        }

        #[test]
        fn integration_is_associative(
            a in prop::collection::vec(delta_strategy(), 0..20),
            b in prop::collection::vec(delta_strategy(), 0..20),
        ) {
            let start = Pose2D { x: 1.0, y: -2.0, psi: 0.4 };
            let mid = *integrate_deltas(start, &a).unwrap().last();
            let split = *integrate_deltas(mid, &b).unwrap().last();
            let joined: Vec<_> = a.iter().chain(b.iter()).copied().collect();
            let whole = *integrate_deltas(start, &joined).unwrap().last();
            prop_assert_eq!(split, whole);
        }

        #[test]
        fn wrap_is_idempotent_and_periodic(a in -1e4..1e4f64, k in -50i32..50) {
            let w = wrap_angle(a);
            prop_assert!(w > -PI && w <= PI);
            prop_assert_eq!(wrap_angle(w), w);
            let shifted = wrap_angle(a + f64::from(k) * TAU);
            let diff = wrap_angle(shifted - w).abs();
            prop_assert!(diff < 1e-9, "{} vs {}", shifted, w);
        }
    }
}
