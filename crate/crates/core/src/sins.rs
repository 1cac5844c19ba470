//! Strapdown dead reckoning: attitude, velocity and position propagation by
//! direct integration of IMU readings.
//!
//! World frame is east-north-up. Gravity `g` points down, so the world
//! acceleration is `a_w = R a_b + g`; a level stationary accelerometer
//! reading `(0, 0, +9.81)` yields `a_w = 0`.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::model::{validate_stream, ImuSample, Pose2D, Trajectory};

pub const STANDARD_GRAVITY: f64 = 9.81;

/// Attitude is re-orthonormalized every this many propagation steps.
pub const REORTHONORMALIZE_EVERY: u64 = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct NavState {
    /// Body-to-world rotation.
    pub rot: Matrix3<f64>,
    /// World-frame velocity, m/s.
    pub vel: Vector3<f64>,
    /// World-frame position, m.
    pub pos: Vector3<f64>,
    /// World-frame gravity, m/s².
    pub gravity: Vector3<f64>,
    /// Body-frame axis that points along the direction of travel; used to
    /// read the planar heading off the attitude.
    pub forward: Vector3<f64>,
    steps: u64,
}

impl Default for NavState {
    fn default() -> Self {
        Self {
            rot: Matrix3::identity(),
            vel: Vector3::zeros(),
            pos: Vector3::zeros(),
            gravity: Vector3::new(0.0, 0.0, -STANDARD_GRAVITY),
            forward: Vector3::x(),
            steps: 0,
        }
    }
}

impl NavState {
    /// Level bike at the origin, travelling at `speed` along compass heading
    /// `heading`, with the device pitched by `mounting_angle` about its
    /// lateral axis.
    ///
    /// Device axes for a zero mounting angle: x up, y right, z forward. This
    /// is the frame in which forward acceleration is `az cos θ - ax sin θ`.
    pub fn for_bike(heading: f64, mounting_angle: f64, speed: f64) -> Self {
        let (sp, cp) = heading.sin_cos();
        let (st, ct) = mounting_angle.sin_cos();
        let fwd = Vector3::new(sp, cp, 0.0);
        let right = Vector3::new(cp, -sp, 0.0);
        let up = Vector3::z();
        let x_dev = -st * fwd + ct * up;
        let z_dev = ct * fwd + st * up;
        Self {
            rot: Matrix3::from_columns(&[x_dev, right, z_dev]),
            vel: speed * fwd,
            forward: Vector3::new(-st, 0.0, ct),
            ..Self::default()
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Compass heading of the forward axis: `atan2(east, north)` of `R * forward`.
    pub fn heading(&self) -> f64 {
        let f = self.rot * self.forward;
        f.x.atan2(f.y)
    }

    pub fn pose(&self) -> Pose2D {
        Pose2D::new(self.pos.x, self.pos.y, self.heading())
    }

    /// Largest entry of `RᵀR - I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rot.transpose() * self.rot - Matrix3::identity()).amax()
    }
}

/// One propagation step over `dt` seconds using a single reading.
///
/// Attitude: `R' = R exp([ω dt]ₓ)` (Rodrigues). The specific force is rotated
/// by the mid-step attitude `R exp([ω dt/2]ₓ)`: `a_w = R_mid a_b + g`,
/// `v' = v + a_w dt`, `p' = p + v dt + ½ a_w dt²`.
pub fn propagate(state: &NavState, sample: &ImuSample, dt: f64) -> Result<NavState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if !sample.is_finite() {
        return Err(Error::InvalidArgument("non-finite IMU sample".into()));
    }
    let omega = Vector3::from(sample.gyro) * dt;
    let half = Rotation3::from_scaled_axis(omega * 0.5);
    let mid = state.rot * half.matrix();
    let mut rot = mid * half.matrix();
    let steps = state.steps + 1;
    if steps % REORTHONORMALIZE_EVERY == 0 {
        rot = gram_schmidt(&rot);
    }
    let acc_world = mid * Vector3::from(sample.acc) + state.gravity;
    Ok(NavState {
        rot,
        vel: state.vel + acc_world * dt,
        pos: state.pos + state.vel * dt + 0.5 * acc_world * dt * dt,
        gravity: state.gravity,
        forward: state.forward,
        steps,
    })
}

fn gram_schmidt(m: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = m.column(0).normalize();
    let c1 = m.column(1) - c0 * c0.dot(&m.column(1));
    let c1 = c1.normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

/// Integrates a whole stream, returning the final state and one pose per sample.
///
/// Each step between consecutive samples uses their average reading.
pub fn dead_reckon_state(start: &NavState, stream: &[ImuSample]) -> Result<(NavState, Trajectory)> {
    validate_stream(stream)?;
    let Some(first) = stream.first() else {
        return Ok((
            start.clone(),
            Trajectory::new(vec![0.0], vec![start.pose()])?,
        ));
    };
    let mut stamps = Vec::with_capacity(stream.len());
    let mut poses = Vec::with_capacity(stream.len());
    stamps.push(first.t);
    poses.push(start.pose());
    let mut state = start.clone();
    for pair in stream.windows(2) {
        let dt = pair[1].t - pair[0].t;
        state = propagate(&state, &pair[0].midpoint(&pair[1]), dt)?;
        stamps.push(pair[1].t);
        poses.push(state.pose());
    }
    Ok((state, Trajectory::new(stamps, poses)?))
}

pub fn dead_reckon(start: &NavState, stream: &[ImuSample]) -> Result<Trajectory> {
    dead_reckon_state(start, stream).map(|(_, traj)| traj)
}
