//! End-to-end tracking pipelines shared by the command line tool and the
//! bindings.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse_stream, FusedDelta, FusionMode};
use crate::metrics::reference_speed;
use crate::model::{integrate_deltas_at, split_windows, ImuSample, Pose2D, Trajectory};
use crate::mtimnet::{MotionEstimate, Mtimnet};
use crate::pws::{scan_stream, BikeGeometry, PwsConfig, ScanResult};
use crate::sins::{dead_reckon_state, propagate, NavState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackMode {
    #[serde(rename = "dr")]
    DeadReckoning,
    #[serde(rename = "model")]
    Model,
    #[serde(rename = "model+pws-equal")]
    ModelPwsEqual,
    #[serde(rename = "model+pws-ivw")]
    ModelPwsIvw,
}

impl TrackMode {
    pub const ALL: [TrackMode; 4] = [
        TrackMode::DeadReckoning,
        TrackMode::Model,
        TrackMode::ModelPwsEqual,
        TrackMode::ModelPwsIvw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DeadReckoning => "dr",
            Self::Model => "model",
            Self::ModelPwsEqual => "model+pws-equal",
            Self::ModelPwsIvw => "model+pws-ivw",
        }
    }

    pub fn fusion(self) -> FusionMode {
        match self {
            Self::ModelPwsEqual => FusionMode::Equal,
            Self::ModelPwsIvw => FusionMode::Ivw,
            _ => FusionMode::Off,
        }
    }
}

impl FromStr for TrackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown track mode {s:?}")))
    }
}

/// Sampling rate implied by the timestamps of a stream.
pub fn stream_rate(stream: &[ImuSample]) -> Result<f64> {
    match (stream.first(), stream.last()) {
        (Some(a), Some(b)) if stream.len() > 1 && b.t > a.t => {
            Ok((stream.len() - 1) as f64 / (b.t - a.t))
        }
        _ => Err(Error::Data("need at least two timestamped samples".into())),
    }
}

/// Strapdown dead reckoning sampled every `interval` seconds from the first
/// sample, up to one sample period past the last one.
pub fn track_dr(stream: &[ImuSample], start: &NavState, interval: f64) -> Result<Trajectory> {
    let rate = stream_rate(stream)?;
    let (last_state, traj) = dead_reckon_state(start, stream)?;
    let last = stream[stream.len() - 1];
    let dt = 1.0 / rate;
    let end = propagate(&last_state, &last, dt)?;
    let mut stamps = traj.stamps().to_vec();
    let mut poses = traj.poses().to_vec();
    stamps.push(last.t + dt);
    poses.push(end.pose());
    let full = Trajectory::new(stamps, poses)?;
    let t0 = stream[0].t;
    let ticks = ((last.t + dt - t0) / interval + 1e-6).floor() as usize;
    let times: Vec<f64> = (0..=ticks).map(|k| t0 + k as f64 * interval).collect();
    full.resample_at(&times)
}

/// Output of the learned pipelines.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelTrack {
    pub traj: Trajectory,
    pub estimates: Vec<MotionEstimate>,
    pub fused: Vec<FusedDelta>,
    pub scan: Option<ScanResult>,
}

/// Network inference on consecutive windows, optionally fused with pseudo
/// wheel speed. Trailing samples that do not fill a window are ignored.
pub fn track_model(
    stream: &[ImuSample],
    model: &Mtimnet,
    start: Pose2D,
    fusion: FusionMode,
    geom: &BikeGeometry,
    pws: &PwsConfig,
) -> Result<ModelTrack> {
    let window = model.config().window;
    if stream.len() < window {
        return Err(Error::Data(format!(
            "stream of {} samples is shorter than the {window}-sample model window",
            stream.len()
        )));
    }
    let rate = stream_rate(stream)?;
    let windows = split_windows(stream, window)?;
    let estimates = model.predict_all(&windows)?;
    let interval = window as f64 / rate;
    let scan = match fusion {
        FusionMode::Off => None,
        _ => Some(scan_stream(stream, geom, pws, rate)?),
    };
    let readings = scan.as_ref().map_or(&[][..], |s| &s.readings[..]);
    let fused = fuse_stream(
        &estimates,
        stream[0].t,
        interval,
        readings,
        pws.window_s,
        fusion,
    )?;
    let deltas = fused
        .iter()
        .map(|f| crate::model::MotionDelta::new(f.dd, f.dpsi))
        .collect::<Result<Vec<_>>>()?;
    let traj = integrate_deltas_at(start, stream[0].t, interval, &deltas)?;
    Ok(ModelTrack {
        traj,
        estimates,
        fused,
        scan,
    })
}

/// `(estimate, reference)` speed pairs of every reading against per-second
/// truth speeds, plus the scan itself. Readings whose window is not covered
/// by truth are skipped.
pub fn pws_pairs(
    stream: &[ImuSample],
    truth_speed: &[f64],
    geom: &BikeGeometry,
    cfg: &PwsConfig,
) -> Result<(Vec<(f64, f64)>, ScanResult)> {
    let rate = stream_rate(stream)?;
    let scan = scan_stream(stream, geom, cfg, rate)?;
    let t0 = stream[0].t;
    let pairs = scan
        .readings
        .iter()
        .filter_map(|r| reference_speed(truth_speed, r.t_mid - t0, cfg.window_s).map(|v| (r.v, v)))
        .collect();
    Ok((pairs, scan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ate;
    use crate::synth::{generate, scenarios, NoiseSpec};

    #[test]
    fn modes_round_trip_through_strings() {
        for m in TrackMode::ALL {
            assert_eq!(m.as_str().parse::<TrackMode>().unwrap(), m);
        }
        assert!("fused".parse::<TrackMode>().is_err());
    }

    #[test]
    fn dr_on_clean_straight_ride_matches_truth() {
        let s = crate::synth::RideScript {
            pedal_amp: 0.0,
            ..scenarios::constant(3.0, 60.0)
        };
        let (stream, gt) = generate(&s, &NoiseSpec::zero()).unwrap();
        let start = NavState::for_bike(0.0, 0.0, 3.0);
        let est = track_dr(&stream, &start, 1.0).unwrap();
        assert_eq!(est.len(), 61);
        assert!(ate(&est, &gt.traj).unwrap() < 0.05);
    }

    #[test]
    fn model_track_has_one_pose_per_window() {
        let (stream, _) = generate(&scenarios::constant(3.0, 5.5), &NoiseSpec::default()).unwrap();
        let model = Mtimnet::new(Default::default()).unwrap();
        let out = track_model(
            &stream,
            &model,
            Pose2D::default(),
            FusionMode::Off,
            &BikeGeometry::default(),
            &PwsConfig::default(),
        )
        .unwrap();
        assert_eq!(out.traj.len(), 6);
        assert!(out.scan.is_none());
        let short = &stream[..50];
        assert!(matches!(
            track_model(
                short,
                &model,
                Pose2D::default(),
                FusionMode::Off,
                &BikeGeometry::default(),
                &PwsConfig::default()
            ),
            Err(Error::Data(_))
        ));
    }
}
