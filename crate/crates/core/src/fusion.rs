//! Inverse-variance fusion of model and pseudo-wheel-speed displacements.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mtimnet::{corrected_delta, MotionEstimate};
use crate::pws::PwsReading;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    Off,
    Equal,
    Ivw,
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "equal" => Ok(Self::Equal),
            "ivw" => Ok(Self::Ivw),
            _ => Err(Error::Config(format!("unknown fusion mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionSource {
    ModelOnly,
    FusedEqual,
    FusedIvw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedDelta {
    pub dd: f64,
    pub dpsi: f64,
    pub source: FusionSource,
}

/// `(d_m/var_m + d_p/var_p) / (1/var_m + 1/var_p)`.
pub fn fuse_displacement(d_m: f64, var_m: f64, d_p: f64, var_p: f64) -> Result<f64> {
    if !(var_m > 0.0) || !(var_p > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "variances must be positive, got {var_m} and {var_p}"
        )));
    }
    let (w_m, w_p) = (1.0 / var_m, 1.0 / var_p);
    Ok((d_m * w_m + d_p * w_p) / (w_m + w_p))
}

/// PWS displacement observation for one interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PwsObservation {
    pub dd: f64,
    pub var: f64,
    /// Plain mean of the contributing displacements.
    pub dd_mean: f64,
}

/// Combines every reading whose detection window overlaps
/// `[start, start + interval)`. Displacements are `v · interval`; several
/// readings are averaged with inverse-variance weights and their combined
/// variance is the harmonic mean of theirs (the windows share samples, so the
/// readings are not independent).
pub fn observation_for(
    readings: &[PwsReading],
    start: f64,
    interval: f64,
    window_s: f64,
) -> Option<PwsObservation> {
    let end = start + interval;
    let (mut sw, mut swd, mut sd, mut n) = (0.0, 0.0, 0.0, 0usize);
    for r in readings {
        let (lo, hi) = (r.t_mid - window_s / 2.0, r.t_mid + window_s / 2.0);
        if lo < end - 1e-9 && hi > start + 1e-9 {
            let d = r.v * interval;
            let var = r.sigma2 * interval * interval;
            sw += 1.0 / var;
            swd += d / var;
            sd += d;
            n += 1;
        }
    }
    (n > 0).then(|| PwsObservation {
        dd: swd / sw,
        var: n as f64 / sw,
        dd_mean: sd / n as f64,
    })
}

/// Fuses per-interval model estimates (interval `i` starts at `t0 + i·interval`)
/// with PWS readings. The heading increment is always the model's.
pub fn fuse_stream(
    model: &[MotionEstimate],
    t0: f64,
    interval: f64,
    readings: &[PwsReading],
    window_s: f64,
    mode: FusionMode,
) -> Result<Vec<FusedDelta>> {
    model
        .iter()
        .enumerate()
        .map(|(i, est)| {
            let base = corrected_delta(est)?;
            let model_only = FusedDelta {
                dd: base.dd,
                dpsi: base.dpsi,
                source: FusionSource::ModelOnly,
            };
            if mode == FusionMode::Off {
                return Ok(model_only);
            }
            let start = t0 + i as f64 * interval;
            let Some(obs) = observation_for(readings, start, interval, window_s) else {
                return Ok(model_only);
            };
            let (dd, source) = match mode {
                FusionMode::Equal => (0.5 * (base.dd + obs.dd_mean), FusionSource::FusedEqual),
                _ => (
                    fuse_displacement(base.dd, est.var_dd(), obs.dd, obs.var)?,
                    FusionSource::FusedIvw,
                ),
            };
            Ok(FusedDelta {
                dd: dd.max(0.0),
                dpsi: base.dpsi,
                source,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn est(dd: f64, dpsi: f64, lv: f64) -> MotionEstimate {
        MotionEstimate {
            dd_hat: dd,
            dpsi_hat: dpsi,
            e_dd: 0.0,
            e_dpsi: 0.01,
            log_var_dd: lv,
            log_var_dpsi: 0.0,
        }
    }

    fn reading(t_mid: f64, v: f64, sigma2: f64) -> PwsReading {
        PwsReading {
            t_mid,
            v,
            sigma2,
            period: 1.0,
        }
    }

    #[test]
    fn displacement_fixtures() {
        assert!((fuse_displacement(2.0, 1.0, 4.0, 1.0).unwrap() - 3.0).abs() < 1e-15);
        assert!((fuse_displacement(2.0, 1.0, 4.0, 1e9).unwrap() - 2.0).abs() < 1e-6);
        assert!((fuse_displacement(2.0, 1.0, 4.0, 3.0).unwrap() - 2.5).abs() < 1e-15);
        assert!(fuse_displacement(2.0, 0.0, 4.0, 1.0).is_err());
        assert!(fuse_displacement(2.0, 1.0, 4.0, -1.0).is_err());
    }

    #[test]
    fn without_readings_output_is_corrected_model() {
        let m = vec![est(3.0, 0.1, 0.0), est(2.0, -0.2, 1.0)];
        for mode in [FusionMode::Off, FusionMode::Equal, FusionMode::Ivw] {
            let out = fuse_stream(&m, 0.0, 1.0, &[], 5.0, mode).unwrap();
            for (o, e) in out.iter().zip(&m) {
                let c = corrected_delta(e).unwrap();
                assert_eq!((o.dd, o.dpsi), (c.dd, c.dpsi));
                assert_eq!(o.source, FusionSource::ModelOnly);
            }
        }
    }

    #[test]
    fn overlap_rule() {
        let r = [reading(2.5, 3.0, 0.01)];
        // window [0, 5] overlaps intervals 0..5 but not [5, 6)
        assert!(observation_for(&r, 4.0, 1.0, 5.0).is_some());
        assert!(observation_for(&r, 5.0, 1.0, 5.0).is_none());
        let r = [reading(2.5, 3.0, 1.0), reading(3.5, 4.0, 1.0 / 3.0)];
        let o = observation_for(&r, 2.0, 1.0, 5.0).unwrap();
        assert!((o.dd - 3.75).abs() < 1e-12);
        assert!((o.var - 0.5).abs() < 1e-12);
        assert!((o.dd_mean - 3.5).abs() < 1e-12);
    }

    #[test]
    fn heading_passes_through_in_all_modes() {
        let m: Vec<_> = (0..10).map(|i| est(3.0, 0.01 * i as f64, -1.0)).collect();
        let r: Vec<_> = (0..6).map(|i| reading(2.5 + i as f64, 3.2, 0.02)).collect();
        let off = fuse_stream(&m, 0.0, 1.0, &r, 5.0, FusionMode::Off).unwrap();
        for mode in [FusionMode::Equal, FusionMode::Ivw] {
            let f = fuse_stream(&m, 0.0, 1.0, &r, 5.0, mode).unwrap();
            for (a, b) in f.iter().zip(&off) {
                assert_eq!(a.dpsi.to_bits(), b.dpsi.to_bits());
            }
            assert!(f.iter().any(|d| d.source != FusionSource::ModelOnly));
        }
    }

    #[test]
    fn modes_parse() {
        assert_eq!("ivw".parse::<FusionMode>().unwrap(), FusionMode::Ivw);
        assert!("both".parse::<FusionMode>().is_err());
    }

    proptest! {
        #[test]
        fn fused_value_is_convex_and_symmetric(
            dm in 0.0f64..10.0, dp in 0.0f64..10.0,
            vm in 1e-3f64..10.0, vp in 1e-3f64..10.0,
        ) {
            let f = fuse_displacement(dm, vm, dp, vp).unwrap();
            prop_assert!(f >= dm.min(dp) - 1e-12 && f <= dm.max(dp) + 1e-12);
            let g = fuse_displacement(dp, vp, dm, vm).unwrap();
            prop_assert!((f - g).abs() < 1e-12);
        }

        #[test]
        fn smaller_pws_variance_pulls_toward_pws(
            dm in 0.0f64..10.0, dp in 0.0f64..10.0, vm in 1e-2f64..10.0, vp in 1e-2f64..10.0,
        ) {
            prop_assume!((dm - dp).abs() > 1e-6);
            let a = fuse_displacement(dm, vm, dp, vp).unwrap();
            let b = fuse_displacement(dm, vm, dp, vp * 0.5).unwrap();
            prop_assert!((b - dp).abs() < (a - dp).abs());
        }
    }
}
