//! Pseudo wheel speed from pedalling periodicity.
//!
//! Pipeline per window: forward acceleration → zero-phase low-pass → moving
//! window integration → anomaly gates → autocorrelation period detection →
//! `v = 2πrK / T̄`.

mod filter;
mod period;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_stream, ImuSample};

pub use filter::{butterworth_lowpass, filtfilt, magnitude_response, mwi, Section};
pub use period::{
    anomaly_check, anomaly_stats, autocorrelation, detect_period, find_peaks, max_lag, pearson,
    period_from_intervals, AnomalyStats,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BikeGeometry {
    /// Rear wheel radius, m.
    pub r: f64,
    /// Wheel revolutions per pedal revolution.
    #[serde(alias = "K")]
    pub k: f64,
    /// IMU mounting (pitch) angle, rad.
    pub theta: f64,
}

impl Default for BikeGeometry {
    fn default() -> Self {
        Self {
            r: 0.33,
            k: 2.0,
            theta: 0.0,
        }
    }
}

impl BikeGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !(self.k > 0.0) || !self.theta.is_finite() {
            return Err(Error::Config(format!(
                "geometry needs r > 0, K > 0 and finite theta, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Distance travelled per pedal revolution, `2πrK`.
    pub fn metres_per_rev(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.r * self.k
    }

    /// `v = 2πrK / T`.
    pub fn speed_from_period(&self, period: f64) -> f64 {
        self.metres_per_rev() / period
    }
}

/// Speed cut points separating slow, moderate and fast riding, m/s.
pub const SPEED_LEVEL_CUTS: [f64; 2] = [2.7, 3.6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PwsConfig {
    /// Detection window, s.
    pub window_s: f64,
    /// Sliding step, s.
    pub step_s: f64,
    /// MWI half-length, samples.
    pub mwi_k: usize,
    pub lp_order: usize,
    /// Low-pass cutoff, Hz.
    pub lp_cutoff: f64,
    /// Upper bound on `max(t_diff) / min(t_diff)`.
    pub ratio_max: f64,
    pub pcc_min: f64,
    pub cpc_max: f64,
    pub min_peaks: usize,
    /// Minimum lag separation of autocorrelation peaks, s.
    pub peak_min_sep_s: f64,
    /// Autocorrelation lags stop this long before the end of the signal, s.
    pub lag_tail_s: f64,
    pub use_pcc: bool,
    pub use_cpc: bool,
    /// Speed-error variance, (m/s)², for slow / moderate / fast readings.
    pub sigma2: [f64; 3],
}

impl Default for PwsConfig {
    fn default() -> Self {
        Self {
            window_s: 5.0,
            step_s: 1.0,
            mwi_k: 15,
            lp_order: 2,
            lp_cutoff: 3.0,
            ratio_max: 1.4,
            pcc_min: 0.6,
            cpc_max: 1.2,
            min_peaks: 3,
            peak_min_sep_s: 0.2,
            lag_tail_s: 0.5,
            use_pcc: true,
            use_cpc: true,
            sigma2: DEFAULT_SIGMA2,
        }
    }
}

/// Speed-error variances (slow, moderate, fast), (m/s)², from
/// `pedaltrack corpus --preset pace --minutes 30 --seed 100` followed by
/// `pedaltrack calibrate` on that corpus.
pub const DEFAULT_SIGMA2: [f64; 3] = [7.2e-5, 7.8e-5, 8.6e-5];

impl PwsConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window_s", self.window_s),
            ("step_s", self.step_s),
            ("lp_cutoff", self.lp_cutoff),
            ("ratio_max", self.ratio_max),
            ("pcc_min", self.pcc_min),
            ("cpc_max", self.cpc_max),
            ("peak_min_sep_s", self.peak_min_sep_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lag_tail_s >= 0.0) {
            return Err(Error::Config("lag_tail_s must be non-negative".into()));
        }
        if self.mwi_k == 0 || self.lp_order == 0 || self.min_peaks < 2 {
            return Err(Error::Config(
                "mwi_k and lp_order must be positive and min_peaks at least 2".into(),
            ));
        }
        if self.sigma2.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("sigma2 entries must be positive".into()));
        }
        Ok(())
    }

    /// Variance assigned to a reading of speed `v`.
    pub fn variance_for(&self, v: f64) -> f64 {
        self.sigma2[speed_level(v)]
    }
}

/// 0 slow, 1 moderate, 2 fast.
pub fn speed_level(v: f64) -> usize {
    if v < SPEED_LEVEL_CUTS[0] {
        0
    } else if v <= SPEED_LEVEL_CUTS[1] {
        1
    } else {
        2
    }
}

/// Variance of the speed error per level from `(estimate, truth)` pairs,
/// grouped by the estimate. Levels with fewer than two pairs keep `fallback`.
pub fn calibrate_variance(pairs: &[(f64, f64)], fallback: [f64; 3]) -> [f64; 3] {
    let mut groups: [Vec<f64>; 3] = Default::default();
    for &(est, truth) in pairs {
        groups[speed_level(est)].push(est - truth);
    }
    let mut out = fallback;
    for (o, g) in out.iter_mut().zip(&groups) {
        if g.len() >= 2 {
            let m = g.iter().sum::<f64>() / g.len() as f64;
            let var = g.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (g.len() - 1) as f64;
            *o = var.max(1e-6);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PwsReading {
    /// Window centre, s.
    pub t_mid: f64,
    /// Speed, m/s.
    pub v: f64,
    /// Speed variance, (m/s)².
    pub sigma2: f64,
    /// Pedalling period `T̄`, s.
    pub period: f64,
}

/// `acc_z cos θ - acc_x sin θ` per sample.
pub fn forward_accel(samples: &[ImuSample], theta: f64) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    samples
        .iter()
        .map(|x| x.acc[2] * c - x.acc[0] * s)
        .collect()
}

pub fn lowpass(signal: &[f64], rate: f64, cfg: &PwsConfig) -> Result<Vec<f64>> {
    let sections = butterworth_lowpass(cfg.lp_order, cfg.lp_cutoff, rate)?;
    Ok(filtfilt(&sections, signal))
}

/// Why a window did or did not produce a reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WindowOutcome {
    Valid(PwsReading),
    /// Rejected by the PCC or CPC gate.
    Anomalous,
    /// No stable periodicity.
    Aperiodic,
}

/// Runs the full chain on one window.
pub fn analyze_window(
    window: &[ImuSample],
    geom: &BikeGeometry,
    cfg: &PwsConfig,
    rate: f64,
) -> Result<WindowOutcome> {
    geom.validate()?;
    let fwd = forward_accel(window, geom.theta);
    let lp = lowpass(&fwd, rate, cfg)?;
    let sig = mwi(&lp, cfg.mwi_k)?;
    if !anomaly_check(&sig, rate, cfg) {
        return Ok(WindowOutcome::Anomalous);
    }
    let Some(period) = detect_period(&sig, rate, cfg) else {
        return Ok(WindowOutcome::Aperiodic);
    };
    let v = geom.speed_from_period(period);
    let t_mid = match (window.first(), window.last()) {
        (Some(a), Some(b)) => 0.5 * (a.t + b.t + 1.0 / rate),
        _ => 0.0,
    };
    Ok(WindowOutcome::Valid(PwsReading {
        t_mid,
        v,
        sigma2: cfg.variance_for(v),
        period,
    }))
}

/// Speed reading for one window, if it is periodic and anomaly-free.
pub fn estimate_speed(
    window: &[ImuSample],
    geom: &BikeGeometry,
    cfg: &PwsConfig,
    rate: f64,
) -> Result<Option<PwsReading>> {
    Ok(match analyze_window(window, geom, cfg, rate)? {
        WindowOutcome::Valid(r) => Some(r),
        _ => None,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanResult {
    pub readings: Vec<PwsReading>,
    pub candidates: usize,
    pub anomalous: usize,
    /// Time coverage ratio.
    pub tcr: f64,
}

/// Slides the detection window over a stream by `step_s`.
pub fn scan_stream(
    stream: &[ImuSample],
    geom: &BikeGeometry,
    cfg: &PwsConfig,
    rate: f64,
) -> Result<ScanResult> {
    cfg.validate()?;
    geom.validate()?;
    validate_stream(stream)?;
    if !(rate > 0.0) {
        return Err(Error::Config(format!("rate must be positive, got {rate}")));
    }
    let win = (cfg.window_s * rate).round() as usize;
    let step = ((cfg.step_s * rate).round() as usize).max(1);
    if stream.len() < win {
        return Err(Error::Data(format!(
            "stream of {} samples is shorter than the {win}-sample window",
            stream.len()
        )));
    }
    let mut readings = Vec::new();
    let mut candidates = 0;
    let mut anomalous = 0;
    let mut start = 0;
    while start + win <= stream.len() {
        candidates += 1;
        match analyze_window(&stream[start..start + win], geom, cfg, rate)? {
            WindowOutcome::Valid(r) => readings.push(r),
            WindowOutcome::Anomalous => anomalous += 1,
            WindowOutcome::Aperiodic => {}
        }
        start += step;
    }
    let duration = stream.len() as f64 / rate;
    let tcr = (readings.len() as f64 * cfg.step_s / duration).min(1.0);
    Ok(ScanResult {
        readings,
        candidates,
        anomalous,
        tcr,
    })
}
