use super::PwsConfig;

/// Autocorrelation of the mean-removed signal for lags `0..=max_lag`, each
/// lag normalised by the energies of the two overlapping segments so that
/// `r[0] = 1` and `|r| ≤ 1`. A constant signal yields `None`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let total: f64 = c.iter().map(|v| v * v).sum();
    if !(total > 1e-24 * n as f64 * (1.0 + mean * mean)) {
        return None;
    }
    // prefix sums of squares for the segment energies
    let mut sq = Vec::with_capacity(n + 1);
    sq.push(0.0);
    for v in &c {
        sq.push(sq.last().unwrap() + v * v);
    }
    let max_lag = max_lag.min(n - 1);
    Some(
        (0..=max_lag)
            .map(|l| {
                let s: f64 = c[..n - l].iter().zip(&c[l..]).map(|(a, b)| a * b).sum();
                let e = ((sq[n - l] - sq[0]) * (sq[n] - sq[l])).sqrt();
                if e > 0.0 {
                    s / e
                } else {
                    0.0
                }
            })
            .collect(),
    )
}

/// Positive local maxima at lags ≥ 1, at least `min_sep` lags apart. Higher
/// peaks win conflicts. Returned in increasing lag order.
pub fn find_peaks(r: &[f64], min_sep: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (1..r.len().saturating_sub(1))
        .filter(|&i| r[i] > 0.0 && r[i] > r[i - 1] && r[i] >= r[i + 1])
        .collect();
    cand.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in cand {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_sep) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

/// Peak lag refined by a parabola through the neighbouring samples.
fn refine(r: &[f64], i: usize) -> f64 {
    let (a, b, c) = (r[i - 1], r[i], r[i + 1]);
    let d = a - 2.0 * b + c;
    if d < 0.0 {
        i as f64 + 0.5 * (a - c) / d
    } else {
        i as f64
    }
}

/// Largest autocorrelation lag examined for a signal of `n` samples: every
/// lag keeps at least `tail_s` seconds of overlapping data.
pub fn max_lag(n: usize, rate: f64, cfg: &PwsConfig) -> usize {
    let tail = (cfg.lag_tail_s * rate).round() as usize;
    n.saturating_sub(tail.max(1))
}

/// Accepts or rejects a list of peak intervals (seconds). On acceptance the
/// pedalling period is twice their mean.
pub fn period_from_intervals(t_diff: &[f64], cfg: &PwsConfig) -> Option<f64> {
    if t_diff.len() + 1 < cfg.min_peaks || t_diff.is_empty() {
        return None;
    }
    let max = t_diff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = t_diff.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || max / min >= cfg.ratio_max {
        return None;
    }
    Some(2.0 * t_diff.iter().sum::<f64>() / t_diff.len() as f64)
}

/// Pedalling period `T̄` of an MWI signal, or `None` when no stable
/// periodicity is found.
pub fn detect_period(mwi_sig: &[f64], rate: f64, cfg: &PwsConfig) -> Option<f64> {
    let r = autocorrelation(mwi_sig, max_lag(mwi_sig.len(), rate, cfg))?;
    let sep = (cfg.peak_min_sep_s * rate).round().max(1.0) as usize;
    let peaks = find_peaks(&r, sep);
    if peaks.len() < cfg.min_peaks {
        return None;
    }
    let lags: Vec<f64> = peaks.iter().map(|&i| refine(&r, i) / rate).collect();
    let t_diff: Vec<f64> = lags.windows(2).map(|w| w[1] - w[0]).collect();
    period_from_intervals(&t_diff, cfg)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Diagnostics of the anomaly gates for one window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnomalyStats {
    /// Pearson correlation of the two autocorrelations (PCC).
    pub rho: f64,
    pub peaks_signal: usize,
    pub peaks_derivative: usize,
}

impl AnomalyStats {
    /// Peak-count ratio of derivative to signal autocorrelation (CPC).
    pub fn peak_ratio(&self) -> f64 {
        if self.peaks_signal == 0 {
            f64::INFINITY
        } else {
            self.peaks_derivative as f64 / self.peaks_signal as f64
        }
    }
}

/// Compares the autocorrelation of the MWI signal with that of its first
/// difference. `None` for degenerate (constant) input.
pub fn anomaly_stats(mwi_sig: &[f64], rate: f64, cfg: &PwsConfig) -> Option<AnomalyStats> {
    let deriv: Vec<f64> = mwi_sig.windows(2).map(|w| (w[1] - w[0]) * rate).collect();
    let lag = max_lag(deriv.len(), rate, cfg);
    let ra = autocorrelation(mwi_sig, lag)?;
    let rd = autocorrelation(&deriv, lag)?;
    let pcc_lags = ((cfg.window_s / 2.0 * rate).round() as usize + 1)
        .min(ra.len())
        .min(rd.len());
    let rho = pearson(&ra[..pcc_lags], &rd[..pcc_lags])?;
    let sep = (cfg.peak_min_sep_s * rate).round().max(1.0) as usize;
    Some(AnomalyStats {
        rho,
        peaks_signal: find_peaks(&ra, sep).len(),
        peaks_derivative: find_peaks(&rd, sep).len(),
    })
}

/// True when the window passes the enabled gates: `rho ≥ pcc_min` and peak
/// ratio `≤ cpc_max`. Degenerate input fails.
pub fn anomaly_check(mwi_sig: &[f64], rate: f64, cfg: &PwsConfig) -> bool {
    let Some(s) = anomaly_stats(mwi_sig, rate, cfg) else {
        return false;
    };
    let pcc_ok = !cfg.use_pcc || s.rho >= cfg.pcc_min;
    let cpc_ok = !cfg.use_cpc || s.peak_ratio() <= cfg.cpc_max;
    pcc_ok && cpc_ok
}
