use crate::error::{Error, Result};

/// One second-order section `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
/// First-order sections have `b2 = a2 = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Section {
    /// Transposed direct form II state for a constant input `x0` (unit DC gain).
    fn steady_state(&self, x0: f64) -> [f64; 2] {
        [(1.0 - self.b[0]) * x0, (self.b[2] - self.a[1]) * x0]
    }

    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [mut z1, mut z2] = self.steady_state(x0);
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let xi = *v;
            let y = b0 * xi + z1;
            z1 = b1 * xi - a1 * y + z2;
            z2 = b2 * xi - a2 * y;
            *v = y;
        }
    }
}

/// Digital Butterworth low-pass of the given order, designed with the
/// pre-warped bilinear transform and stored as cascaded sections.
pub fn butterworth_lowpass(order: usize, cutoff: f64, rate: f64) -> Result<Vec<Section>> {
    if order == 0 {
        return Err(Error::Config("filter order must be at least 1".into()));
    }
    if !(cutoff > 0.0) || !(rate > 0.0) || cutoff >= rate / 2.0 {
        return Err(Error::Config(format!(
            "cutoff {cutoff} Hz must lie in (0, Nyquist = {} Hz)",
            rate / 2.0
        )));
    }
    let k = (std::f64::consts::PI * cutoff / rate).tan();
    let k2 = k * k;
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for i in 0..order / 2 {
        let angle = (2 * i + 1) as f64 * std::f64::consts::PI / (2 * order) as f64;
        let inv_q = 2.0 * angle.sin();
        let norm = 1.0 / (1.0 + inv_q * k + k2);
        let b0 = k2 * norm;
        sections.push(Section {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k2 - 1.0) * norm, (1.0 - inv_q * k + k2) * norm],
        });
    }
    if order % 2 == 1 {
        let b0 = k / (1.0 + k);
        sections.push(Section {
            b: [b0, b0, 0.0],
            a: [(k - 1.0) / (k + 1.0), 0.0],
        });
    }
    Ok(sections)
}

/// Magnitude response of the cascade at `freq` Hz.
pub fn magnitude_response(sections: &[Section], freq: f64, rate: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * freq / rate;
    let (c1, s1) = (w.cos(), -w.sin());
    let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
    sections
        .iter()
        .map(|s| {
            let nr = s.b[0] + s.b[1] * c1 + s.b[2] * c2;
            let ni = s.b[1] * s1 + s.b[2] * s2;
            let dr = 1.0 + s.a[0] * c1 + s.a[1] * c2;
            let di = s.a[0] * s1 + s.a[1] * s2;
            (nr.hypot(ni)) / (dr.hypot(di))
        })
        .product()
}

/// Zero-phase forward-backward filtering with odd-extension padding and
/// steady-state initial conditions.
pub fn filtfilt(sections: &[Section], signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n < 2 {
        return signal.to_vec();
    }
    let pad = (3 * (2 * sections.len() + 1)).min(n - 1);
    let (first, last) = (signal[0], signal[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Moving-window integration: `out[j] = mean(signal[j .. j + 2k])`, i.e. the
/// window `i-k ..= i+k-1` around `i = j + k`. Only the valid region is
/// returned, so the output has `len - 2k + 1` samples.
pub fn mwi(signal: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Config("mwi half-length must be positive".into()));
    }
    let n = 2 * k;
    if signal.len() < n {
        return Err(Error::Data(format!(
            "mwi needs at least {n} samples, got {}",
            signal.len()
        )));
    }
    Ok(signal
        .windows(n)
        .map(|w| w.iter().sum::<f64>() / n as f64)
        .collect())
}
