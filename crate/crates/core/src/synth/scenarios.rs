//! Preset ride scripts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RideScript;
use crate::seed::sub_seed;

/// Speed bands of the slow, moderate and fast presets, m/s.
pub const SPEED_BANDS: [(f64, f64); 3] = [(1.8, 2.6), (2.8, 3.4), (3.8, 4.4)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pace {
    Slow,
    Moderate,
    Fast,
}

impl Pace {
    pub const ALL: [Pace; 3] = [Pace::Slow, Pace::Moderate, Pace::Fast];

    pub fn band(self) -> (f64, f64) {
        SPEED_BANDS[self as usize]
    }
}

/// Straight ride at constant speed.
pub fn constant(speed: f64, duration: f64) -> RideScript {
    RideScript {
        duration,
        speed_profile: vec![[0.0, speed]],
        ..Default::default()
    }
}

/// Closed circle of the given radius ridden once in `duration`.
pub fn circle(radius: f64, duration: f64) -> RideScript {
    let v = std::f64::consts::TAU * radius / duration;
    RideScript {
        duration,
        speed_profile: vec![[0.0, v]],
        turn_profile: vec![[0.0, v / radius]],
        ..Default::default()
    }
}

/// Gentle speed changes within a pace band and occasional bends.
pub fn paced(pace: Pace, duration: f64, seed: u64) -> RideScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = pace.band();
    RideScript {
        duration,
        speed_profile: knots(&mut rng, duration, 15.0, lo, hi),
        turn_profile: bends(&mut rng, duration, 0.15),
        initial_heading: rng.random_range(-3.0..3.0),
        ..Default::default()
    }
}

/// Constant speed with the pedals still throughout.
pub fn coasting(speed: f64, duration: f64) -> RideScript {
    RideScript {
        coast_intervals: vec![[0.0, duration]],
        ..constant(speed, duration)
    }
}

/// Fast ride in the freewheel regime.
pub fn fast_anomaly(duration: f64, seed: u64) -> RideScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RideScript {
        duration,
        speed_profile: knots(&mut rng, duration, 15.0, 4.0, 5.5),
        turn_profile: bends(&mut rng, duration, 0.1),
        freewheel: true,
        ..Default::default()
    }
}

/// Mixed urban ride: varying speed, turns, short coasts.
pub fn free_ride(duration: f64, seed: u64) -> RideScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speed_profile = knots(&mut rng, duration, 12.0, 1.6, 4.4);
    let turn_profile = bends(&mut rng, duration, 0.3);
    let mut coast_intervals = Vec::new();
    let mut t = rng.random_range(20.0..60.0);
    while t + 8.0 < duration {
        let len = rng.random_range(3.0..8.0);
        coast_intervals.push([t, t + len]);
        t += len + rng.random_range(30.0..90.0);
    }
    RideScript {
        duration,
        speed_profile,
        turn_profile,
        coast_intervals,
        initial_heading: rng.random_range(-3.0..3.0),
        pedal_amp: rng.random_range(0.3..0.5),
        ..Default::default()
    }
}

/// Rides of `ride_s` seconds cycling through the three paces until
/// `total_s` is covered.
pub fn pace_corpus(total_s: f64, ride_s: f64, seed: u64) -> Vec<RideScript> {
    let n = (total_s / ride_s).ceil() as usize;
    (0..n)
        .map(|i| {
            let pace = Pace::ALL[i % 3];
            paced(pace, ride_s, sub_seed(seed, &format!("pace{i}")))
        })
        .collect()
}

/// Free rides of `ride_s` seconds covering `total_s`.
pub fn free_corpus(total_s: f64, ride_s: f64, seed: u64) -> Vec<RideScript> {
    let n = (total_s / ride_s).ceil() as usize;
    (0..n)
        .map(|i| free_ride(ride_s, sub_seed(seed, &format!("free{i}"))))
        .collect()
}

fn knots(rng: &mut ChaCha8Rng, duration: f64, spacing: f64, lo: f64, hi: f64) -> Vec<[f64; 2]> {
    let mut out = vec![[0.0, rng.random_range(lo..hi)]];
    let mut t = 0.0;
    while t < duration {
        t += spacing * rng.random_range(0.6..1.4);
        out.push([t, rng.random_range(lo..hi)]);
    }
    out
}

/// Straight stretches broken by constant-rate bends.
fn bends(rng: &mut ChaCha8Rng, duration: f64, max_rate: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    let mut t = rng.random_range(5.0..20.0);
    while t < duration {
        let len = rng.random_range(3.0..10.0);
        let rate = rng.random_range(0.3 * max_rate..max_rate)
            * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        out.push([t, rate]);
        out.push([t + len, 0.0]);
        t += len + rng.random_range(5.0..25.0);
    }
    out
}
