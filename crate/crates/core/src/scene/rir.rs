//! Shoebox room impulse responses by the image-source method.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::geometry::{distance, rotate_z, Vec3};
use crate::error::{Error, Result};

pub const SOUND_SPEED: f64 = 343.0;
/// Images quieter than this fraction of the direct path are dropped (-60 dB).
const TRUNCATION: f64 = 1e-3;
const SINC_TAPS: i64 = 16;
/// Image sources are kept up to this long after the direct path; a seeded
/// exponentially decaying noise tail carries the response from there on.
pub const TRANSITION_MS: f64 = 50.0;
const CROSSFADE_MS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dimensions: Vec3,
    pub t60: f64,
    pub array_center: Vec3,
    pub array_yaw: f64,
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::invalid("room dimensions must be positive"));
        }
        if !(0.0..=1.5).contains(&self.t60) {
            return Err(Error::invalid(format!("t60 {} outside [0, 1.5] s", self.t60)));
        }
        if !self.contains(self.array_center) {
            return Err(Error::invalid("array center is outside the room"));
        }
        Ok(())
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.iter().zip(&self.dimensions).all(|(x, d)| *x > 0.0 && x < d)
    }

    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        2.0 * (x * y + x * z + y * z)
    }

    /// Uniform wall absorption from Sabine's formula, clamped to (0, 1].
    pub fn absorption(&self) -> f64 {
        if self.t60 <= 0.0 {
            1.0
        } else {
            (0.161 * self.volume() / (self.surface() * self.t60)).min(1.0)
        }
    }

    /// Pressure reflection coefficient of every wall.
    pub fn reflection(&self) -> f64 {
        (1.0 - self.absorption()).max(0.0).sqrt()
    }

    /// World position of a point given in the array's local frame.
    pub fn to_world(&self, local: Vec3) -> Vec3 {
        let r = rotate_z(local, self.array_yaw);
        [
            self.array_center[0] + r[0],
            self.array_center[1] + r[1],
            self.array_center[2] + r[2],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    /// Direct-path delay rounded to the nearest sample.
    pub direct_delay: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RirSplit {
    pub clean: Rir,
    pub late: Rir,
}

/// Adds a Hann-windowed sinc impulse of `amp` at fractional position `t`.
pub(crate) fn add_fractional_impulse(taps: &mut Vec<f64>, t: f64, amp: f64) {
    // nearest sample as the base keeps `frac` small, so the sinc stays
    // accurate when `t` sits just below an integer
    let t0 = t.round();
    let frac = t - t0;
    let base = t0 as i64;
    let s = (PI * frac).sin();
    let half = SINC_TAPS / 2;
    for j in -half..=half {
        let n = base + j;
        let x = j as f64 - frac;
        if n < 0 || x.abs() >= half as f64 {
            continue;
        }
        let sinc = if frac == 0.0 {
            if j == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            // sin(pi (j - frac)) = -(-1)^j sin(pi frac)
            let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
            sign * s / (PI * x)
        };
        let w = 0.5 * (1.0 + (2.0 * PI * x / SINC_TAPS as f64).cos());
        let n = n as usize;
        if n >= taps.len() {
            taps.resize(n + 1, 0.0);
        }
        taps[n] += amp * sinc * w;
    }
}

/// Response from `source` to `mic` (world coordinates): image sources for
/// the direct path and early reflections, then a diffuse tail decaying at
/// exactly `room.t60`, level-matched to the image-source energy just before
/// the transition.
pub fn simulate_rir(
    room: &RoomSpec,
    source: Vec3,
    mic: Vec3,
    sample_rate: u32,
    seed: u64,
) -> Result<Rir> {
    if room.dimensions.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::invalid("room dimensions must be positive"));
    }
    if !(room.t60 >= 0.0) {
        return Err(Error::invalid("t60 must be nonnegative"));
    }
    if !room.contains(source) {
        return Err(Error::invalid(format!("source {source:?} is outside the room")));
    }
    if !room.contains(mic) {
        return Err(Error::invalid(format!("mic {mic:?} is outside the room")));
    }
    let fs = sample_rate as f64;
    let d0 = distance(source, mic);
    let direct_amp = 1.0 / (4.0 * PI * d0);
    let beta = room.reflection();
    let threshold = TRUNCATION * direct_amp;
    // every image is at least as far as the direct path, so beta^k >= 1e-3 bounds k
    let k_max: i64 = if beta <= 0.0 {
        0
    } else {
        (TRUNCATION.ln() / beta.ln()).floor() as i64
    };
    let n_max = (k_max + 1) / 2 + 1;
    let [lx, ly, lz] = room.dimensions;

    let mut taps = Vec::new();
    for nx in -n_max..=n_max {
        for qx in 0..2i64 {
            let kx = (nx - qx).abs() + nx.abs();
            if kx > k_max {
                continue;
            }
            let dx = (1 - 2 * qx) as f64 * source[0] + 2.0 * nx as f64 * lx - mic[0];
            for ny in -n_max..=n_max {
                for qy in 0..2i64 {
                    let ky = (ny - qy).abs() + ny.abs();
                    if kx + ky > k_max {
                        continue;
                    }
                    let dy = (1 - 2 * qy) as f64 * source[1] + 2.0 * ny as f64 * ly - mic[1];
                    for nz in -n_max..=n_max {
                        for qz in 0..2i64 {
                            let kz = (nz - qz).abs() + nz.abs();
                            let k = kx + ky + kz;
                            if k > k_max {
                                continue;
                            }
                            let dz =
                                (1 - 2 * qz) as f64 * source[2] + 2.0 * nz as f64 * lz - mic[2];
                            let r = (dx * dx + dy * dy + dz * dz).sqrt();
                            let amp = beta.powi(k as i32) / (4.0 * PI * r);
                            if amp < threshold {
                                continue;
                            }
                            add_fractional_impulse(&mut taps, r / SOUND_SPEED * fs, amp);
                        }
                    }
                }
            }
        }
    }
    let direct_delay = (d0 / SOUND_SPEED * fs).round() as usize;
    if room.t60 > 0.0 {
        add_diffuse_tail(&mut taps, direct_delay, room.t60, fs, seed);
    }
    Ok(Rir {
        taps,
        sample_rate,
        direct_delay,
    })
}

fn add_diffuse_tail(taps: &mut Vec<f64>, direct_delay: usize, t60: f64, fs: f64, seed: u64) {
    let t_x = direct_delay + (TRANSITION_MS * 1e-3 * fs) as usize;
    let fade = (CROSSFADE_MS * 1e-3 * fs) as usize;
    let window = (20e-3 * fs) as usize;
    let lo = t_x.saturating_sub(window);
    if taps.len() < t_x {
        taps.resize(t_x, 0.0);
    }
    let level = (taps[lo..t_x].iter().map(|v| v * v).sum::<f64>() / (t_x - lo) as f64).sqrt();
    let end = t_x + (t60 * fs).ceil() as usize;
    taps.resize(end.max(taps.len()), 0.0);
    taps.truncate(end);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // the window estimate sits ~10 ms before t_x
    let start_gain = level * 10f64.powf(-3.0 * (window as f64 / 2.0) / (t60 * fs));
    for (n, tap) in taps.iter_mut().enumerate().skip(t_x.saturating_sub(fade)) {
        let noise: f64 = StandardNormal.sample(&mut rng);
        let t = n as f64 - t_x as f64;
        let env = start_gain * 10f64.powf(-3.0 * t / (t60 * fs));
        // raised-cosine crossfade from image sources to the diffuse tail
        let w = if n >= t_x {
            1.0
        } else {
            let x = (n + fade - t_x) as f64 / fade as f64;
            0.5 - 0.5 * (PI * x).cos()
        };
        *tap = (1.0 - w) * *tap + w * env * noise;
    }
}

/// Decay time from Schroeder backward integration, fitted over the
/// -5..-35 dB range of the energy decay curve (T30 extrapolated to 60 dB).
/// Falls back to -5..-25 dB when the curve does not reach -35 dB.
pub fn decay_time(taps: &[f64], sample_rate: u32) -> Option<f64> {
    let total: f64 = taps.iter().map(|v| v * v).sum();
    if total <= 0.0 {
        return None;
    }
    let mut edc = vec![0.0; taps.len()];
    let mut acc = 0.0;
    for i in (0..taps.len()).rev() {
        acc += taps[i] * taps[i];
        edc[i] = 10.0 * (acc / total).log10();
    }
    let floor = edc.iter().cloned().fold(0.0, f64::min);
    let lower = if floor <= -35.0 {
        -35.0
    } else if floor <= -25.0 {
        -25.0
    } else {
        return None;
    };
    let pts: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .filter(|(_, &db)| db <= -5.0 && db >= lower)
        .map(|(i, &db)| (i as f64 / sample_rate as f64, db))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    if slope >= 0.0 {
        return None;
    }
    Some(-60.0 / slope)
}

/// Splits a response into a direct-plus-early part whose tail is forced to
/// decay at least as fast as `target_t60`, and the late residual.
pub fn split_clean_late(rir: &Rir, early_ms: f64, target_t60: f64) -> Result<RirSplit> {
    if rir.taps.is_empty() {
        return Err(Error::invalid("empty impulse response"));
    }
    if !(early_ms >= 0.0) || !(target_t60 > 0.0) {
        return Err(Error::invalid(
            "early window must be nonnegative and target t60 positive",
        ));
    }
    let fs = rir.sample_rate as f64;
    let t_e = rir.direct_delay as f64 + early_ms * 1e-3 * fs;
    let clean: Vec<f64> = rir
        .taps
        .iter()
        .enumerate()
        .map(|(n, &h)| {
            let t = n as f64;
            if t <= t_e {
                h
            } else {
                h * 10f64.powf(-3.0 * (t - t_e) / (target_t60 * fs)).min(1.0)
            }
        })
        .collect();
    let late: Vec<f64> = rir.taps.iter().zip(&clean).map(|(h, c)| h - c).collect();
    Ok(RirSplit {
        clean: Rir {
            taps: clean,
            ..rir.clone()
        },
        late: Rir {
            taps: late,
            ..rir.clone()
        },
    })
}
