//! Head-related impulse responses: a spherical-head model and a file-backed set.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::rir::{add_fractional_impulse, SOUND_SPEED};
use crate::dsp::wav;
use crate::error::{Error, Result};

pub const HRIR_LEN: usize = 128;
/// Common onset so the sinc kernel of the ipsilateral ear is not clipped.
const BASE_DELAY: f64 = 8.0;
/// Pole of the contralateral head-shadow filter at full lateral incidence.
const SHADOW_POLE: f64 = 0.75;
const MIN_AZIMUTHS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalHead {
    pub radius: f64,
    pub sample_rate: u32,
}

impl Default for SphericalHead {
    fn default() -> Self {
        Self {
            radius: 0.0875,
            sample_rate: 16_000,
        }
    }
}

impl SphericalHead {
    /// Woodworth interaural time difference in seconds for an azimuth
    /// (degrees counter-clockwise from the front, 90 = left).
    pub fn itd(&self, azimuth_deg: f64) -> f64 {
        let lateral = azimuth_deg.to_radians().sin().abs().asin();
        self.radius / SOUND_SPEED * (lateral + lateral.sin())
    }
}

fn normalize_azimuth(az: f64) -> f64 {
    let a = az.rem_euclid(360.0);
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Left/right impulse responses for one azimuth. The far ear gets the
/// Woodworth delay and a one-pole low-pass standing in for head shadow.
pub fn synth_hrir(azimuth_deg: f64, head: &SphericalHead) -> (Vec<f64>, Vec<f64>) {
    let az = normalize_azimuth(azimuth_deg);
    // right hemisphere is the mirror image of the left one
    let (lateral_az, mirrored) = if az > 180.0 { (360.0 - az, true) } else { (az, false) };
    let fs = head.sample_rate as f64;
    let shadow = lateral_az.to_radians().sin().abs();

    let mut near = vec![0.0; HRIR_LEN];
    add_fractional_impulse(&mut near, BASE_DELAY, 1.0);
    near.truncate(HRIR_LEN);

    let mut far = vec![0.0; HRIR_LEN];
    add_fractional_impulse(&mut far, BASE_DELAY + head.itd(lateral_az) * fs, 1.0);
    far.truncate(HRIR_LEN);
    let a = SHADOW_POLE * shadow;
    let mut y = 0.0;
    for v in far.iter_mut() {
        y = (1.0 - a) * *v + a * y;
        *v = y;
    }
    // the low-pass is an identity at a = 0; keep the front bit-exact
    if a == 0.0 {
        far.clone_from(&near);
    }

    if mirrored {
        (far, near)
    } else {
        (near, far)
    }
}

/// HRIR pairs indexed by azimuth, looked up by nearest angle.
#[derive(Debug, Clone, PartialEq)]
pub struct HrirSet {
    entries: Vec<(f64, Vec<f64>, Vec<f64>)>,
    sample_rate: u32,
}

#[derive(Deserialize)]
struct IndexEntry {
    left: String,
    right: String,
}

impl HrirSet {
    pub fn new(mut entries: Vec<(f64, Vec<f64>, Vec<f64>)>, sample_rate: u32) -> Result<Self> {
        if entries.len() < MIN_AZIMUTHS {
            return Err(Error::format(format!(
                "HRIR set has {} azimuths, at least {MIN_AZIMUTHS} required",
                entries.len()
            )));
        }
        for e in entries.iter_mut() {
            e.0 = normalize_azimuth(e.0);
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        let len = entries[0].1.len();
        if let Some(bad) = entries
            .iter()
            .find(|e| e.1.len() != len || e.2.len() != len)
        {
            return Err(Error::format(format!(
                "HRIR length mismatch at azimuth {}",
                bad.0
            )));
        }
        Ok(Self {
            entries,
            sample_rate,
        })
    }

    /// Spherical-head set on a uniform azimuth grid.
    pub fn synthetic(step_deg: f64, head: &SphericalHead) -> Result<Self> {
        let count = (360.0 / step_deg).round() as usize;
        let entries = (0..count)
            .map(|i| {
                let az = i as f64 * step_deg;
                let (l, r) = synth_hrir(az, head);
                (az, l, r)
            })
            .collect();
        Self::new(entries, head.sample_rate)
    }

    /// Loads `{"<azimuth>": {"left": path, "right": path}, ...}` with paths
    /// relative to the index file.
    pub fn load(path: impl AsRef<Path>, sample_rate: u32) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::NotFound(path.display().to_string())
            } else {
                Error::io(path, e)
            }
        })?;
        let index: BTreeMap<String, IndexEntry> = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let load_one = |rel: &str| -> Result<Vec<f64>> {
            let p = base.join(rel);
            if !p.exists() {
                return Err(Error::format(format!("missing HRIR file {}", p.display())));
            }
            let audio = wav::read(&p)?;
            if audio.sample_rate != sample_rate {
                return Err(Error::format(format!(
                    "sample-rate mismatch: {} is {} Hz, expected {sample_rate} Hz",
                    p.display(),
                    audio.sample_rate
                )));
            }
            Ok(audio.channels.into_iter().next().unwrap_or_default())
        };
        let mut entries = Vec::with_capacity(index.len());
        for (key, e) in &index {
            let az: f64 = key
                .trim()
                .parse()
                .map_err(|_| Error::format(format!("bad azimuth key {key:?} in {}", path.display())))?;
            entries.push((az, load_one(&e.left)?, load_one(&e.right)?));
        }
        Self::new(entries, sample_rate)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn azimuths(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    /// Pair for the azimuth closest to `azimuth_deg` on the circle.
    pub fn nearest(&self, azimuth_deg: f64) -> (&[f64], &[f64]) {
        let az = normalize_azimuth(azimuth_deg);
        let gap = |a: f64| {
            let d = (a - az).abs();
            d.min(360.0 - d)
        };
        let e = self
            .entries
            .iter()
            .min_by(|a, b| gap(a.0).total_cmp(&gap(b.0)))
            .expect("set is nonempty");
        (&e.1, &e.2)
    }
}
