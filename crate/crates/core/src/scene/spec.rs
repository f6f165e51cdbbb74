use serde::{Deserialize, Serialize};

use super::rir::RoomSpec;
use crate::error::{Error, Result};

pub const MIN_SEPARATION_DEG: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Degrees counter-clockwise from the array's forward axis.
    pub azimuth: f64,
    /// Meters from the array center.
    pub distance: f64,
    pub signal_id: String,
}

/// One acoustic scene: room, sources, levels and ambience factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room: RoomSpec,
    pub speakers: Vec<SourceSpec>,
    pub interferers: Vec<SourceSpec>,
    pub sir: f64,
    pub snr: f64,
    pub alpha: f64,
    pub seed: u64,
    pub duration: f64,
}

/// Smallest angle between two azimuths, in degrees.
pub fn azimuth_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

impl SceneSpec {
    pub fn sources(&self) -> impl Iterator<Item = &SourceSpec> {
        self.speakers.iter().chain(&self.interferers)
    }

    pub fn min_separation(&self) -> f64 {
        let az: Vec<f64> = self.sources().map(|s| s.azimuth).collect();
        let mut best = f64::INFINITY;
        for i in 0..az.len() {
            for j in i + 1..az.len() {
                best = best.min(azimuth_gap(az[i], az[j]));
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        if self.speakers.is_empty() {
            return Err(Error::invalid("scene needs at least one speaker"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.min_separation() < MIN_SEPARATION_DEG - 1e-9 {
            return Err(Error::invalid(format!(
                "sources only {:.1} degrees apart, minimum is {MIN_SEPARATION_DEG}",
                self.min_separation()
            )));
        }
        if !(self.duration > 0.0) {
            return Err(Error::invalid("duration must be positive"));
        }
        if self.sources().any(|s| !(s.distance > 0.0)) {
            return Err(Error::invalid("source distances must be positive"));
        }
        Ok(())
    }

    pub fn sample_count(&self, sample_rate: u32) -> usize {
        (self.duration * sample_rate as f64).round() as usize
    }
}
