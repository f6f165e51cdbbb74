use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Rotates `p` about the vertical axis by `yaw` radians.
pub fn rotate_z(p: Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

/// Microphone positions in the array's local frame (x forward, y left, z up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    #[serde(rename = "mics")]
    pub mic_positions: Vec<Vec3>,
    #[serde(default)]
    pub reference_index: usize,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<Vec3>, reference_index: usize) -> Result<Self> {
        let g = Self {
            mic_positions,
            reference_index,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.mic_positions.len();
        if m < 2 {
            return Err(Error::invalid(format!("array needs at least 2 mics, got {m}")));
        }
        if self.reference_index >= m {
            return Err(Error::invalid(format!(
                "reference index {} out of range for {m} mics",
                self.reference_index
            )));
        }
        if self.mic_positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mic positions must be finite"));
        }
        for i in 0..m {
            for j in i + 1..m {
                if distance(self.mic_positions[i], self.mic_positions[j]) < 1e-9 {
                    return Err(Error::invalid(format!("mics {i} and {j} coincide")));
                }
            }
        }
        Ok(())
    }

    pub fn mic_count(&self) -> usize {
        self.mic_positions.len()
    }

    /// Mic order with the reference first and the rest in file order.
    pub fn reference_first(&self) -> Vec<usize> {
        std::iter::once(self.reference_index)
            .chain((0..self.mic_count()).filter(|&i| i != self.reference_index))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::NotFound(path.display().to_string())
            } else {
                Error::io(path, e)
            }
        })?;
        let g: Self = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        g.validate()?;
        Ok(g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("geometry serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Uniform circular array in the horizontal plane, first mic on the x axis.
    pub fn circular(count: usize, radius: f64) -> Result<Self> {
        let mics = (0..count)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                [radius * a.cos(), radius * a.sin(), 0.0]
            })
            .collect();
        Self::new(mics, 0)
    }
}
