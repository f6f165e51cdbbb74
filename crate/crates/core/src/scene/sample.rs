//! Random scene layouts: sources in a ring sector around the array.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rir::RoomSpec;
use super::spec::{azimuth_gap, SceneSpec, SourceSpec, MIN_SEPARATION_DEG};
use crate::error::{Error, Result};

const MAX_TRIES: usize = 10_000;
/// Sources and the array keep this distance from every wall.
const WALL_MARGIN: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneRanges {
    /// Sector start and end in degrees; the sector runs counter-clockwise
    /// from start to end and may wrap through 0.
    pub azimuth_deg: (f64, f64),
    pub distance_m: (f64, f64),
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub t60_choices: Vec<f64>,
    pub sir_choices: Vec<f64>,
    pub snr_choices: Vec<f64>,
    pub alpha_choices: Vec<f64>,
    pub speakers: usize,
    pub interferers: usize,
    pub min_separation_deg: f64,
    pub duration: f64,
    pub array_height: f64,
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self {
            azimuth_deg: (-90.0, 90.0),
            distance_m: (1.0, 1.8),
            room_min: [5.0, 4.5, 2.7],
            room_max: [8.0, 6.5, 3.3],
            t60_choices: vec![0.3, 0.4, 0.5, 0.6],
            sir_choices: vec![5.0, 10.0, 15.0],
            snr_choices: vec![20.0, 25.0, 30.0],
            alpha_choices: vec![0.0, 0.3, 0.5, 0.7, 1.0],
            speakers: 2,
            interferers: 1,
            min_separation_deg: MIN_SEPARATION_DEG,
            duration: 5.0,
            array_height: 1.5,
        }
    }
}

/// Signal ids to draw speakers and interferers from.
#[derive(Debug, Clone, Default)]
pub struct SignalPool {
    pub speech: Vec<String>,
    pub music: Vec<String>,
}

fn pick(rng: &mut ChaCha8Rng, xs: &[f64], what: &str) -> Result<f64> {
    xs.choose(rng)
        .copied()
        .ok_or_else(|| Error::invalid(format!("no {what} choices configured")))
}

/// Draws a scene; rejection-samples source placement until every pair of
/// sources is at least `min_separation_deg` apart and inside the room.
pub fn sample_scene(seed: u64, ranges: &SceneRanges, pool: &SignalPool) -> Result<SceneSpec> {
    if ranges.speakers == 0 {
        return Err(Error::invalid("at least one speaker required"));
    }
    if pool.speech.len() < ranges.speakers {
        return Err(Error::invalid("not enough speech signals for distinct speakers"));
    }
    if ranges.interferers > 0 && pool.music.is_empty() {
        return Err(Error::invalid("no interferer signals available"));
    }
    if ranges.min_separation_deg < MIN_SEPARATION_DEG {
        return Err(Error::invalid(format!(
            "minimum separation below {MIN_SEPARATION_DEG} degrees"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [0, 1, 2].map(|i| rng.random_range(ranges.room_min[i]..=ranges.room_max[i]));
    let t60 = pick(&mut rng, &ranges.t60_choices, "t60")?;
    let sir = pick(&mut rng, &ranges.sir_choices, "SIR")?;
    let snr = pick(&mut rng, &ranges.snr_choices, "SNR")?;
    let alpha = pick(&mut rng, &ranges.alpha_choices, "alpha")?;
    let center = [
        dims[0] / 2.0 + rng.random_range(-0.3..=0.3),
        dims[1] / 2.0 + rng.random_range(-0.3..=0.3),
        ranges.array_height.min(dims[2] - WALL_MARGIN),
    ];
    let yaw = rng.random_range(0.0..std::f64::consts::TAU);
    let room = RoomSpec {
        dimensions: dims,
        t60,
        array_center: center,
        array_yaw: yaw,
    };

    let (az_lo, az_hi) = ranges.azimuth_deg;
    let width = (az_hi - az_lo).rem_euclid(360.0);
    let width = if width == 0.0 { 360.0 } else { width };
    let count = ranges.speakers + ranges.interferers;
    let inside = |p: [f64; 3]| {
        p.iter()
            .zip(&dims)
            .all(|(x, d)| *x > WALL_MARGIN && *x < d - WALL_MARGIN)
    };
    let mut placed = None;
    for _ in 0..MAX_TRIES {
        let cand: Vec<(f64, f64)> = (0..count)
            .map(|_| {
                let az = (az_lo + rng.random_range(0.0..=width)).rem_euclid(360.0);
                let d = rng.random_range(ranges.distance_m.0..=ranges.distance_m.1);
                (az, d)
            })
            .collect();
        let separated = (0..count).all(|i| {
            (i + 1..count).all(|j| azimuth_gap(cand[i].0, cand[j].0) >= ranges.min_separation_deg)
        });
        let fits = cand.iter().all(|&(az, d)| {
            let a = az.to_radians();
            inside(room.to_world([d * a.cos(), d * a.sin(), 0.0]))
        });
        if separated && fits {
            placed = Some(cand);
            break;
        }
    }
    let placed = placed.ok_or_else(|| {
        Error::invalid(format!(
            "could not place {count} sources {} degrees apart in {MAX_TRIES} tries",
            ranges.min_separation_deg
        ))
    })?;

    let speech_ids: Vec<&String> = pool.speech.choose_multiple(&mut rng, ranges.speakers).collect();
    let mut speakers = Vec::new();
    let mut interferers = Vec::new();
    for (i, &(azimuth, distance)) in placed.iter().enumerate() {
        if i < ranges.speakers {
            speakers.push(SourceSpec {
                azimuth,
                distance,
                signal_id: speech_ids[i].clone(),
            });
        } else {
            interferers.push(SourceSpec {
                azimuth,
                distance,
                signal_id: pool.music.choose(&mut rng).expect("checked nonempty").clone(),
            });
        }
    }
    Ok(SceneSpec {
        room,
        speakers,
        interferers,
        sir,
        snr,
        alpha,
        seed: rng.random(),
        duration: ranges.duration,
    })
}

/// Per-scene seed derived from a dataset seed and scene index (SplitMix64).
pub fn scene_seed(dataset_seed: u64, index: u64) -> u64 {
    let mut z = dataset_seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
