//! Binaural rendering network: ERB-gain and deep-filter heads on a shared
//! recurrent encoder, conditioned on the ambience factor through FiLM.
//!
//! All arithmetic runs in `f64`; parameters are kept on the `f32` grid so a
//! saved checkpoint reproduces the in-memory model exactly.

mod checkpoint;
mod gru;
mod linalg;
mod model;
mod params;
mod train;

pub use model::{
    apply_output, backward, forward, forward_cached, loss, loss_and_grad, ForwardCache, ModelOutput,
    GAIN_CEILING, MAG_FLOOR,
};
pub use params::{round_to_f32, ModelConfig, ModelParams};
pub use train::{
    clip_global_norm, global_norm, item_loss, run_epoch, train, EpochLog, TrainConfig, TrainItem,
    TrainState,
};

use crate::dsp::{ErbFilterbank, Stft, FRAME_SIZE, HOP};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::scene::{ArrayGeometry, BinauralPair};
use crate::score::{extract_score_from_specs, ScoreParams};

/// Mic signals (geometry file order) to a binaural pair at ambience `alpha`,
/// as long as the input.
#[allow(clippy::too_many_arguments)]
pub fn render(
    params: &ModelParams,
    mics: &[Vec<f64>],
    geometry: &ArrayGeometry,
    fb: &ErbFilterbank,
    score: &ScoreParams,
    alpha: f64,
    sample_rate: u32,
    exec: Exec,
) -> Result<BinauralPair> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    if mics.len() != geometry.mic_count() {
        return Err(Error::invalid(format!(
            "recording has {} channels but the geometry has {} mics",
            mics.len(),
            geometry.mic_count()
        )));
    }
    let stft = Stft::new(FRAME_SIZE, HOP, sample_rate)?;
    let specs = crate::par::try_map_indexed(exec, mics.len(), |m| stft.analyze(&mics[m]))?;
    let feat = extract_score_from_specs(&specs, geometry, fb, score, exec)?;
    let out = forward(params, &feat, alpha)?;
    let [l, r] = apply_output(&out, &specs[geometry.reference_index], fb)?;
    // samples past the last full frame come back as silence
    let n = mics[0].len();
    let mut left = stft.synthesize(&l)?;
    let mut right = stft.synthesize(&r)?;
    left.resize(n, 0.0);
    right.resize(n, 0.0);
    Ok(BinauralPair { left, right })
}
