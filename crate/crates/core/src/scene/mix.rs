//! Microphone mixtures and ambience-blended binaural targets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::corpus::SignalSource;
use super::geometry::ArrayGeometry;
use super::hrir::HrirSet;
use super::rir::{simulate_rir, split_clean_late, Rir};
use super::spec::SceneSpec;
use crate::dsp::{convolve, fft_convolve, power};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Direct-path plus this much early reflection counts as "clean".
pub const EARLY_MS: f64 = 20.0;
/// Decay imposed on the clean part's tail.
pub const CLEAN_T60: f64 = 0.2;
/// RMS of each speaker's reverberant image at the reference mic.
pub const SPEECH_RMS: f64 = 0.05;

/// Two-ear signal.
#[derive(Debug, Clone, PartialEq)]
pub struct BinauralPair {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl BinauralPair {
    pub fn zeros(len: usize) -> Self {
        Self {
            left: vec![0.0; len],
            right: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    /// `self + c * other`.
    pub fn blend(&self, other: &BinauralPair, c: f64) -> BinauralPair {
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + c * y).collect();
        BinauralPair {
            left: mix(&self.left, &other.left),
            right: mix(&self.right, &other.right),
        }
    }

    pub fn energy(&self) -> f64 {
        crate::dsp::energy(&self.left) + crate::dsp::energy(&self.right)
    }

    pub fn channels(&self) -> [&[f64]; 2] {
        [&self.left, &self.right]
    }
}

/// Everything a synthesized scene produces.
#[derive(Debug, Clone)]
pub struct SceneAudio {
    /// One signal per mic, in geometry file order.
    pub mics: Vec<Vec<f64>>,
    /// Direct and early speech through the HRIRs.
    pub clean: BinauralPair,
    /// Late speech reverberation plus interferers through the HRIRs.
    pub ambience: BinauralPair,
    /// `clean + alpha * ambience`.
    pub target: BinauralPair,
    /// Stems at the reference mic.
    pub reference_speech: Vec<f64>,
    pub reference_interference: Vec<f64>,
    pub reference_noise: Vec<f64>,
}

fn truncated(mut x: Vec<f64>, n: usize) -> Vec<f64> {
    x.resize(n, 0.0);
    x
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

fn scale(x: &[f64], g: f64) -> Vec<f64> {
    x.iter().map(|v| v * g).collect()
}

/// Renders one scene: mixtures at every mic and the binaural target stems.
pub fn mix_scene(
    spec: &SceneSpec,
    geometry: &ArrayGeometry,
    hrirs: &HrirSet,
    signals: &dyn SignalSource,
    sample_rate: u32,
    exec: Exec,
) -> Result<SceneAudio> {
    spec.validate()?;
    geometry.validate()?;
    let n = spec.sample_count(sample_rate);
    let room = &spec.room;
    let mics: Vec<_> = geometry
        .mic_positions
        .iter()
        .map(|p| room.to_world(*p))
        .collect();
    let sources: Vec<_> = spec.sources().collect();
    let positions: Vec<_> = sources
        .iter()
        .map(|s| {
            let a = s.azimuth.to_radians();
            room.to_world([s.distance * a.cos(), s.distance * a.sin(), 0.0])
        })
        .collect();
    let m_count = mics.len();
    let rirs: Vec<Rir> = par::try_map_indexed(exec, sources.len() * m_count, |k| {
        simulate_rir(
            room,
            positions[k / m_count],
            mics[k % m_count],
            sample_rate,
            super::sample::scene_seed(spec.seed, k as u64),
        )
    })?;
    let rir = |s: usize, m: usize| &rirs[s * m_count + m];
    let raw: Vec<Vec<f64>> = sources
        .iter()
        .map(|s| signals.signal(&s.signal_id, n))
        .collect::<Result<_>>()?;

    let ref_idx = geometry.reference_index;
    let d_count = spec.speakers.len();

    // equal speaker levels at the reference mic
    let mut gains = vec![1.0; sources.len()];
    let mut ref_images: Vec<Vec<f64>> = (0..sources.len())
        .map(|s| truncated(fft_convolve(&raw[s], &rir(s, ref_idx).taps), n))
        .collect();
    for d in 0..d_count {
        let p = power(&ref_images[d]);
        if !(p > 0.0) {
            return Err(Error::invalid(format!(
                "speaker {:?} has zero power at the reference mic; SIR is undefined",
                sources[d].signal_id
            )));
        }
        gains[d] = SPEECH_RMS / p.sqrt();
        ref_images[d] = scale(&ref_images[d], gains[d]);
    }
    let mut speech_ref = vec![0.0; n];
    for img in &ref_images[..d_count] {
        add_into(&mut speech_ref, img);
    }
    let mut interf_ref = vec![0.0; n];
    if sources.len() > d_count {
        for img in &ref_images[d_count..] {
            add_into(&mut interf_ref, img);
        }
        let p_i = power(&interf_ref);
        if !(p_i > 0.0) {
            return Err(Error::invalid("interferers have zero power at the reference mic"));
        }
        let g = (power(&speech_ref) / (p_i * 10f64.powf(spec.sir / 10.0))).sqrt();
        for s in d_count..sources.len() {
            gains[s] = g;
            ref_images[s] = scale(&ref_images[s], g);
        }
        interf_ref.iter_mut().for_each(|v| *v *= g);
    }
    let scaled: Vec<Vec<f64>> = raw.iter().zip(&gains).map(|(x, g)| scale(x, *g)).collect();

    let mut mic_signals: Vec<Vec<f64>> = par::map_indexed(exec, m_count, |m| {
        let mut acc = vec![0.0; n];
        for s in 0..sources.len() {
            if m == ref_idx {
                add_into(&mut acc, &ref_images[s]);
            } else {
                add_into(&mut acc, &fft_convolve(&scaled[s], &rir(s, m).taps));
            }
        }
        acc
    });

    // sensor noise, one realization per mic, one common gain set at the reference
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6e_6f69_7365);
    let noise: Vec<Vec<f64>> = (0..m_count)
        .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let p_clean_ref = power(&mic_signals[ref_idx]);
    let p_noise = power(&noise[ref_idx]);
    let g_noise = (p_clean_ref / (p_noise * 10f64.powf(spec.snr / 10.0))).sqrt();
    let noise: Vec<Vec<f64>> = noise.iter().map(|v| scale(v, g_noise)).collect();
    for (sig, v) in mic_signals.iter_mut().zip(&noise) {
        add_into(sig, v);
    }

    // binaural stems from the reference-mic responses
    let mut clean = BinauralPair::zeros(n);
    let mut ambience = BinauralPair::zeros(n);
    for (s, src) in sources.iter().enumerate() {
        let (hl, hr) = hrirs.nearest(src.azimuth);
        let to_ears = |x: &[f64], pair: &mut BinauralPair| {
            add_into(&mut pair.left, &truncated(convolve(x, hl), n));
            add_into(&mut pair.right, &truncated(convolve(x, hr), n));
        };
        if s < d_count {
            let split = split_clean_late(rir(s, ref_idx), EARLY_MS, CLEAN_T60)?;
            let c = truncated(fft_convolve(&scaled[s], &split.clean.taps), n);
            let l = truncated(fft_convolve(&scaled[s], &split.late.taps), n);
            to_ears(&c, &mut clean);
            to_ears(&l, &mut ambience);
        } else {
            to_ears(&ref_images[s], &mut ambience);
        }
    }
    let target = clean.blend(&ambience, spec.alpha);

    Ok(SceneAudio {
        mics: mic_signals,
        clean,
        ambience,
        target,
        reference_speech: speech_ref,
        reference_interference: interf_ref,
        reference_noise: noise[ref_idx].clone(),
    })
}
