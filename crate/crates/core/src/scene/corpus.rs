//! Source signals for scene synthesis.
//!
//! Signal ids have the form `<kind>/<name>` with kind `speech` or `music`.
//! The synthetic corpus renders speech-like and music-like signals
//! procedurally from the id; the directory corpus reads `<root>/<id>.wav`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::wav;
use crate::error::{Error, Result};

const TARGET_RMS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Speech,
    Music,
}

impl SignalKind {
    pub fn prefix(self) -> &'static str {
        match self {
            SignalKind::Speech => "speech",
            SignalKind::Music => "music",
        }
    }
}

pub trait SignalSource: Sync {
    /// First `len` samples of the signal named `id`.
    fn signal(&self, id: &str, len: usize) -> Result<Vec<f64>>;

    /// Ids available for a kind.
    fn ids(&self, kind: SignalKind) -> Result<Vec<String>>;
}

/// FNV-1a, stable across platforms and releases.
pub(crate) fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn normalize(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= TARGET_RMS / rms);
    }
    x
}

/// Procedural corpus; ids `speech/NNNN` and `music/NNNN`.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub sample_rate: u32,
    pub speech_count: usize,
    pub music_count: usize,
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            speech_count: 500,
            music_count: 100,
        }
    }
}

// (F1, F2, F3) in Hz for a handful of vowels
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
];
const FORMANT_BW: [f64; 3] = [80.0, 100.0, 140.0];

/// Two-pole resonator with unit peak gain, coefficients recomputed per sample.
#[derive(Default, Clone, Copy)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tick(&mut self, x: f64, freq: f64, bw: f64, fs: f64) -> f64 {
        let r = (-PI * bw / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        let a1 = 2.0 * r * theta.cos();
        let a2 = -r * r;
        let y = (1.0 - r) * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn synth_speech(seed: u64, len: usize, fs: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0_base = rng.random_range(90.0..220.0);
    let mut out = vec![0.0; len];
    let mut formants = VOWELS[0];
    let mut res = [Resonator::default(); 3];
    let mut phase = 0.0f64;
    let mut n = 0usize;
    let mut syllable_idx = 0usize;
    while n < len {
        if syllable_idx > 0 && rng.random_bool(0.15) {
            // pause between words
            n += (rng.random_range(0.08..0.3) * fs) as usize;
            continue;
        }
        let dur = (rng.random_range(0.12..0.3) * fs) as usize;
        let target = VOWELS[rng.random_range(0..VOWELS.len())];
        let fricative = rng.random_bool(0.3);
        let fric_len = (0.04 * fs) as usize;
        let declination = 1.0 - 0.1 * (syllable_idx % 6) as f64 / 6.0;
        let mut prev_noise = 0.0;
        for i in 0..dur {
            let idx = n + i;
            if idx >= len {
                break;
            }
            let t = idx as f64 / fs;
            let env = (PI * i as f64 / dur as f64).sin();
            for k in 0..3 {
                formants[k] += 0.002 * (target[k] - formants[k]);
            }
            let noise: f64 = rng.random_range(-1.0..1.0);
            let sample = if fricative && i < fric_len {
                // high-passed noise burst
                let v = noise - prev_noise;
                prev_noise = noise;
                0.3 * v
            } else {
                let f0 = f0_base * declination * (1.0 + 0.08 * (2.0 * PI * 0.7 * t).sin());
                phase += f0 / fs;
                let pulse = if phase >= 1.0 {
                    phase -= 1.0;
                    1.0
                } else {
                    0.0
                };
                let mut v = pulse + 0.02 * noise;
                let mut acc = 0.0;
                for (k, r) in res.iter_mut().enumerate() {
                    v = r.tick(v, formants[k], FORMANT_BW[k], fs);
                    acc += v;
                }
                acc
            };
            out[idx] = env * sample;
        }
        n += dur;
        syllable_idx += 1;
    }
    normalize(out)
}

fn midi_hz(note: f64) -> f64 {
    440.0 * 2f64.powf((note - 69.0) / 12.0)
}

fn synth_music(seed: u64, len: usize, fs: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let key = rng.random_range(45..58) as f64;
    // scale degrees of a major scale
    let degrees = [0.0, 2.0, 4.0, 5.0, 7.0, 9.0, 11.0];
    let mut n = 0usize;
    while n < len {
        let dur = (rng.random_range(0.4..1.0) * fs) as usize;
        let root = degrees[rng.random_range(0..degrees.len())];
        let minor = rng.random_bool(0.4);
        let chord = [0.0, if minor { 3.0 } else { 4.0 }, 7.0, 12.0];
        let tau = rng.random_range(0.3..1.2);
        let mut notes: Vec<f64> = chord.iter().map(|c| key + 12.0 + root + c).collect();
        notes.push(key + root - 12.0);
        let ring = (dur as f64 * 1.5) as usize;
        for (j, &note) in notes.iter().enumerate() {
            let f = midi_hz(note);
            let amp = if j == notes.len() - 1 { 0.8 } else { 0.5 };
            let ph0 = rng.random_range(0.0..2.0 * PI);
            for i in 0..ring {
                let idx = n + i;
                if idx >= len {
                    break;
                }
                let t = i as f64 / fs;
                let env = (t / 0.01).min(1.0) * (-t / tau).exp();
                let mut v = 0.0;
                for h in 1..=6 {
                    let fh = f * h as f64;
                    if fh >= fs / 2.0 {
                        break;
                    }
                    v += (2.0 * PI * fh * t + ph0 * h as f64).sin() / h as f64;
                }
                out[idx] += amp * env * v;
            }
        }
        n += dur;
    }
    normalize(out)
}

impl SignalSource for SyntheticCorpus {
    fn signal(&self, id: &str, len: usize) -> Result<Vec<f64>> {
        let (kind, name) = id
            .split_once('/')
            .ok_or_else(|| Error::NotFound(format!("signal id {id:?}")))?;
        let index: usize = name
            .parse()
            .map_err(|_| Error::NotFound(format!("signal id {id:?}")))?;
        let fs = self.sample_rate as f64;
        let seed = stable_hash(id);
        match kind {
            "speech" if index < self.speech_count => Ok(synth_speech(seed, len, fs)),
            "music" if index < self.music_count => Ok(synth_music(seed, len, fs)),
            _ => Err(Error::NotFound(format!("signal id {id:?}"))),
        }
    }

    fn ids(&self, kind: SignalKind) -> Result<Vec<String>> {
        let count = match kind {
            SignalKind::Speech => self.speech_count,
            SignalKind::Music => self.music_count,
        };
        Ok((0..count).map(|i| format!("{}/{i:04}", kind.prefix())).collect())
    }
}

/// WAV files under `<root>/speech/` and `<root>/music/`.
#[derive(Debug, Clone)]
pub struct DirectoryCorpus {
    pub root: PathBuf,
    pub sample_rate: u32,
}

impl DirectoryCorpus {
    pub fn new(root: impl Into<PathBuf>, sample_rate: u32) -> Self {
        Self {
            root: root.into(),
            sample_rate,
        }
    }

    fn path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.wav"))
    }
}

impl SignalSource for DirectoryCorpus {
    fn signal(&self, id: &str, len: usize) -> Result<Vec<f64>> {
        let path = self.path(id);
        if !path.exists() {
            return Err(Error::NotFound(format!("signal {id:?} ({})", path.display())));
        }
        let audio = wav::read(&path)?;
        if audio.sample_rate != self.sample_rate {
            return Err(Error::format(format!(
                "{}: sample rate {} Hz, expected {} Hz",
                path.display(),
                audio.sample_rate,
                self.sample_rate
            )));
        }
        let mono = audio.channels.into_iter().next().unwrap_or_default();
        if mono.len() < len {
            return Err(Error::invalid(format!(
                "{} has {} samples, {len} required",
                path.display(),
                mono.len()
            )));
        }
        Ok(normalize(mono[..len].to_vec()))
    }

    fn ids(&self, kind: SignalKind) -> Result<Vec<String>> {
        let dir = self.root.join(kind.prefix());
        let rd = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut ids = Vec::new();
        for entry in rd {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let p = entry.path();
            if p.extension().is_some_and(|e| e == "wav") {
                if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                    ids.push(format!("{}/{stem}", kind.prefix()));
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// Corpus selected by a config string: `"synthetic"` or a directory path.
pub fn open_corpus(spec: &str, sample_rate: u32) -> Result<Box<dyn SignalSource>> {
    if spec == "synthetic" {
        return Ok(Box::new(SyntheticCorpus {
            sample_rate,
            ..SyntheticCorpus::default()
        }));
    }
    let root = Path::new(spec);
    if !root.is_dir() {
        return Err(Error::NotFound(format!("corpus directory {spec}")));
    }
    Ok(Box::new(DirectoryCorpus::new(root, sample_rate)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_normalized() {
        let c = SyntheticCorpus::default();
        let a = c.signal("speech/0003", 16_000).unwrap();
        let b = c.signal("speech/0003", 16_000).unwrap();
        assert_eq!(a, b);
        let rms = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        assert!((rms - TARGET_RMS).abs() < 1e-12);
        let m = c.signal("music/0001", 16_000).unwrap();
        assert!(m.iter().all(|v| v.is_finite()));
        assert_ne!(c.signal("speech/0004", 16_000).unwrap(), a);
    }

    #[test]
    fn unknown_ids() {
        let c = SyntheticCorpus::default();
        assert!(matches!(c.signal("speech/9999", 10), Err(Error::NotFound(_))));
        assert!(matches!(c.signal("noise/0001", 10), Err(Error::NotFound(_))));
        assert!(matches!(c.signal("bogus", 10), Err(Error::NotFound(_))));
    }

    #[test]
    fn directory_corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("speech")).unwrap();
        let x: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.05).sin() * 0.3).collect();
        wav::write(
            dir.path().join("speech/alice.wav"),
            &wav::Audio::new(16_000, vec![x]).unwrap(),
            wav::SampleFormat::Float32,
        )
        .unwrap();
        let c = DirectoryCorpus::new(dir.path(), 16_000);
        assert_eq!(c.ids(SignalKind::Speech).unwrap(), vec!["speech/alice".to_string()]);
        assert_eq!(c.signal("speech/alice", 1000).unwrap().len(), 1000);
        assert!(c.signal("speech/alice", 5000).is_err());
        assert!(matches!(c.signal("speech/bob", 10), Err(Error::NotFound(_))));
    }
}
