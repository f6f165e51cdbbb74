//! Reproducible acoustic scenes: room responses, HRIRs, mixtures and targets.

pub mod corpus;
pub mod geometry;
pub mod hrir;
mod mix;
pub mod rir;
mod sample;
mod spec;

pub use corpus::{open_corpus, DirectoryCorpus, SignalKind, SignalSource, SyntheticCorpus};
pub use geometry::{ArrayGeometry, Vec3};
pub use hrir::{synth_hrir, HrirSet, SphericalHead};
pub use mix::{mix_scene, BinauralPair, SceneAudio, CLEAN_T60, EARLY_MS, SPEECH_RMS};
pub use rir::{decay_time, simulate_rir, split_clean_late, Rir, RirSplit, RoomSpec, SOUND_SPEED};
pub use sample::{sample_scene, scene_seed, SceneRanges, SignalPool};
pub use spec::{azimuth_gap, SceneSpec, SourceSpec, MIN_SEPARATION_DEG};
