//! Spectral analysis and synthesis shared by features, the network and metrics.

mod conv;
mod erb;
mod stft;
pub mod wav;

pub use conv::{convolve, fft_convolve};
pub use erb::{erb_rate, erb_rate_inverse, ErbFilterbank};
pub use stft::{istft, make_window, stft, Spectrogram, Stft};

pub use num_complex::Complex64;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_SIZE: usize = 512;
pub const HOP: usize = 256;
pub const ERB_BANDS: usize = 32;

/// Number of one-sided bins for a frame size.
pub const fn bins_for(frame_size: usize) -> usize {
    frame_size / 2 + 1
}

/// Frame count with no padding and the trailing partial frame dropped.
pub fn frame_count(len: usize, frame_size: usize, hop: usize) -> usize {
    if len < frame_size {
        0
    } else {
        (len - frame_size) / hop + 1
    }
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        energy(x) / x.len() as f64
    }
}
