use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{bins_for, frame_count, FRAME_SIZE, HOP, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Periodic square-root Hann window. At 50% overlap the squared window sums to
/// one, so the same window is used for analysis and synthesis.
pub fn make_window(frame_size: usize) -> Result<Vec<f64>> {
    if frame_size == 0 || !frame_size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "frame size must be even and positive, got {frame_size}"
        )));
    }
    let n = frame_size as f64;
    Ok((0..frame_size)
        .map(|i| (0.5 * (1.0 - (2.0 * PI * i as f64 / n).cos())).sqrt())
        .collect())
}

/// One-sided complex spectrogram, row-major over (frame, bin).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    bins: usize,
    frame_size: usize,
    hop: usize,
    sample_rate: u32,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn zeros(frames: usize, frame_size: usize, hop: usize, sample_rate: u32) -> Self {
        let bins = bins_for(frame_size);
        Self {
            frames,
            bins,
            frame_size,
            hop,
            sample_rate,
            data: vec![Complex64::new(0.0, 0.0); frames * bins],
        }
    }

    /// Builds a spectrogram from raw row-major data; `data.len()` must equal
    /// `frames * (frame_size / 2 + 1)`.
    pub fn from_data(
        data: Vec<Complex64>,
        frames: usize,
        frame_size: usize,
        hop: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        let bins = bins_for(frame_size);
        if data.len() != frames * bins {
            return Err(Error::invalid(format!(
                "spectrogram data has {} values, expected {frames} x {bins}",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            bins,
            frame_size,
            hop,
            sample_rate,
            data,
        })
    }

    /// Same geometry, zero content.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.frames, self.frame_size, self.hop, self.sample_rate)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn frame_size(&self) -> usize {
        self.frame_size
    }
    pub fn hop(&self) -> usize {
        self.hop
    }
    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    #[inline]
    pub fn get(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[frame * self.bins + bin]
    }

    #[inline]
    pub fn set(&mut self, frame: usize, bin: usize, v: Complex64) {
        self.data[frame * self.bins + bin] = v;
    }

    pub fn frame(&self, l: usize) -> &[Complex64] {
        &self.data[l * self.bins..(l + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, l: usize) -> &mut [Complex64] {
        &mut self.data[l * self.bins..(l + 1) * self.bins]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Center frequency of a bin in Hz.
    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.frame_size as f64
    }

    pub fn same_geometry(&self, other: &Spectrogram) -> bool {
        self.frames == other.frames
            && self.frame_size == other.frame_size
            && self.hop == other.hop
            && self.sample_rate == other.sample_rate
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `self + c * other`, geometry must match.
    pub fn add_scaled(&self, other: &Spectrogram, c: f64) -> Result<Self> {
        if !self.same_geometry(other) {
            return Err(Error::invalid("spectrogram geometry mismatch"));
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b * c;
        }
        Ok(out)
    }
}

/// Reusable analysis/synthesis engine with cached FFT plans.
#[derive(Clone)]
pub struct Stft {
    frame_size: usize,
    hop: usize,
    sample_rate: u32,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("frame_size", &self.frame_size)
            .field("hop", &self.hop)
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

impl Default for Stft {
    fn default() -> Self {
        Self::new(FRAME_SIZE, HOP, SAMPLE_RATE).expect("default geometry is valid")
    }
}

impl Stft {
    pub fn new(frame_size: usize, hop: usize, sample_rate: u32) -> Result<Self> {
        let window = make_window(frame_size)?;
        if hop == 0 || hop > frame_size {
            return Err(Error::invalid(format!(
                "hop must be in 1..={frame_size}, got {hop}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            frame_size,
            hop,
            sample_rate,
            window,
            forward: planner.plan_fft_forward(frame_size),
            inverse: planner.plan_fft_inverse(frame_size),
        })
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }
    pub fn hop(&self) -> usize {
        self.hop
    }
    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
    pub fn window(&self) -> &[f64] {
        &self.window
    }
    pub fn bins(&self) -> usize {
        bins_for(self.frame_size)
    }

    /// Unnormalized forward transform of each windowed frame.
    pub fn analyze(&self, signal: &[f64]) -> Result<Spectrogram> {
        if signal.len() < self.frame_size {
            return Err(Error::invalid(format!(
                "signal of {} samples is shorter than one frame ({})",
                signal.len(),
                self.frame_size
            )));
        }
        let frames = frame_count(signal.len(), self.frame_size, self.hop);
        let bins = self.bins();
        let mut out = Spectrogram::zeros(frames, self.frame_size, self.hop, self.sample_rate);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.frame_size];
        let mut scratch =
            vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for l in 0..frames {
            let start = l * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(signal[start + i] * self.window[i], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            out.frame_mut(l).copy_from_slice(&buf[..bins]);
        }
        Ok(out)
    }

    /// Weighted overlap-add synthesis. The inverse transform is scaled by
    /// `1/N`; output length is `(frames - 1) * hop + frame_size`.
    pub fn synthesize(&self, spec: &Spectrogram) -> Result<Vec<f64>> {
        if spec.frame_size() != self.frame_size
            || spec.hop() != self.hop
            || spec.bins() != self.bins()
        {
            return Err(Error::invalid(format!(
                "spectrogram geometry ({}, {}) does not match synthesis ({}, {})",
                spec.frame_size(),
                spec.hop(),
                self.frame_size,
                self.hop
            )));
        }
        let frames = spec.frames();
        if frames == 0 {
            return Ok(Vec::new());
        }
        let n = self.frame_size;
        let len = (frames - 1) * self.hop + n;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch =
            vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let scale = 1.0 / n as f64;
        for l in 0..frames {
            let row = spec.frame(l);
            buf[..row.len()].copy_from_slice(row);
            for k in 1..n / 2 {
                buf[n - k] = row[k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = l * self.hop;
            for i in 0..n {
                let w = self.window[i];
                out[start + i] += buf[i].re * scale * w;
                norm[start + i] += w * w;
            }
        }
        for (o, w) in out.iter_mut().zip(&norm) {
            if *w > 1e-10 {
                *o /= w;
            }
        }
        Ok(out)
    }
}

/// Analysis at 16 kHz with the given geometry.
pub fn stft(signal: &[f64], frame_size: usize, hop: usize) -> Result<Spectrogram> {
    Stft::new(frame_size, hop, SAMPLE_RATE)?.analyze(signal)
}

pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    Stft::new(spec.frame_size(), spec.hop(), spec.sample_rate())?.synthesize(spec)
}
