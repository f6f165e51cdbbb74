//! Spatial coherence features: whitened relative transfer functions projected
//! onto free-field plane-wave steering vectors, compressed to ERB bands.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{ErbFilterbank, Spectrogram, Stft, FRAME_SIZE, HOP};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::{self, Exec};
use crate::scene::{ArrayGeometry, SOUND_SPEED};

/// Regularizer for the RTF denominator, whitening and the log spectrum.
pub const EPS: f64 = 1e-12;
const SCRF_MAGIC: &[u8; 4] = b"SCRF";
const SCRF_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreParams {
    /// Frames averaged on each side of the current one.
    pub radius: usize,
    pub look_directions: usize,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            radius: 2,
            look_directions: 12,
        }
    }
}

/// Short-term RTFs of one frame, `(M-1) x bins` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RtfFrame {
    pub values: Vec<Complex64>,
    pub channels: usize,
    pub bins: usize,
    pub radius: usize,
}

impl RtfFrame {
    pub fn get(&self, m: usize, f: usize) -> Complex64 {
        self.values[m * self.bins + f]
    }
}

fn check_specs(specs: &[Spectrogram]) -> Result<()> {
    if specs.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 channels, got {}",
            specs.len()
        )));
    }
    if specs[1..].iter().any(|s| !s.same_geometry(&specs[0])) {
        return Err(Error::invalid("channel spectrograms differ in shape"));
    }
    Ok(())
}

/// RTF of every channel against `specs[0]`, averaged over frames
/// `l - radius ..= l + radius` clipped to the signal.
pub fn short_term_rtf(specs: &[Spectrogram], l: usize, radius: usize) -> Result<RtfFrame> {
    check_specs(specs)?;
    let frames = specs[0].frames();
    if l >= frames {
        return Err(Error::invalid(format!("frame {l} out of range ({frames})")));
    }
    let bins = specs[0].bins();
    let lo = l.saturating_sub(radius);
    let hi = (l + radius).min(frames - 1);
    let mut den = vec![0.0; bins];
    for n in lo..=hi {
        for (d, x) in den.iter_mut().zip(specs[0].frame(n)) {
            *d += x.norm_sqr();
        }
    }
    let mut values = vec![Complex64::new(0.0, 0.0); (specs.len() - 1) * bins];
    for (m, spec) in specs[1..].iter().enumerate() {
        let row = &mut values[m * bins..(m + 1) * bins];
        for n in lo..=hi {
            for ((acc, x), r) in row.iter_mut().zip(spec.frame(n)).zip(specs[0].frame(n)) {
                *acc += x * r.conj();
            }
        }
        for (acc, d) in row.iter_mut().zip(&den) {
            *acc /= d + EPS;
        }
    }
    Ok(RtfFrame {
        values,
        channels: specs.len() - 1,
        bins,
        radius,
    })
}

/// Unit-modulus version of an RTF value; dead entries become `1 + 0j`.
pub fn whiten(r: Complex64) -> Complex64 {
    let a = r.norm();
    if a < EPS {
        Complex64::new(1.0, 0.0)
    } else {
        r / a
    }
}

pub fn whiten_delete(rtf: &RtfFrame) -> Vec<Complex64> {
    rtf.values.iter().map(|&r| whiten(r)).collect()
}

/// Plane-wave steering vectors for the non-reference mics on a uniform
/// azimuth grid starting at 0 degrees.
#[derive(Debug, Clone)]
pub struct SteeringMatrix {
    azimuths: Vec<f64>,
    channels: usize,
    bins: usize,
    /// `bins x (M-1) x Q`.
    entries: Vec<Complex64>,
}

/// Builds `A(f)` for every one-sided bin of a `2 * (bins - 1)`-point FFT.
/// Mic positions are taken reference first.
pub fn build_steering(
    geometry: &ArrayGeometry,
    look_directions: usize,
    bins: usize,
    sample_rate: u32,
) -> Result<SteeringMatrix> {
    if geometry.mic_count() < 2 || geometry.reference_index >= geometry.mic_count() {
        return Err(Error::invalid("steering needs at least 2 mics and a valid reference"));
    }
    if look_directions == 0 || bins < 2 {
        return Err(Error::invalid("need at least one look direction and two bins"));
    }
    let order = geometry.reference_first();
    let pos: Vec<_> = order.iter().map(|&i| geometry.mic_positions[i]).collect();
    let azimuths: Vec<f64> = (0..look_directions)
        .map(|q| q as f64 * 360.0 / look_directions as f64)
        .collect();
    let channels = pos.len() - 1;
    // delays[m][q] = u(theta_q) . (x_1 - x_m) / c
    let delays: Vec<Vec<f64>> = pos[1..]
        .iter()
        .map(|x| {
            azimuths
                .iter()
                .map(|az| {
                    let a = az.to_radians();
                    (a.cos() * (pos[0][0] - x[0]) + a.sin() * (pos[0][1] - x[1])) / SOUND_SPEED
                })
                .collect()
        })
        .collect();
    let n_fft = 2 * (bins - 1);
    let mut entries = Vec::with_capacity(bins * channels * look_directions);
    for f in 0..bins {
        let hz = f as f64 * sample_rate as f64 / n_fft as f64;
        for row in &delays {
            for tau in row {
                entries.push(Complex64::from_polar(1.0, -2.0 * PI * hz * tau));
            }
        }
    }
    Ok(SteeringMatrix {
        azimuths,
        channels,
        bins,
        entries,
    })
}

impl SteeringMatrix {
    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    pub fn look_directions(&self) -> usize {
        self.azimuths.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// `A(f)`, row-major `(M-1) x Q`.
    pub fn at(&self, f: usize) -> &[Complex64] {
        let n = self.channels * self.azimuths.len();
        &self.entries[f * n..(f + 1) * n]
    }

    pub fn entry(&self, f: usize, m: usize, q: usize) -> Complex64 {
        self.at(f)[m * self.azimuths.len() + q]
    }
}

/// `Re{A^H r} / (M-1)` for one bin; `a` is row-major `(M-1) x Q`.
pub fn score_vector(whitened: &[Complex64], a: &[Complex64], q: usize) -> Result<Vec<f64>> {
    if whitened.is_empty() || a.len() != whitened.len() * q {
        return Err(Error::invalid(format!(
            "steering has {} entries, expected {} x {q}",
            a.len(),
            whitened.len()
        )));
    }
    let mut out = vec![0.0; q];
    for (m, r) in whitened.iter().enumerate() {
        for (o, s) in out.iter_mut().zip(&a[m * q..(m + 1) * q]) {
            // Re{conj(s) r}
            *o += s.re * r.re + s.im * r.im;
        }
    }
    let norm = whitened.len() as f64;
    out.iter_mut().for_each(|v| *v /= norm);
    Ok(out)
}

/// Network input for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFeature {
    frames: usize,
    bands: usize,
    looks: usize,
    /// `frames x bands x looks`.
    score: Vec<f64>,
    ref_logspec: Matrix,
}

impl ScoreFeature {
    pub fn new(score: Vec<f64>, ref_logspec: Matrix, looks: usize) -> Result<Self> {
        let (frames, bands) = (ref_logspec.rows(), ref_logspec.cols());
        if score.len() != frames * bands * looks {
            return Err(Error::invalid(format!(
                "score has {} values, expected {frames} x {bands} x {looks}",
                score.len()
            )));
        }
        Ok(Self {
            frames,
            bands,
            looks,
            score,
            ref_logspec,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn looks(&self) -> usize {
        self.looks
    }

    pub fn score(&self, l: usize, b: usize, q: usize) -> f64 {
        self.score[(l * self.bands + b) * self.looks + q]
    }

    pub fn score_data(&self) -> &[f64] {
        &self.score
    }

    pub fn ref_logspec(&self) -> &Matrix {
        &self.ref_logspec
    }

    /// Flattened `(1 + Q) x B` input of frame `l`: the log spectrum first,
    /// then one band vector per look direction.
    pub fn input_frame(&self, l: usize, out: &mut [f64]) {
        let b_count = self.bands;
        out[..b_count].copy_from_slice(self.ref_logspec.row(l));
        for q in 0..self.looks {
            for b in 0..b_count {
                out[(1 + q) * b_count + b] = self.score(l, b, q);
            }
        }
    }

    pub fn input_width(&self) -> usize {
        (1 + self.looks) * self.bands
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + 4 * (self.score.len() + self.frames * self.bands));
        out.extend_from_slice(SCRF_MAGIC);
        out.extend_from_slice(&SCRF_VERSION.to_le_bytes());
        for d in [self.frames, self.bands, self.looks] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.score.iter().chain(self.ref_logspec.data()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 18 || &bytes[..4] != SCRF_MAGIC {
            return Err(Error::format("not a SCRF feature file"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SCRF_VERSION {
            return Err(Error::format(format!("unsupported SCRF version {version}")));
        }
        let dim = |i: usize| {
            let o = 6 + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
        };
        let (frames, bands, looks) = (dim(0), dim(1), dim(2));
        let n_score = frames * bands * looks;
        let n_total = n_score + frames * bands;
        if bytes.len() != 18 + 4 * n_total {
            return Err(Error::format(format!(
                "SCRF payload is {} bytes, expected {}",
                bytes.len() - 18,
                4 * n_total
            )));
        }
        let values: Vec<f64> = bytes[18..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let ref_logspec = Matrix::from_vec(frames, bands, values[n_score..].to_vec())?;
        Self::new(values[..n_score].to_vec(), ref_logspec, looks)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
                _ => Error::io(path, e),
            })?;
        Self::from_bytes(&bytes)
    }
}

/// Log band energies of the reference channel, standardized over the utterance.
pub fn ref_logspec(reference: &Spectrogram, fb: &ErbFilterbank) -> Result<Matrix> {
    if reference.bins() != fb.bins() {
        return Err(Error::invalid(format!(
            "spectrogram has {} bins, filterbank expects {}",
            reference.bins(),
            fb.bins()
        )));
    }
    let mut out = Matrix::zeros(reference.frames(), fb.band_count());
    let mut pow = vec![0.0; reference.bins()];
    for l in 0..reference.frames() {
        for (p, x) in pow.iter_mut().zip(reference.frame(l)) {
            *p = x.norm_sqr();
        }
        fb.compress_row(&pow, out.row_mut(l));
        out.row_mut(l).iter_mut().for_each(|v| *v = (EPS + *v).log10());
    }
    let n = out.data().len().max(1) as f64;
    let mean = out.data().iter().sum::<f64>() / n;
    let var = out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
    out.data_mut().iter_mut().for_each(|v| *v = (*v - mean) * scale);
    Ok(out)
}

/// Per-bin score `zeta(l, f)` for every frame, `frames x bins x Q`.
pub fn bin_scores(
    specs: &[Spectrogram],
    steering: &SteeringMatrix,
    radius: usize,
    exec: Exec,
) -> Result<Vec<Vec<f64>>> {
    check_specs(specs)?;
    if specs.len() - 1 != steering.channels() || specs[0].bins() != steering.bins() {
        return Err(Error::invalid(format!(
            "{} channels x {} bins do not match steering for {} mics x {} bins",
            specs.len(),
            specs[0].bins(),
            steering.channels() + 1,
            steering.bins()
        )));
    }
    let q = steering.look_directions();
    par::try_map_indexed(exec, specs[0].frames(), |l| {
        let rtf = short_term_rtf(specs, l, radius)?;
        let bins = rtf.bins;
        let mut out = Vec::with_capacity(bins * q);
        let mut r = vec![Complex64::new(0.0, 0.0); rtf.channels];
        for f in 0..bins {
            for (m, v) in r.iter_mut().enumerate() {
                *v = whiten(rtf.get(m, f));
            }
            out.extend(score_vector(&r, steering.at(f), q)?);
        }
        Ok(out)
    })
}

/// Features from per-mic spectrograms in geometry file order.
pub fn extract_score_from_specs(
    specs: &[Spectrogram],
    geometry: &ArrayGeometry,
    fb: &ErbFilterbank,
    params: &ScoreParams,
    exec: Exec,
) -> Result<ScoreFeature> {
    if specs.len() != geometry.mic_count() {
        return Err(Error::invalid(format!(
            "{} channels but the geometry has {} mics",
            specs.len(),
            geometry.mic_count()
        )));
    }
    check_specs(specs)?;
    let ordered: Vec<Spectrogram> = geometry
        .reference_first()
        .into_iter()
        .map(|i| specs[i].clone())
        .collect();
    let bins = ordered[0].bins();
    if bins != fb.bins() {
        return Err(Error::invalid(format!(
            "spectrogram has {bins} bins, filterbank expects {}",
            fb.bins()
        )));
    }
    let steering = build_steering(geometry, params.look_directions, bins, ordered[0].sample_rate())?;
    let zeta = bin_scores(&ordered, &steering, params.radius, exec)?;
    let q = params.look_directions;
    let b_count = fb.band_count();
    let per_frame: Vec<Vec<f64>> = par::map_indexed(exec, zeta.len(), |l| {
        let z = &zeta[l];
        let mut column = vec![0.0; bins];
        let mut bands = vec![0.0; b_count];
        let mut out = vec![0.0; b_count * q];
        for qi in 0..q {
            for (f, c) in column.iter_mut().enumerate() {
                *c = z[f * q + qi];
            }
            fb.compress_row(&column, &mut bands);
            for (b, v) in bands.iter().enumerate() {
                out[b * q + qi] = *v;
            }
        }
        out
    });
    let score = per_frame.concat();
    ScoreFeature::new(score, ref_logspec(&ordered[0], fb)?, q)
}

/// Features from time-domain mic signals in geometry file order.
pub fn extract_score(
    signals: &[Vec<f64>],
    geometry: &ArrayGeometry,
    fb: &ErbFilterbank,
    params: &ScoreParams,
    sample_rate: u32,
    exec: Exec,
) -> Result<ScoreFeature> {
    if signals.len() != geometry.mic_count() {
        return Err(Error::invalid(format!(
            "{} channels but the geometry has {} mics",
            signals.len(),
            geometry.mic_count()
        )));
    }
    let stft = Stft::new(FRAME_SIZE, HOP, sample_rate)?;
    let specs = par::try_map_indexed(exec, signals.len(), |m| stft.analyze(&signals[m]))?;
    extract_score_from_specs(&specs, geometry, fb, params, exec)
}
