use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// ERB-rate in Cams: `21.4 * log10(1 + 0.00437 f)`.
pub fn erb_rate(hz: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * hz).log10()
}

pub fn erb_rate_inverse(rate: f64) -> f64 {
    (10f64.powf(rate / 21.4) - 1.0) / 0.00437
}

/// Triangular bands on the ERB-rate axis with 50% overlap. Band 0 peaks at
/// 0 Hz and the last band at Nyquist, so the weights form a partition of
/// unity over the bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ErbFilterbank {
    bins: usize,
    sample_rate: u32,
    centers_hz: Vec<f64>,
    // (first bin, weights) per band; weights outside the range are zero
    bands: Vec<(usize, Vec<f64>)>,
    normalizers: Vec<f64>,
    bin_norm: Vec<f64>,
}

impl ErbFilterbank {
    pub fn new(band_count: usize, bins: usize, sample_rate: u32) -> Result<Self> {
        if band_count < 2 {
            return Err(Error::invalid(format!(
                "ERB filterbank needs at least 2 bands, got {band_count}"
            )));
        }
        if band_count > bins {
            return Err(Error::invalid(format!(
                "{band_count} ERB bands exceed {bins} frequency bins"
            )));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let top = erb_rate(nyquist);
        let step = top / (band_count - 1) as f64;
        let rates: Vec<f64> = (0..band_count).map(|b| b as f64 * step).collect();
        let centers_hz: Vec<f64> = rates.iter().map(|&r| erb_rate_inverse(r)).collect();
        let bin_rates: Vec<f64> = (0..bins)
            .map(|k| erb_rate(k as f64 * nyquist / (bins - 1) as f64))
            .collect();

        let mut bands = Vec::with_capacity(band_count);
        for b in 0..band_count {
            let center = rates[b];
            let mut first = None;
            let mut weights = Vec::new();
            for (k, &e) in bin_rates.iter().enumerate() {
                let w = if e <= center {
                    if b == 0 {
                        if e == center {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        ((e - rates[b - 1]) / (center - rates[b - 1])).max(0.0)
                    }
                } else if b + 1 == band_count {
                    0.0
                } else {
                    ((rates[b + 1] - e) / (rates[b + 1] - center)).max(0.0)
                };
                if w > 0.0 {
                    let start = *first.get_or_insert(k);
                    weights.resize(k - start, 0.0);
                    weights.push(w);
                }
            }
            let start = first.ok_or_else(|| {
                Error::invalid(format!(
                    "ERB band {b} covers no frequency bin; use fewer bands or more bins"
                ))
            })?;
            bands.push((start, weights));
        }

        let normalizers: Vec<f64> = bands.iter().map(|(_, w)| w.iter().sum()).collect();
        let mut bin_norm = vec![0.0; bins];
        for (start, w) in &bands {
            for (i, v) in w.iter().enumerate() {
                bin_norm[start + i] += v;
            }
        }
        if let Some(k) = bin_norm.iter().position(|&s| s <= 0.0) {
            return Err(Error::invalid(format!("bin {k} is not covered by any ERB band")));
        }
        Ok(Self {
            bins,
            sample_rate,
            centers_hz,
            bands,
            normalizers,
            bin_norm,
        })
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Per-band normalizer: the sum of that band's weights.
    pub fn normalizers(&self) -> &[f64] {
        &self.normalizers
    }

    pub fn weight(&self, band: usize, bin: usize) -> f64 {
        let (start, w) = &self.bands[band];
        if bin < *start {
            0.0
        } else {
            w.get(bin - start).copied().unwrap_or(0.0)
        }
    }

    /// Nonzero support of a band as (first bin, weights).
    pub fn band(&self, band: usize) -> (usize, &[f64]) {
        let (s, w) = &self.bands[band];
        (*s, w)
    }

    pub fn weights(&self) -> Matrix {
        Matrix::from_fn(self.band_count(), self.bins, |b, f| self.weight(b, f))
    }

    /// Sum of band weights at each bin.
    pub fn bin_norm(&self) -> &[f64] {
        &self.bin_norm
    }

    /// Normalized weighted sum of one frame's bins into bands.
    pub fn compress_row(&self, input: &[f64], out: &mut [f64]) {
        for (b, ((start, w), pi)) in self.bands.iter().zip(&self.normalizers).enumerate() {
            let acc: f64 = w.iter().zip(&input[*start..]).map(|(a, x)| a * x).sum();
            out[b] = acc / pi;
        }
    }

    /// Interpolates band values back onto bins.
    pub fn expand_row(&self, bands: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for ((start, w), g) in self.bands.iter().zip(bands) {
            for (i, a) in w.iter().enumerate() {
                out[start + i] += a * g;
            }
        }
        for (o, n) in out.iter_mut().zip(&self.bin_norm) {
            *o /= n;
        }
    }

    /// `(frames x bins) -> (frames x bands)`.
    pub fn compress(&self, values: &Matrix) -> Result<Matrix> {
        if values.cols() != self.bins {
            return Err(Error::invalid(format!(
                "input has {} bins, filterbank expects {}",
                values.cols(),
                self.bins
            )));
        }
        let mut out = Matrix::zeros(values.rows(), self.band_count());
        for l in 0..values.rows() {
            self.compress_row(values.row(l), out.row_mut(l));
        }
        Ok(out)
    }

    /// `(frames x bands) -> (frames x bins)`.
    pub fn expand(&self, band_values: &Matrix) -> Result<Matrix> {
        if band_values.cols() != self.band_count() {
            return Err(Error::invalid(format!(
                "input has {} bands, filterbank has {}",
                band_values.cols(),
                self.band_count()
            )));
        }
        let mut out = Matrix::zeros(band_values.rows(), self.bins);
        for l in 0..band_values.rows() {
            self.expand_row(band_values.row(l), out.row_mut(l));
        }
        Ok(out)
    }
}
