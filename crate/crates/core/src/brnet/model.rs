use num_complex::Complex64;

use super::gru::{self, GruCache};
use super::linalg::{matmul_nn, matmul_nt, matmul_tn_acc, sigmoid, sum_rows};
use super::params::ModelParams;
use crate::dsp::{ErbFilterbank, Spectrogram};
use crate::error::{Error, Result};
use crate::score::ScoreFeature;

/// Upper bound of the ERB gains.
pub const GAIN_CEILING: f64 = 2.0;
/// Magnitude floor applied before compression in the loss.
pub const MAG_FLOOR: f64 = 1e-12;

/// Network output for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub frames: usize,
    pub bands: usize,
    pub taps: usize,
    pub df_bins: usize,
    /// `frames x 2 x bands`, each in `[0, 2]`.
    pub gains: Vec<f64>,
    /// `frames x 2 x taps x df_bins`.
    pub coeffs: Vec<Complex64>,
}

impl ModelOutput {
    pub fn gain(&self, l: usize, ear: usize, b: usize) -> f64 {
        self.gains[(l * 2 + ear) * self.bands + b]
    }

    pub fn coeff(&self, l: usize, ear: usize, tap: usize, f: usize) -> Complex64 {
        self.coeffs[((l * 2 + ear) * self.taps + tap) * self.df_bins + f]
    }

    /// Identity output: unit gains and a pass-through first tap.
    pub fn identity(frames: usize, bands: usize, taps: usize, df_bins: usize) -> Self {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); frames * 2 * taps * df_bins];
        for l in 0..frames {
            for ear in 0..2 {
                let base = (l * 2 + ear) * taps * df_bins;
                coeffs[base..base + df_bins].fill(Complex64::new(1.0, 0.0));
            }
        }
        Self {
            frames,
            bands,
            taps,
            df_bins,
            gains: vec![1.0; frames * 2 * bands],
            coeffs,
        }
    }
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    frames: usize,
    alpha: f64,
    x: Vec<f64>,
    pre: Vec<f64>,
    e: Vec<f64>,
    enc: GruCache,
    film: Vec<f64>,
    erb: GruCache,
    df: GruCache,
    gains_sig: Vec<f64>,
    df_tanh: Vec<f64>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// Forward pass returning the output and the activations for backprop.
pub fn forward_cached(
    params: &ModelParams,
    feat: &ScoreFeature,
    alpha: f64,
) -> Result<(ModelOutput, ForwardCache)> {
    check_alpha(alpha)?;
    let cfg = &params.config;
    if feat.bands() != cfg.bands || feat.looks() != cfg.looks {
        return Err(Error::invalid(format!(
            "feature has {} bands x {} looks, model expects {} x {}",
            feat.bands(),
            feat.looks(),
            cfg.bands,
            cfg.looks
        )));
    }
    let (t, h, d) = (feat.frames(), cfg.hidden, cfg.input_width());
    let p = &params.data;
    let lay = &params.layout;
    let mut x = vec![0.0; t * d];
    for (l, row) in x.chunks_exact_mut(d).enumerate() {
        feat.input_frame(l, row);
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite feature at frame {}",
            i / d
        )));
    }

    let mut pre = vec![0.0; t * h];
    for row in pre.chunks_exact_mut(h) {
        row.copy_from_slice(&p[lay.enc_in_b.clone()]);
    }
    matmul_nt(t, d, h, &x, &p[lay.enc_in_w.clone()], &mut pre, 1.0);
    let e: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
    let enc = gru::forward(p, &lay.enc_gru, &e, t, h);

    let gamma = &p[lay.film_gamma.clone()];
    let beta = &p[lay.film_beta.clone()];
    let film: Vec<f64> = enc
        .out
        .chunks_exact(h)
        .flat_map(|row| {
            row.iter()
                .zip(gamma.iter().zip(beta))
                .map(|(v, (g, b))| (1.0 + g * alpha) * v + b * alpha)
        })
        .collect();

    let erb = gru::forward(p, &lay.erb_gru, &film, t, h);
    let nb = 2 * cfg.bands;
    let mut logits = vec![0.0; t * nb];
    for row in logits.chunks_exact_mut(nb) {
        row.copy_from_slice(&p[lay.erb_out_b.clone()]);
    }
    matmul_nt(t, h, nb, &erb.out, &p[lay.erb_out_w.clone()], &mut logits, 1.0);
    let gains_sig: Vec<f64> = logits.iter().map(|v| sigmoid(*v)).collect();

    let df = gru::forward(p, &lay.df_gru, &film, t, h);
    let nd = cfg.df_width();
    let mut df_tanh = vec![0.0; t * nd];
    for row in df_tanh.chunks_exact_mut(nd) {
        row.copy_from_slice(&p[lay.df_out_b.clone()]);
    }
    matmul_nt(t, h, nd, &df.out, &p[lay.df_out_w.clone()], &mut df_tanh, 1.0);
    df_tanh.iter_mut().for_each(|v| *v = v.tanh());

    let out = ModelOutput {
        frames: t,
        bands: cfg.bands,
        taps: cfg.taps,
        df_bins: cfg.df_bins,
        gains: gains_sig.iter().map(|s| GAIN_CEILING * s).collect(),
        coeffs: df_tanh
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect(),
    };
    let cache = ForwardCache {
        frames: t,
        alpha,
        x,
        pre,
        e,
        enc,
        film,
        erb,
        df,
        gains_sig,
        df_tanh,
    };
    Ok((out, cache))
}

pub fn forward(params: &ModelParams, feat: &ScoreFeature, alpha: f64) -> Result<ModelOutput> {
    forward_cached(params, feat, alpha).map(|(out, _)| out)
}

/// Gradients of a scalar objective w.r.t. every parameter, given its
/// gradients w.r.t. the gains and the deep-filter coefficients
/// (`d_coeffs` holds `(dL/dRe, dL/dIm)` in the coefficient layout).
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    d_gains: &[f64],
    d_coeffs: &[Complex64],
) -> Vec<f64> {
    let cfg = &params.config;
    let (t, h, d) = (cache.frames, cfg.hidden, cfg.input_width());
    let p = &params.data;
    let lay = &params.layout;
    let mut grads = vec![0.0; p.len()];

    // ERB head
    let nb = 2 * cfg.bands;
    let d_logits: Vec<f64> = d_gains
        .iter()
        .zip(&cache.gains_sig)
        .map(|(g, s)| g * GAIN_CEILING * s * (1.0 - s))
        .collect();
    matmul_tn_acc(t, nb, h, &d_logits, &cache.erb.out, &mut grads[lay.erb_out_w.clone()]);
    sum_rows(&d_logits, nb, &mut grads[lay.erb_out_b.clone()]);
    let mut d_erb = vec![0.0; t * h];
    matmul_nn(t, nb, h, &d_logits, &p[lay.erb_out_w.clone()], &mut d_erb, 0.0);
    let mut d_film = gru::backward(p, &lay.erb_gru, &cache.erb, &cache.film, &d_erb, &mut grads);

    // DF head
    let nd = cfg.df_width();
    let d_pre_df: Vec<f64> = d_coeffs
        .iter()
        .flat_map(|c| [c.re, c.im])
        .zip(&cache.df_tanh)
        .map(|(g, y)| g * (1.0 - y * y))
        .collect();
    matmul_tn_acc(t, nd, h, &d_pre_df, &cache.df.out, &mut grads[lay.df_out_w.clone()]);
    sum_rows(&d_pre_df, nd, &mut grads[lay.df_out_b.clone()]);
    let mut d_df = vec![0.0; t * h];
    matmul_nn(t, nd, h, &d_pre_df, &p[lay.df_out_w.clone()], &mut d_df, 0.0);
    let d_film_df = gru::backward(p, &lay.df_gru, &cache.df, &cache.film, &d_df, &mut grads);
    for (a, b) in d_film.iter_mut().zip(&d_film_df) {
        *a += b;
    }

    // FiLM
    let alpha = cache.alpha;
    let gamma = &p[lay.film_gamma.clone()];
    let mut d_enc = vec![0.0; t * h];
    let (g_start, b_start) = (lay.film_gamma.start, lay.film_beta.start);
    for s in 0..t {
        for j in 0..h {
            let g = d_film[s * h + j];
            d_enc[s * h + j] = g * (1.0 + gamma[j] * alpha);
            grads[g_start + j] += g * cache.enc.out[s * h + j] * alpha;
            grads[b_start + j] += g * alpha;
        }
    }

    // encoder
    let d_e = gru::backward(p, &lay.enc_gru, &cache.enc, &cache.e, &d_enc, &mut grads);
    let d_pre: Vec<f64> = d_e
        .iter()
        .zip(&cache.pre)
        .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
        .collect();
    matmul_tn_acc(t, h, d, &d_pre, &cache.x, &mut grads[lay.enc_in_w.clone()]);
    sum_rows(&d_pre, h, &mut grads[lay.enc_in_b.clone()]);
    grads
}

fn check_output(output: &ModelOutput, reference: &Spectrogram, fb: &ErbFilterbank) -> Result<()> {
    if output.frames != reference.frames() {
        return Err(Error::invalid(format!(
            "model output has {} frames, spectrogram has {}",
            output.frames,
            reference.frames()
        )));
    }
    if output.bands != fb.band_count() || reference.bins() != fb.bins() {
        return Err(Error::invalid("filterbank does not match output or spectrogram"));
    }
    if output.df_bins > reference.bins() {
        return Err(Error::invalid("deep filter covers more bins than the spectrogram"));
    }
    Ok(())
}

/// Reference spectrum scaled by one ear's ERB-expanded gains.
fn masked(output: &ModelOutput, reference: &Spectrogram, fb: &ErbFilterbank, ear: usize) -> Spectrogram {
    let mut row = vec![0.0; reference.bins()];
    let mut m = reference.clone();
    for l in 0..output.frames {
        let start = (l * 2 + ear) * output.bands;
        fb.expand_row(&output.gains[start..start + output.bands], &mut row);
        for (v, gain) in m.frame_mut(l).iter_mut().zip(&row) {
            *v *= gain;
        }
    }
    m
}

fn deep_filter(output: &ModelOutput, masked: &Spectrogram, ear: usize) -> Spectrogram {
    let mut y = masked.clone();
    for l in 0..output.frames {
        for f in 0..output.df_bins {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..output.taps.min(l + 1) {
                acc += output.coeff(l, ear, i, f) * masked.get(l - i, f);
            }
            y.set(l, f, acc);
        }
    }
    y
}

/// ERB gains on the reference spectrum, then the causal deep filter on the
/// lowest `df_bins` bins of each ear.
pub fn apply_output(
    output: &ModelOutput,
    reference: &Spectrogram,
    fb: &ErbFilterbank,
) -> Result<[Spectrogram; 2]> {
    check_output(output, reference, fb)?;
    Ok([0, 1].map(|ear| {
        let m = masked(output, reference, fb, ear);
        deep_filter(output, &m, ear)
    }))
}

fn compressed(v: Complex64, c: f64) -> (f64, Complex64) {
    let a = v.norm();
    if a < MAG_FLOOR {
        let p = MAG_FLOOR.powf(c);
        let dir = if a > 0.0 { v / a } else { Complex64::new(1.0, 0.0) };
        (p, dir * p)
    } else {
        let p = a.powf(c);
        (p, v * (p / a))
    }
}

/// Compressed complex mean-square error term of one bin and its gradient
/// `dL/dRe + j dL/dIm` w.r.t. the estimate (zero where the estimate is floored).
fn bin_loss(y: Complex64, yh: Complex64, c: f64) -> (f64, Complex64) {
    let (a, u) = compressed(y, c);
    let (p, v) = compressed(yh, c);
    let diff = v - u;
    let loss = (a - p).powi(2) + diff.norm_sqr();
    let m = yh.norm();
    if m < MAG_FLOOR {
        return (loss, Complex64::new(0.0, 0.0));
    }
    let g1 = yh * (-2.0 * (a - p) * c * m.powf(c - 2.0));
    let s = m.powf(c - 1.0);
    let g2 = diff * (2.0 * s) + yh * (2.0 * (c - 1.0) * m.powf(c - 3.0) * (diff.conj() * yh).re);
    (loss, g1 + g2)
}

fn check_pairs(y: &[Spectrogram; 2], yh: &[Spectrogram; 2], c: f64) -> Result<()> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::invalid(format!("compression {c} outside (0, 1]")));
    }
    if !(0..2).all(|e| y[e].same_geometry(&yh[e]) && y[e].same_geometry(&y[0])) {
        return Err(Error::invalid("target and estimate shapes differ"));
    }
    Ok(())
}

/// Compressed complex spectral loss summed over frames, bins and ears.
pub fn loss(y: &[Spectrogram; 2], yh: &[Spectrogram; 2], c: f64) -> Result<f64> {
    check_pairs(y, yh, c)?;
    let mut total = 0.0;
    for e in 0..2 {
        for (a, b) in y[e].data().iter().zip(yh[e].data()) {
            total += bin_loss(*a, *b, c).0;
        }
    }
    Ok(total)
}

/// Loss of one utterance normalized per time-frequency bin and ear, with
/// its parameter gradient.
pub fn loss_and_grad(
    params: &ModelParams,
    feat: &ScoreFeature,
    reference: &Spectrogram,
    target: &[Spectrogram; 2],
    fb: &ErbFilterbank,
    alpha: f64,
    c: f64,
) -> Result<(f64, Vec<f64>)> {
    let (out, cache) = forward_cached(params, feat, alpha)?;
    check_output(&out, reference, fb)?;
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::invalid(format!("compression {c} outside (0, 1]")));
    }
    if !target.iter().all(|y| y.same_geometry(reference)) {
        return Err(Error::invalid("target and reference shapes differ"));
    }
    let (t, bins) = (reference.frames(), reference.bins());
    let scale = 1.0 / (t * bins * 2) as f64;
    let mut d_gains = vec![0.0; out.gains.len()];
    let mut d_coeffs = vec![Complex64::new(0.0, 0.0); out.coeffs.len()];
    let mut total = 0.0;
    for ear in 0..2 {
        let m = masked(&out, reference, fb, ear);
        let yh = deep_filter(&out, &m, ear);
        // dL/dY_hat, then through the taps to the masked spectrum
        let mut d_y = vec![Complex64::new(0.0, 0.0); t * bins];
        for (k, (a, b)) in target[ear].data().iter().zip(yh.data()).enumerate() {
            let (lv, gv) = bin_loss(*a, *b, c);
            total += lv;
            d_y[k] = gv * scale;
        }
        if !total.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss on ear {ear}; first bad frame {:?}",
                (0..t).find(|&l| (0..bins).any(|f| !yh.get(l, f).norm().is_finite()))
            )));
        }
        let mut d_m = d_y.clone();
        for l in 0..t {
            for f in 0..out.df_bins {
                d_m[l * bins + f] = Complex64::new(0.0, 0.0);
            }
        }
        for l in 0..t {
            for f in 0..out.df_bins {
                let gy = d_y[l * bins + f];
                for i in 0..out.taps.min(l + 1) {
                    let idx = ((l * 2 + ear) * out.taps + i) * out.df_bins + f;
                    d_coeffs[idx] += gy * m.get(l - i, f).conj();
                    d_m[(l - i) * bins + f] += gy * out.coeffs[idx].conj();
                }
            }
        }
        // masked = G * X with G the expanded gains
        let mut d_g = vec![0.0; bins];
        let mut d_b = vec![0.0; out.bands];
        for l in 0..t {
            for (f, dg) in d_g.iter_mut().enumerate() {
                *dg = (d_m[l * bins + f].conj() * reference.get(l, f)).re / fb.bin_norm()[f];
            }
            fb.compress_row(&d_g, &mut d_b);
            let start = (l * 2 + ear) * out.bands;
            for (b, v) in d_b.iter().enumerate() {
                // compress_row divides by the band normalizer; undo it
                d_gains[start + b] += v * fb.normalizers()[b];
            }
        }
    }
    let grads = backward(params, &cache, &d_gains, &d_coeffs);
    Ok((total * scale, grads))
}
