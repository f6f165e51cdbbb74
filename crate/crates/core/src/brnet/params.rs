use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub bands: usize,
    pub looks: usize,
    pub taps: usize,
    pub df_bins: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 96,
            bands: 32,
            looks: 12,
            taps: 5,
            df_bins: 160,
        }
    }
}

impl ModelConfig {
    pub fn input_width(&self) -> usize {
        (1 + self.looks) * self.bands
    }

    /// Deep-filter outputs per frame: ears x taps x bins x (re, im).
    pub fn df_width(&self) -> usize {
        2 * self.taps * self.df_bins * 2
    }

    pub fn validate(&self) -> Result<()> {
        let ModelConfig { hidden, bands, looks, taps, df_bins } = *self;
        if [hidden, bands, looks, taps, df_bins].contains(&0) {
            return Err(Error::invalid(format!("model sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Parameter ranges of one gated recurrent cell (gate order r, z, n).
#[derive(Debug, Clone, PartialEq)]
pub struct GruSlots {
    pub w_ih: Range<usize>,
    pub w_hh: Range<usize>,
    pub b_ih: Range<usize>,
    pub b_hh: Range<usize>,
}

/// Offsets of every named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub enc_in_w: Range<usize>,
    pub enc_in_b: Range<usize>,
    pub enc_gru: GruSlots,
    pub film_gamma: Range<usize>,
    pub film_beta: Range<usize>,
    pub erb_gru: GruSlots,
    pub erb_out_w: Range<usize>,
    pub erb_out_b: Range<usize>,
    pub df_gru: GruSlots,
    pub df_out_w: Range<usize>,
    pub df_out_b: Range<usize>,
    /// Name, dims and range of every tensor in storage order.
    pub tensors: Vec<(String, Vec<usize>, Range<usize>)>,
    pub len: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden;
        let mut tensors = Vec::new();
        let mut at = 0;
        let mut take = |name: &str, dims: Vec<usize>| {
            let n: usize = dims.iter().product();
            let r = at..at + n;
            at += n;
            tensors.push((name.to_string(), dims, r.clone()));
            r
        };
        let enc_in_w = take("enc_in.weight", vec![h, cfg.input_width()]);
        let enc_in_b = take("enc_in.bias", vec![h]);
        let gru = |prefix: &str, take: &mut dyn FnMut(&str, Vec<usize>) -> Range<usize>| GruSlots {
            w_ih: take(&format!("{prefix}.w_ih"), vec![3 * h, h]),
            w_hh: take(&format!("{prefix}.w_hh"), vec![3 * h, h]),
            b_ih: take(&format!("{prefix}.b_ih"), vec![3 * h]),
            b_hh: take(&format!("{prefix}.b_hh"), vec![3 * h]),
        };
        let enc_gru = gru("enc_gru", &mut take);
        let film_gamma = take("film.gamma", vec![h]);
        let film_beta = take("film.beta", vec![h]);
        let erb_gru = gru("erb_gru", &mut take);
        let erb_out_w = take("erb_out.weight", vec![2 * cfg.bands, h]);
        let erb_out_b = take("erb_out.bias", vec![2 * cfg.bands]);
        let df_gru = gru("df_gru", &mut take);
        let df_out_w = take("df_out.weight", vec![cfg.df_width(), h]);
        let df_out_b = take("df_out.bias", vec![cfg.df_width()]);
        Self {
            enc_in_w,
            enc_in_b,
            enc_gru,
            film_gamma,
            film_beta,
            erb_gru,
            erb_out_w,
            erb_out_b,
            df_gru,
            df_out_w,
            df_out_b,
            len: at,
            tensors,
        }
    }
}

/// Model weights as one flat vector plus its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
}

/// Rounds every value to the nearest `f32`, the checkpoint precision.
pub fn round_to_f32(data: &mut [f64]) {
    data.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(Self {
            config,
            data: vec![0.0; layout.len],
            layout,
        })
    }

    /// Uniform `+-1/sqrt(fan_in)` weights and biases; FiLM starts at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = config.input_width() as f64;
        let h = config.hidden as f64;
        for (name, _, range) in p.layout.tensors.clone() {
            let fan_in = if name.starts_with("enc_in") { input } else { h };
            if name.starts_with("film") {
                continue;
            }
            let k = 1.0 / fan_in.sqrt();
            for v in &mut p.data[range] {
                *v = rng.random_range(-k..k);
            }
        }
        round_to_f32(&mut p.data);
        Ok(p)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .tensors
            .iter()
            .find(|t| t.0 == name)
            .map(|t| &self.data[t.2.clone()])
    }

    pub fn slice(&self, r: &Range<usize>) -> &[f64] {
        &self.data[r.clone()]
    }
}
