//! Binaural objective metrics and their Table-style aggregation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{Spectrogram, Stft, FRAME_SIZE, HOP, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::scene::BinauralPair;

/// Upper cap of the scale-invariant SDR in dB.
pub const SDR_CAP_DB: f64 = 60.0;
/// Interaural phase is scored below this frequency.
pub const IPD_MAX_HZ: f64 = 1500.0;
const ILD_EPS: f64 = 1e-9;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

fn check(reference: &BinauralPair, estimate: &BinauralPair) -> Result<()> {
    if reference.left.len() != reference.right.len()
        || estimate.left.len() != estimate.right.len()
        || reference.len() != estimate.len()
    {
        return Err(Error::invalid(format!(
            "reference ({} samples) and estimate ({} samples) differ in length",
            reference.len(),
            estimate.len()
        )));
    }
    Ok(())
}

fn spectra(pair: &BinauralPair) -> Result<[Spectrogram; 2]> {
    let stft = Stft::new(FRAME_SIZE, HOP, SAMPLE_RATE)?;
    Ok([stft.analyze(&pair.left)?, stft.analyze(&pair.right)?])
}

/// Weighted mean of `err` over bins selected by `band`, weighted by the
/// reference `|Y_L Y_R|`.
fn weighted(
    reference: &BinauralPair,
    estimate: &BinauralPair,
    band: impl Fn(f64) -> bool,
    err: impl Fn(Complex64, Complex64, Complex64, Complex64) -> f64,
) -> Result<f64> {
    check(reference, estimate)?;
    let [rl, rr] = spectra(reference)?;
    let [el, er] = spectra(estimate)?;
    let (mut num, mut den) = (0.0, 0.0);
    for l in 0..rl.frames() {
        for f in (0..rl.bins()).filter(|&f| band(rl.bin_hz(f))) {
            let (a, b) = (rl.get(l, f), rr.get(l, f));
            let w = (a * b).norm();
            if w > 0.0 {
                num += w * err(a, b, el.get(l, f), er.get(l, f));
                den += w;
            }
        }
    }
    if den <= 0.0 {
        return Err(Error::invalid("reference is silent in the scored band"));
    }
    Ok(num / den)
}

/// Magnitude-weighted interaural phase difference error in radians.
pub fn mw_ipde(reference: &BinauralPair, estimate: &BinauralPair) -> Result<f64> {
    weighted(
        reference,
        estimate,
        |hz| hz < IPD_MAX_HZ,
        |a, b, c, d| wrap_phase((a * b.conj()).arg() - (c * d.conj()).arg()).abs(),
    )
}

fn ild(l: Complex64, r: Complex64) -> f64 {
    20.0 * ((l.norm() + ILD_EPS) / (r.norm() + ILD_EPS)).log10()
}

/// Magnitude-weighted interaural level difference error in dB.
pub fn mw_ilde(reference: &BinauralPair, estimate: &BinauralPair) -> Result<f64> {
    weighted(reference, estimate, |_| true, |a, b, c, d| (ild(a, b) - ild(c, d)).abs())
}

/// Scale-invariant SDR over the concatenated ears with one shared scale,
/// capped at [`SDR_CAP_DB`].
pub fn msi_sdr(reference: &BinauralPair, estimate: &BinauralPair) -> Result<f64> {
    check(reference, estimate)?;
    let y: Vec<f64> = reference.left.iter().chain(&reference.right).copied().collect();
    let yh: Vec<f64> = estimate.left.iter().chain(&estimate.right).copied().collect();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    if !(yy > 0.0) {
        return Err(Error::invalid("reference has zero energy"));
    }
    let beta = y.iter().zip(&yh).map(|(a, b)| a * b).sum::<f64>() / yy;
    let target = beta * beta * yy;
    let residual: f64 = y.iter().zip(&yh).map(|(a, b)| (b - beta * a).powi(2)).sum();
    if residual <= 0.0 {
        return Ok(SDR_CAP_DB);
    }
    Ok((10.0 * (target / residual).log10()).min(SDR_CAP_DB))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scene_id: String,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry_id: Option<String>,
    pub mw_ipde: f64,
    pub mw_ilde: f64,
    pub msi_sdr: f64,
}

pub fn evaluate(
    reference: &BinauralPair,
    estimate: &BinauralPair,
    scene_id: &str,
    alpha: f64,
    geometry_id: Option<&str>,
) -> Result<MetricReport> {
    Ok(MetricReport {
        scene_id: scene_id.to_string(),
        alpha,
        geometry_id: geometry_id.map(str::to_string),
        mw_ipde: mw_ipde(reference, estimate)?,
        mw_ilde: mw_ilde(reference, estimate)?,
        msi_sdr: msi_sdr(reference, estimate)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Geometry,
    Alpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry_id: Option<String>,
    pub count: usize,
    pub mw_ipde: f64,
    pub mw_ilde: f64,
    pub msi_sdr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub rows: Vec<AggregateRow>,
}

/// Mode label of an ambience factor.
pub fn mode_label(alpha: f64) -> String {
    let mode = if alpha == 1.0 {
        "I-BAT"
    } else if alpha == 0.0 {
        "E-BAT"
    } else {
        "I/E-BAT"
    };
    format!("{mode} (α = {alpha})")
}

/// Group means; rows are ordered by descending alpha, then geometry id.
pub fn aggregate(reports: &[MetricReport], keys: &[GroupKey]) -> Result<AggregateTable> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to aggregate"));
    }
    let by_alpha = keys.contains(&GroupKey::Alpha);
    let by_geometry = keys.contains(&GroupKey::Geometry);
    if by_geometry {
        let with = reports.iter().filter(|r| r.geometry_id.is_some()).count();
        if with != reports.len() {
            return Err(Error::invalid(format!(
                "{} of {} reports lack a geometry id",
                reports.len() - with,
                reports.len()
            )));
        }
    }
    // sort key: negated alpha bits keep descending order without float keys
    let mut groups: BTreeMap<(i64, Option<String>), Vec<&MetricReport>> = BTreeMap::new();
    for r in reports {
        let a = if by_alpha { -((r.alpha * 1e6).round() as i64) } else { 0 };
        let g = if by_geometry { r.geometry_id.clone() } else { None };
        groups.entry((a, g)).or_default().push(r);
    }
    let rows = groups
        .into_iter()
        .map(|((_, geometry_id), members)| {
            let n = members.len() as f64;
            let mean = |f: fn(&MetricReport) -> f64| members.iter().map(|r| f(r)).sum::<f64>() / n;
            AggregateRow {
                alpha: by_alpha.then(|| members[0].alpha),
                geometry_id,
                count: members.len(),
                mw_ipde: mean(|r| r.mw_ipde),
                mw_ilde: mean(|r| r.mw_ilde),
                msi_sdr: mean(|r| r.msi_sdr),
            }
        })
        .collect();
    Ok(AggregateTable { rows })
}

impl AggregateTable {
    /// Aligned text table with one block per ambience factor.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<22} {:<10} {:>6} {:>9} {:>9} {:>9}",
            "mode", "geometry", "n", "mw-IPDe", "mw-ILDe", "mSI-SDR"
        );
        let mut last: Option<Option<f64>> = None;
        for r in &self.rows {
            let label = if last == Some(r.alpha) {
                String::new()
            } else {
                r.alpha.map(mode_label).unwrap_or_else(|| "all".to_string())
            };
            last = Some(r.alpha);
            let _ = writeln!(
                out,
                "{:<22} {:<10} {:>6} {:>9.3} {:>9.3} {:>9.3}",
                label,
                r.geometry_id.as_deref().unwrap_or("-"),
                r.count,
                r.mw_ipde,
                r.mw_ilde,
                r.msi_sdr
            );
        }
        out
    }
}
