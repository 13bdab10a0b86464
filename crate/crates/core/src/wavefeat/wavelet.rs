//! Orthogonal multilevel DWT with periodized boundaries.
//!
//! Inputs whose length is not a multiple of `2^level` are symmetric-padded
//! before analysis; synthesis truncates back to the requested length.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletBasis {
    #[default]
    Haar,
    /// Daubechies, two vanishing moments (4 taps).
    Db2,
}

impl WaveletBasis {
    fn lowpass(self) -> Vec<f64> {
        match self {
            WaveletBasis::Haar => vec![1.0 / SQRT_2, 1.0 / SQRT_2],
            WaveletBasis::Db2 => {
                let s3 = 3f64.sqrt();
                let d = 4.0 * SQRT_2;
                vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
            }
        }
    }

    /// Quadrature mirror of the low-pass filter: `hi[n] = (-1)^n lo[K-1-n]`.
    fn highpass(self) -> Vec<f64> {
        let lo = self.lowpass();
        let k = lo.len();
        (0..k)
            .map(|n| if n % 2 == 0 { lo[k - 1 - n] } else { -lo[k - 1 - n] })
            .collect()
    }
}

impl std::str::FromStr for WaveletBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" => Ok(WaveletBasis::Haar),
            "db2" => Ok(WaveletBasis::Db2),
            other => Err(Error::Invalid(format!("unsupported wavelet basis `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveletConfig {
    pub basis: WaveletBasis,
    pub level: usize,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        Self {
            basis: WaveletBasis::Haar,
            level: 2,
        }
    }
}

impl WaveletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.level) {
            return Err(Error::Invalid(format!("wavelet level must be in 1..=16, got {}", self.level)));
        }
        Ok(())
    }
}

/// Index into a half-sample symmetric extension of a length-`n` signal.
fn mirror(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let r = i % period;
    if r < n {
        r
    } else {
        period - 1 - r
    }
}

fn padded_len(n: usize, level: usize) -> usize {
    let block = 1usize << level;
    n.div_ceil(block) * block
}

fn analyze(x: &[f64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let len = x.len();
    let half = len / 2;
    let mut approx = vec![0.0; half];
    let mut detail = vec![0.0; half];
    for k in 0..half {
        for (tap, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            let v = x[(2 * k + tap) % len];
            approx[k] += l * v;
            detail[k] += h * v;
        }
    }
    (approx, detail)
}

fn synthesize(approx: &[f64], detail: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let len = 2 * approx.len();
    let mut x = vec![0.0; len];
    for k in 0..approx.len() {
        for (tap, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            x[(2 * k + tap) % len] += l * approx[k] + h * detail[k];
        }
    }
    x
}

/// Multilevel decomposition `[C_0, C_1, …, C_j]`: `C_0` is the coarsest
/// approximation, `C_1` the coarsest detail and `C_j` the finest detail.
pub fn dwt(x: &[f64], cfg: &WaveletConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::Invalid("cannot transform an empty sequence".into()));
    }
    let (lo, hi) = (cfg.basis.lowpass(), cfg.basis.highpass());
    let padded = padded_len(x.len(), cfg.level);
    let mut approx: Vec<f64> = (0..padded).map(|i| x[mirror(i, x.len())]).collect();
    let mut details = Vec::with_capacity(cfg.level);
    for _ in 0..cfg.level {
        let (a, d) = analyze(&approx, &lo, &hi);
        details.push(d);
        approx = a;
    }
    let mut coeffs = vec![approx];
    coeffs.extend(details.into_iter().rev());
    Ok(coeffs)
}

/// Inverse of [`dwt`], truncated to `len` samples.
pub fn iwt(coeffs: &[Vec<f64>], cfg: &WaveletConfig, len: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    if coeffs.len() != cfg.level + 1 {
        return Err(Error::Invalid(format!(
            "expected {} coefficient bands, got {}",
            cfg.level + 1,
            coeffs.len()
        )));
    }
    let (lo, hi) = (cfg.basis.lowpass(), cfg.basis.highpass());
    let mut approx = coeffs[0].clone();
    for detail in &coeffs[1..] {
        if detail.len() != approx.len() {
            return Err(Error::Invalid("coefficient band lengths are inconsistent".into()));
        }
        approx = synthesize(&approx, detail, &lo, &hi);
    }
    if len > approx.len() {
        return Err(Error::Invalid(format!("cannot truncate {} samples to {len}", approx.len())));
    }
    approx.truncate(len);
    Ok(approx)
}

/// Low-frequency part (details zeroed) and high-frequency part
/// (approximation zeroed), both with the input's length.
pub fn split_low_high(x: &[f64], cfg: &WaveletConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let coeffs = dwt(x, cfg)?;
    let mut low = coeffs.clone();
    for band in &mut low[1..] {
        band.fill(0.0);
    }
    let mut high = coeffs;
    high[0].fill(0.0);
    Ok((iwt(&low, cfg, x.len())?, iwt(&high, cfg, x.len())?))
}
