//! FRF estimation at the excited bins.
//!
//! [`etfe_frf`] divides output by input spectra bin by bin. [`lpm_frf`] is
//! the Local Polynomial Method: around every excited bin `k` it fits
//!
//! ```text
//! Y[k+r] = (sum_s g_s r^s) U[k+r] + (sum_s t_s r^s),   s = 0..=R
//! ```
//!
//! over the `2n+1` nearest excited bins and keeps `G[k] = g_0`. The second
//! polynomial absorbs transient and leakage terms, which are smooth in
//! frequency, while the random-phase input decorrelates them from the FRF.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{lstsq, LstsqFit};
use crate::spectral::Spectrum;

/// Input bins weaker than this fraction of the strongest excited bin are
/// refused by the division.
pub const DIVISION_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrfMethod {
    Etfe,
    Lpm,
}

impl FrfMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FrfMethod::Etfe => "etfe",
            FrfMethod::Lpm => "lpm",
        }
    }
}

impl std::str::FromStr for FrfMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "etfe" => Ok(FrfMethod::Etfe),
            "lpm" => Ok(FrfMethod::Lpm),
            other => Err(format!(
                "unknown FRF method `{other}` (expected etfe or lpm)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrfEstimate {
    pub excited_bins: Vec<usize>,
    pub freq_hz: Vec<f64>,
    #[serde(rename = "G")]
    pub g: Vec<Complex64>,
    /// Variance of each `G` value due to noise; `None` for the plain division
    /// (period statistics supply it later).
    pub noise_variance: Option<Vec<f64>>,
    pub method: FrfMethod,
    /// Residual degrees of freedom behind `noise_variance`.
    pub dof: Option<Vec<usize>>,
}

impl FrfEstimate {
    /// Writes `freq_hz,re_G,im_G,mag_db,noise_var_db,method`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "freq_hz,re_G,im_G,mag_db,noise_var_db,method")?;
        for (i, (f, g)) in self.freq_hz.iter().zip(&self.g).enumerate() {
            let noise = match &self.noise_variance {
                Some(v) => format!("{}", power_db(v[i])),
                None => "NA".to_string(),
            };
            writeln!(
                w,
                "{},{},{},{},{},{}",
                f,
                g.re,
                g.im,
                20.0 * g.norm().log10(),
                noise,
                self.method.as_str()
            )?;
        }
        Ok(())
    }
}

/// `10 log10(v)`; zero maps to `-inf`.
pub(crate) fn power_db(v: f64) -> f64 {
    if v == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * v.log10()
    }
}

fn check_inputs(u: &Spectrum, y: &Spectrum, bins: &[usize]) -> Result<()> {
    if !u.same_grid(y) || u.len() != y.len() {
        return Err(Error::GridMismatch);
    }
    if bins.is_empty() {
        return Err(Error::LpmConfig("no excited bins".into()));
    }
    if let Some(&k) = bins.iter().find(|&&k| k == 0 || k >= u.len()) {
        return Err(Error::LpmConfig(format!(
            "excited bin {k} outside the one-sided spectrum (1..{})",
            u.len()
        )));
    }
    if bins.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::LpmConfig(
            "excited bins must be strictly increasing".into(),
        ));
    }
    Ok(())
}

fn check_division_guard(u: &Spectrum, bins: &[usize]) -> Result<()> {
    let max = bins
        .iter()
        .fold(0.0f64, |m, &k| m.max(u.coefficients[k].norm()));
    let guard = DIVISION_GUARD * max;
    match bins.iter().find(|&&k| u.coefficients[k].norm() <= guard) {
        Some(&bin) => Err(Error::WeakInputBin {
            bin,
            magnitude: u.coefficients[bin].norm(),
        }),
        None => Ok(()),
    }
}

pub fn etfe_frf(u: &Spectrum, y: &Spectrum, excited_bins: &[usize]) -> Result<FrfEstimate> {
    check_inputs(u, y, excited_bins)?;
    check_division_guard(u, excited_bins)?;
    Ok(FrfEstimate {
        excited_bins: excited_bins.to_vec(),
        freq_hz: excited_bins.iter().map(|&k| u.bin_hz(k)).collect(),
        g: excited_bins
            .iter()
            .map(|&k| y.coefficients[k] / u.coefficients[k])
            .collect(),
        noise_variance: None,
        method: FrfMethod::Etfe,
        dof: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LpmConfig {
    /// Order `R` of both local polynomials.
    pub poly_order: usize,
    /// Half width `n` of the local window; `None` picks the smallest width
    /// leaving at least [`LpmConfig::MIN_DOF`] residual degrees of freedom.
    pub half_width: Option<usize>,
}

impl Default for LpmConfig {
    fn default() -> Self {
        LpmConfig {
            poly_order: 2,
            half_width: None,
        }
    }
}

impl LpmConfig {
    pub const MIN_DOF: usize = 4;

    /// Number of complex parameters per local fit.
    pub fn num_params(&self) -> usize {
        2 * (self.poly_order + 1)
    }

    pub fn resolved_half_width(&self) -> usize {
        // smallest n with (2n + 1) - 2(R + 1) >= 4
        self.half_width.unwrap_or(self.poly_order + 3)
    }

    pub fn window_len(&self) -> usize {
        2 * self.resolved_half_width() + 1
    }

    /// Residual degrees of freedom `q`; errors if below [`Self::MIN_DOF`].
    pub fn dof(&self) -> Result<usize> {
        let w = self.window_len();
        let p = self.num_params();
        if w < p + Self::MIN_DOF {
            return Err(Error::LpmConfig(format!(
                "window of {w} bins with {p} parameters leaves fewer than {} residual dof",
                Self::MIN_DOF
            )));
        }
        Ok(w - p)
    }
}

/// Fits the local model on one window. `offsets` are the frequency offsets
/// `r` (in bins) of the window rows relative to the expansion point.
pub(crate) fn local_fit(
    u: &[Complex64],
    y: &[Complex64],
    offsets: &[f64],
    poly_order: usize,
) -> Option<LstsqFit> {
    let mut columns = Vec::with_capacity(2 * (poly_order + 1));
    for s in 0..=poly_order {
        columns.push(
            u.iter()
                .zip(offsets)
                .map(|(uk, r)| uk * r.powi(s as i32))
                .collect(),
        );
    }
    for s in 0..=poly_order {
        columns.push(
            offsets
                .iter()
                .map(|r| Complex64::new(r.powi(s as i32), 0.0))
                .collect(),
        );
    }
    lstsq(&columns, y)
}

/// First window index for excited-bin position `j`: centred where possible,
/// shifted inward at the band edges so every window has the same length.
fn window_start(j: usize, half_width: usize, count: usize, len: usize) -> usize {
    j.saturating_sub(half_width).min(count - len)
}

pub fn lpm_frf(
    u: &Spectrum,
    y: &Spectrum,
    excited_bins: &[usize],
    config: &LpmConfig,
) -> Result<FrfEstimate> {
    lpm_frf_with(u, y, excited_bins, config, Exec::default())
}

pub fn lpm_frf_with(
    u: &Spectrum,
    y: &Spectrum,
    excited_bins: &[usize],
    config: &LpmConfig,
    exec: Exec,
) -> Result<FrfEstimate> {
    check_inputs(u, y, excited_bins)?;
    let q = config.dof()?;
    let len = config.window_len();
    let count = excited_bins.len();
    if count < len {
        return Err(Error::LpmConfig(format!(
            "{count} excited bins cannot fill a {len}-bin window"
        )));
    }
    let half = config.resolved_half_width();
    let fits = exec.try_map(count, |j| {
        let k = excited_bins[j];
        let start = window_start(j, half, count, len);
        let window = &excited_bins[start..start + len];
        let uw: Vec<Complex64> = window.iter().map(|&b| u.coefficients[b]).collect();
        let yw: Vec<Complex64> = window.iter().map(|&b| y.coefficients[b]).collect();
        let offsets: Vec<f64> = window.iter().map(|&b| b as f64 - k as f64).collect();
        let fit = local_fit(&uw, &yw, &offsets, config.poly_order)
            .ok_or(Error::RankDeficient { bin: k })?;
        let sigma2 = fit.rss / q as f64;
        Ok::<_, Error>((fit.x[0], sigma2 * fit.inv_gram_00))
    })?;
    let (g, noise): (Vec<_>, Vec<_>) = fits.into_iter().unzip();
    Ok(FrfEstimate {
        excited_bins: excited_bins.to_vec(),
        freq_hz: excited_bins.iter().map(|&k| u.bin_hz(k)).collect(),
        g,
        noise_variance: Some(noise),
        method: FrfMethod::Lpm,
        dof: Some(vec![q; count]),
    })
}
