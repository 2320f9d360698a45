//! Best linear approximation from `M` phase realizations of `P` periods.
//!
//! For every excited bin, with `G[m][p]` the FRF of period `p` of
//! realization `m`:
//!
//! ```text
//! G_m        = (1/P) sum_p G[m][p]
//! s2_m       = 1/(P(P-1)) sum_p |G[m][p] - G_m|^2       noise, per realization
//! G_bla      = (1/M) sum_m G_m
//! var_total  = 1/(M(M-1)) sum_m |G_m - G_bla|^2         noise + nonlinear
//! var_noise  = (1/M^2) sum_m s2_m
//! var_nl     = max(0, var_total - var_noise)
//! ```
//!
//! All variances are variances of the `G_bla` estimate. Noise statistics need
//! `P >= 2` and the total variance needs `M >= 2`; otherwise the curve is
//! `None` rather than zero.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frf::{power_db, FrfEstimate, LpmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlottedCurve {
    /// `G_bla` from the period/realization means of the divided spectra.
    Robust,
    /// Realization mean of LPM estimates on period-averaged spectra.
    Lpm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpmCurve {
    pub config: LpmConfig,
    #[serde(rename = "G")]
    pub g: Vec<Complex64>,
    /// `(1/M^2) sum_m var_m`, the noise variance of the realization mean.
    pub noise_variance: Vec<f64>,
    pub per_realization: Vec<FrfEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlaResult {
    pub excited_bins: Vec<usize>,
    pub freq_hz: Vec<f64>,
    #[serde(rename = "G_bla")]
    pub g_bla: Vec<Complex64>,
    pub var_noise: Option<Vec<f64>>,
    pub var_total: Option<Vec<f64>>,
    pub var_nl: Option<Vec<f64>>,
    /// `var_total - var_noise` before clamping; may be negative.
    pub var_nl_raw: Option<Vec<f64>>,
    pub periods: usize,
    pub realizations: usize,
    /// `M (P - 1)`.
    pub dof_noise: Option<usize>,
    /// `M - 1`.
    pub dof_total: Option<usize>,
    /// `G_m`, one row per realization.
    pub realization_frfs: Vec<Vec<Complex64>>,
    /// `G[m][p]`, kept for audit.
    pub period_frfs: Vec<Vec<Vec<Complex64>>>,
    pub lpm: Option<LpmCurve>,
    pub plotted: PlottedCurve,
}

pub fn robust_bla(per_realization: &[Vec<FrfEstimate>]) -> Result<BlaResult> {
    let m = per_realization.len();
    if m == 0 {
        return Err(Error::BlaInput("no realizations".into()));
    }
    let p = per_realization[0].len();
    if p == 0 {
        return Err(Error::BlaInput("no periods".into()));
    }
    if per_realization.iter().any(|r| r.len() != p) {
        return Err(Error::BlaInput(
            "every realization must contribute the same number of periods".into(),
        ));
    }
    let reference = &per_realization[0][0];
    let bins = &reference.excited_bins;
    for est in per_realization.iter().flatten() {
        if est.excited_bins != *bins
            || est.freq_hz != reference.freq_hz
            || est.g.len() != bins.len()
        {
            return Err(Error::GridMismatch);
        }
    }
    let values: Vec<Vec<Vec<Complex64>>> = per_realization
        .iter()
        .map(|r| r.iter().map(|e| e.g.clone()).collect())
        .collect();
    Ok(robust_bla_values(
        bins.clone(),
        reference.freq_hz.clone(),
        values,
    ))
}

/// Same as [`robust_bla`] on raw `values[m][p][bin]`; shapes must already be
/// consistent and non-empty.
pub fn robust_bla_values(
    excited_bins: Vec<usize>,
    freq_hz: Vec<f64>,
    values: Vec<Vec<Vec<Complex64>>>,
) -> BlaResult {
    let m = values.len();
    let p = values[0].len();
    let nbins = excited_bins.len();
    let mf = m as f64;
    let pf = p as f64;

    let realization_frfs: Vec<Vec<Complex64>> = values
        .iter()
        .map(|periods| {
            (0..nbins)
                .map(|k| periods.iter().map(|g| g[k]).sum::<Complex64>() / pf)
                .collect()
        })
        .collect();
    let g_bla: Vec<Complex64> = (0..nbins)
        .map(|k| realization_frfs.iter().map(|g| g[k]).sum::<Complex64>() / mf)
        .collect();

    let var_noise = (p >= 2).then(|| {
        (0..nbins)
            .map(|k| {
                let per_real: f64 = values
                    .iter()
                    .zip(&realization_frfs)
                    .map(|(periods, mean)| {
                        periods
                            .iter()
                            .map(|g| (g[k] - mean[k]).norm_sqr())
                            .sum::<f64>()
                            / (pf * (pf - 1.0))
                    })
                    .sum();
                per_real / (mf * mf)
            })
            .collect::<Vec<f64>>()
    });
    let var_total = (m >= 2).then(|| {
        (0..nbins)
            .map(|k| {
                realization_frfs
                    .iter()
                    .map(|g| (g[k] - g_bla[k]).norm_sqr())
                    .sum::<f64>()
                    / (mf * (mf - 1.0))
            })
            .collect::<Vec<f64>>()
    });
    let var_nl_raw = match (&var_total, &var_noise) {
        (Some(t), Some(n)) => Some(t.iter().zip(n).map(|(t, n)| t - n).collect::<Vec<f64>>()),
        _ => None,
    };
    let var_nl = var_nl_raw
        .as_ref()
        .map(|raw| raw.iter().map(|d| d.max(0.0)).collect());

    BlaResult {
        excited_bins,
        freq_hz,
        g_bla,
        var_noise,
        var_total,
        var_nl,
        var_nl_raw,
        periods: p,
        realizations: m,
        dof_noise: (p >= 2).then_some(m * (p - 1)),
        dof_total: (m >= 2).then_some(m - 1),
        realization_frfs,
        period_frfs: values,
        lpm: None,
        plotted: PlottedCurve::Robust,
    }
}

impl BlaResult {
    /// Attaches LPM estimates (one per realization) and plots them.
    pub fn with_lpm(mut self, config: LpmConfig, estimates: Vec<FrfEstimate>) -> Result<Self> {
        if estimates.len() != self.realizations {
            return Err(Error::BlaInput(format!(
                "{} LPM estimates for {} realizations",
                estimates.len(),
                self.realizations
            )));
        }
        if estimates
            .iter()
            .any(|e| e.excited_bins != self.excited_bins)
        {
            return Err(Error::GridMismatch);
        }
        let mf = estimates.len() as f64;
        let nbins = self.excited_bins.len();
        let g = (0..nbins)
            .map(|k| estimates.iter().map(|e| e.g[k]).sum::<Complex64>() / mf)
            .collect();
        let noise_variance = (0..nbins)
            .map(|k| {
                estimates
                    .iter()
                    .map(|e| e.noise_variance.as_ref().map_or(0.0, |v| v[k]))
                    .sum::<f64>()
                    / (mf * mf)
            })
            .collect();
        self.lpm = Some(LpmCurve {
            config,
            g,
            noise_variance,
            per_realization: estimates,
        });
        self.plotted = PlottedCurve::Lpm;
        Ok(self)
    }

    /// The FRF curve named by [`BlaResult::plotted`].
    pub fn plotted_g(&self) -> &[Complex64] {
        match (&self.plotted, &self.lpm) {
            (PlottedCurve::Lpm, Some(lpm)) => &lpm.g,
            _ => &self.g_bla,
        }
    }

    /// Writes `freq_hz,mag_db,noise_var_db,total_var_db,nl_var_db,dof_noise,dof_total`.
    /// Unavailable values are written as `NA`, zero variances as `-inf`.
    pub fn write_curves_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let db = variance_to_db(self);
        writeln!(
            w,
            "freq_hz,mag_db,noise_var_db,total_var_db,nl_var_db,dof_noise,dof_total"
        )?;
        let cell = |c: &Option<Vec<f64>>, k: usize| match c {
            Some(v) => format!("{}", v[k]),
            None => "NA".to_string(),
        };
        let dof = |d: Option<usize>| d.map_or("NA".to_string(), |d| d.to_string());
        for k in 0..self.excited_bins.len() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                self.freq_hz[k],
                db.mag_db[k],
                cell(&db.noise_db, k),
                cell(&db.total_db, k),
                cell(&db.nl_db, k),
                dof(self.dof_noise),
                dof(self.dof_total)
            )?;
        }
        Ok(())
    }
}

/// Per-bin curves in dB. Zero variances are `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct DbCurves {
    pub mag_db: Vec<f64>,
    pub noise_db: Option<Vec<f64>>,
    pub total_db: Option<Vec<f64>>,
    pub nl_db: Option<Vec<f64>>,
}

/// Sentinel for `10 log10(0)`.
pub const ZERO_VARIANCE_DB: f64 = f64::NEG_INFINITY;

pub fn variance_to_db(result: &BlaResult) -> DbCurves {
    let to_db = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v.iter().map(|&x| power_db(x)).collect());
    DbCurves {
        mag_db: result
            .plotted_g()
            .iter()
            .map(|g| 20.0 * g.norm().log10())
            .collect(),
        noise_db: to_db(&result.var_noise),
        total_db: to_db(&result.var_total),
        nl_db: to_db(&result.var_nl),
    }
}

/// Bins with `|G_bla|` at or below this fraction of the largest magnitude are
/// left out of the fraction summary.
pub const FRACTION_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlFraction {
    /// `sqrt(var_total) / |G_bla|`; `None` for excluded bins.
    pub per_bin: Vec<Option<f64>>,
    /// Median over the retained bins.
    pub median: f64,
    pub excluded_bins: Vec<usize>,
}

/// Distortion level relative to the BLA, as seen at the output.
pub fn nl_output_fraction(result: &BlaResult) -> Result<NlFraction> {
    let total = result.var_total.as_ref().ok_or_else(|| {
        Error::UndefinedMetric("total variance needs at least two realizations".into())
    })?;
    let max = result.g_bla.iter().fold(0.0f64, |m, g| m.max(g.norm()));
    let mut excluded_bins = Vec::new();
    let per_bin: Vec<Option<f64>> = result
        .g_bla
        .iter()
        .zip(total)
        .zip(&result.excited_bins)
        .map(|((g, v), &bin)| {
            let mag = g.norm();
            if mag <= FRACTION_GUARD * max || mag == 0.0 {
                excluded_bins.push(bin);
                None
            } else {
                Some(v.sqrt() / mag)
            }
        })
        .collect();
    let mut retained: Vec<f64> = per_bin.iter().flatten().copied().collect();
    if retained.is_empty() {
        return Err(Error::UndefinedMetric(
            "every bin has a vanishing BLA".into(),
        ));
    }
    Ok(NlFraction {
        median: median(&mut retained),
        per_bin,
        excluded_bins,
    })
}

/// Median; mean of the two middle values for even lengths. NaNs sort last.
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
