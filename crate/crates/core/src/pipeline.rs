//! Records in, BLA out: segmentation, mean removal, spectra, per-period
//! division, optional LPM on period-averaged spectra, robust statistics and
//! summary metrics.

use serde::{Deserialize, Serialize};

use crate::bla::{median, nl_output_fraction, robust_bla, variance_to_db, BlaResult, PlottedCurve};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frf::{etfe_frf, lpm_frf_with, power_db, FrfEstimate, FrfMethod, LpmConfig};
use crate::record::{
    drift_metric, remove_mean, segment_periods, DriftReport, MeasurementRecord,
    DEFAULT_DRIFT_THRESHOLD,
};
use crate::signal::DesignFile;
use crate::spectral::{average_spectra, spectra_of_block_with};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub method: FrfMethod,
    pub lpm: LpmConfig,
    pub drift_threshold: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            method: FrfMethod::Lpm,
            lpm: LpmConfig::default(),
            drift_threshold: DEFAULT_DRIFT_THRESHOLD,
            exec: Exec::default(),
        }
    }
}

/// Raw periods of one record after the prefix, kept for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordPeriods {
    pub realization_index: usize,
    pub sample_rate_hz: f64,
    pub dropped_trailing: usize,
    pub mean_load: f64,
    pub mean_indentation: f64,
    pub load: Vec<Vec<f64>>,
    pub indentation: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub plotted: PlottedCurve,
    /// Median over excited bins of the plotted FRF magnitude.
    pub median_frf_mag_db: f64,
    /// Median of `20 log10|G_bla| - 10 log10(var_noise)`.
    pub noise_gap_db: Option<f64>,
    /// Median of `20 log10|G_bla| - 10 log10(var_total)`.
    pub total_gap_db: Option<f64>,
    /// Median of `sqrt(var_total) / |G_bla|`.
    pub nl_output_fraction: Option<f64>,
    /// Fraction implied by noise alone, `sqrt(var_noise) / |G_bla|`.
    pub noise_fraction: Option<f64>,
    /// Same gap using the LPM noise variance, when LPM ran.
    pub lpm_noise_gap_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub options: AnalysisOptions,
    pub design: DesignFile,
    pub bla: BlaResult,
    pub summary: Summary,
    pub drift: DriftReport,
    pub records: Vec<RecordPeriods>,
}

impl Analysis {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Plotted FRF as an exportable estimate; noise variance is the one that
    /// belongs to the plotted curve.
    pub fn plotted_frf(&self) -> FrfEstimate {
        let bla = &self.bla;
        match (&bla.plotted, &bla.lpm) {
            (PlottedCurve::Lpm, Some(lpm)) => FrfEstimate {
                excited_bins: bla.excited_bins.clone(),
                freq_hz: bla.freq_hz.clone(),
                g: lpm.g.clone(),
                noise_variance: Some(lpm.noise_variance.clone()),
                method: FrfMethod::Lpm,
                dof: lpm.per_realization.first().and_then(|e| e.dof.clone()),
            },
            _ => FrfEstimate {
                excited_bins: bla.excited_bins.clone(),
                freq_hz: bla.freq_hz.clone(),
                g: bla.g_bla.clone(),
                noise_variance: bla.var_noise.clone(),
                method: FrfMethod::Etfe,
                dof: bla.dof_noise.map(|d| vec![d; bla.excited_bins.len()]),
            },
        }
    }
}

fn check_against_design(record: &MeasurementRecord, design: &DesignFile) -> Result<()> {
    let spec = &design.spec;
    let meta = &record.metadata;
    let factor = spec.upsample_factor;
    let rate = spec.acquisition_rate_hz();
    if ((meta.sample_rate_hz - rate) / rate).abs() > 1e-9 {
        return Err(Error::Metadata(format!(
            "record sampled at {} Hz, design implies {} Hz",
            meta.sample_rate_hz, rate
        )));
    }
    if meta.samples_per_period != spec.samples_per_period * factor {
        return Err(Error::Metadata(format!(
            "record period of {} samples, design implies {}",
            meta.samples_per_period,
            spec.samples_per_period * factor
        )));
    }
    if meta.prefix_samples != spec.prefix_samples * factor {
        return Err(Error::Metadata(format!(
            "record prefix of {} samples, design implies {}",
            meta.prefix_samples,
            spec.prefix_samples * factor
        )));
    }
    if meta.realization_index >= spec.num_realizations {
        return Err(Error::Metadata(format!(
            "record realization {} not in design ({} realizations)",
            meta.realization_index, spec.num_realizations
        )));
    }
    Ok(())
}

struct PerRecord {
    periods: RecordPeriods,
    etfe: Vec<FrfEstimate>,
    lpm: Option<FrfEstimate>,
}

fn process_record(
    record: &MeasurementRecord,
    bins: &[usize],
    options: &AnalysisOptions,
) -> Result<PerRecord> {
    let segmented = segment_periods(record)?;
    let centered = remove_mean(&segmented.block);
    let fs = record.metadata.sample_rate_hz;
    let spectra = spectra_of_block_with(&centered.block, fs, options.exec);
    let etfe = spectra
        .u
        .iter()
        .zip(&spectra.y)
        .map(|(u, y)| etfe_frf(u, y, bins))
        .collect::<Result<Vec<_>>>()?;
    let lpm = match options.method {
        FrfMethod::Etfe => None,
        FrfMethod::Lpm => {
            let u = average_spectra(&spectra.u)?.mean;
            let y = average_spectra(&spectra.y)?.mean;
            Some(lpm_frf_with(&u, &y, bins, &options.lpm, options.exec)?)
        }
    };
    Ok(PerRecord {
        periods: RecordPeriods {
            realization_index: record.metadata.realization_index,
            sample_rate_hz: fs,
            dropped_trailing: segmented.dropped_trailing,
            mean_load: centered.mean_u,
            mean_indentation: centered.mean_y,
            load: segmented.block.periods_u,
            indentation: segmented.block.periods_y,
        },
        etfe,
        lpm,
    })
}

/// Per-record work (segmentation through FRFs) without the summary layer.
/// Returns the BLA only; used by batch studies that need nothing else.
pub fn estimate_bla(
    records: &[MeasurementRecord],
    design: &DesignFile,
    options: &AnalysisOptions,
) -> Result<BlaResult> {
    Ok(run(records, design, options)?.0)
}

fn run(
    records: &[MeasurementRecord],
    design: &DesignFile,
    options: &AnalysisOptions,
) -> Result<(BlaResult, Vec<RecordPeriods>)> {
    if records.is_empty() {
        return Err(Error::BlaInput("no records to analyze".into()));
    }
    design.validate()?;
    for r in records {
        check_against_design(r, design)?;
    }
    let bins = &design.excited_bins;
    let per_record = records
        .iter()
        .map(|r| process_record(r, bins, options))
        .collect::<Result<Vec<_>>>()?;
    let etfe: Vec<Vec<FrfEstimate>> = per_record.iter().map(|r| r.etfe.clone()).collect();
    let mut bla = robust_bla(&etfe)?;
    if options.method == FrfMethod::Lpm {
        let lpm: Vec<FrfEstimate> = per_record.iter().filter_map(|r| r.lpm.clone()).collect();
        bla = bla.with_lpm(options.lpm, lpm)?;
    }
    Ok((bla, per_record.into_iter().map(|r| r.periods).collect()))
}

fn median_gap(bla: &BlaResult, variance: &[f64]) -> f64 {
    let mut gaps: Vec<f64> = bla
        .g_bla
        .iter()
        .zip(variance)
        .map(|(g, &v)| 20.0 * g.norm().log10() - power_db(v))
        .collect();
    median(&mut gaps)
}

fn median_ratio(bla: &BlaResult, variance: &[f64]) -> f64 {
    let mut r: Vec<f64> = bla
        .g_bla
        .iter()
        .zip(variance)
        .map(|(g, &v)| v.sqrt() / g.norm())
        .collect();
    median(&mut r)
}

pub fn summarize(bla: &BlaResult) -> Summary {
    let mut mag = variance_to_db(bla).mag_db;
    Summary {
        plotted: bla.plotted,
        median_frf_mag_db: median(&mut mag),
        noise_gap_db: bla.var_noise.as_ref().map(|v| median_gap(bla, v)),
        total_gap_db: bla.var_total.as_ref().map(|v| median_gap(bla, v)),
        nl_output_fraction: nl_output_fraction(bla).ok().map(|f| f.median),
        noise_fraction: bla.var_noise.as_ref().map(|v| median_ratio(bla, v)),
        lpm_noise_gap_db: bla.lpm.as_ref().map(|l| median_gap(bla, &l.noise_variance)),
    }
}

pub fn analyze(
    records: &[MeasurementRecord],
    design: &DesignFile,
    options: &AnalysisOptions,
) -> Result<Analysis> {
    let (bla, periods) = run(records, design, options)?;
    let drift = drift_metric(records, options.drift_threshold)?;
    Ok(Analysis {
        options: *options,
        design: design.clone(),
        summary: summarize(&bla),
        bla,
        drift,
        records: periods,
    })
}
