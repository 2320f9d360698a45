//! One-sided DFT of real periods with `1/N` forward scaling, so a cosine of
//! amplitude `A` at bin `k` reads `|X[k]| = A/2`.

use std::cell::RefCell;
use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::record::PeriodBlock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `X[k] = (1/N) sum_n x[n] exp(-j 2 pi k n / N)`
    InverseN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Bins `0..=N/2`.
    pub coefficients: Vec<Complex64>,
    /// Length of the transformed period.
    pub period_len: usize,
    pub sample_rate_hz: f64,
    pub scaling: Scaling,
}

impl Spectrum {
    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate_hz / self.period_len as f64
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn same_grid(&self, other: &Spectrum) -> bool {
        self.period_len == other.period_len
            && self.sample_rate_hz == other.sample_rate_hz
            && self.scaling == other.scaling
    }

    /// Writes `bin,freq_hz,re,im`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin,freq_hz,re,im")?;
        for (k, c) in self.coefficients.iter().enumerate() {
            writeln!(w, "{},{},{},{}", k, self.bin_hz(k), c.re, c.im)?;
        }
        Ok(())
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn dft_period(samples: &[f64], sample_rate_hz: f64) -> Spectrum {
    let n = samples.len();
    assert!(n > 0, "cannot transform an empty period");
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    fft.process(&mut buf);
    let scale = 1.0 / n as f64;
    let mut coefficients: Vec<Complex64> = buf[..n / 2 + 1].iter().map(|c| c * scale).collect();
    coefficients[0].im = 0.0;
    if n.is_multiple_of(2) {
        coefficients[n / 2].im = 0.0;
    }
    Spectrum {
        coefficients,
        period_len: n,
        sample_rate_hz,
        scaling: Scaling::InverseN,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpectra {
    pub u: Vec<Spectrum>,
    pub y: Vec<Spectrum>,
}

pub fn spectra_of_block(block: &PeriodBlock, sample_rate_hz: f64) -> BlockSpectra {
    spectra_of_block_with(block, sample_rate_hz, Exec::default())
}

pub fn spectra_of_block_with(block: &PeriodBlock, sample_rate_hz: f64, exec: Exec) -> BlockSpectra {
    let p = block.num_periods();
    // Interleave channels so both halves of the work are spread over the pool.
    let mut all = exec.map(2 * p, |i| {
        let rows = if i < p {
            &block.periods_u
        } else {
            &block.periods_y
        };
        dft_period(&rows[i % p], sample_rate_hz)
    });
    let y = all.split_off(p);
    BlockSpectra { u: all, y }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedSpectrum {
    pub mean: Spectrum,
    /// `(1/(P-1)) sum_p |X_p - mean|^2`; `None` when `P < 2`.
    pub variance: Option<Vec<f64>>,
    pub count: usize,
}

pub fn average_spectra(spectra: &[Spectrum]) -> Result<AveragedSpectrum> {
    let first = spectra
        .first()
        .ok_or_else(|| Error::BlaInput("no spectra to average".into()))?;
    if spectra
        .iter()
        .any(|s| !s.same_grid(first) || s.len() != first.len())
    {
        return Err(Error::GridMismatch);
    }
    let p = spectra.len();
    let mean: Vec<Complex64> = (0..first.len())
        .map(|k| spectra.iter().map(|s| s.coefficients[k]).sum::<Complex64>() / p as f64)
        .collect();
    let variance = (p >= 2).then(|| {
        mean.iter()
            .enumerate()
            .map(|(k, m)| {
                spectra
                    .iter()
                    .map(|s| (s.coefficients[k] - m).norm_sqr())
                    .sum::<f64>()
                    / (p - 1) as f64
            })
            .collect()
    });
    Ok(AveragedSpectrum {
        mean: Spectrum {
            coefficients: mean,
            ..first.clone()
        },
        variance,
        count: p,
    })
}
