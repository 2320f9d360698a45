//! Random-phase multisine excitation.
//!
//! One period at the reference rate is
//!
//! ```text
//! r[n] = sum_{k in K} A cos(2 pi k n / N + phi_k),   n = 0..N-1
//! ```
//!
//! where `K` is the set of DFT bins inside `[f_min, f_max]` (rounded inward)
//! and the phases are i.i.d. uniform on `[0, 2 pi)`. The applied sequence is
//! the last `prefix_samples` of the period followed by the period itself, and
//! is then held for `upsample_factor` acquisition samples each.
//!
//! Phases come from ChaCha20 seeded with `seed` and switched to stream
//! `realization_index`, so every realization is an independent, reproducible
//! stream.

use std::f64::consts::TAU;
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultisineSpec {
    pub reference_rate_hz: f64,
    pub samples_per_period: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    /// Cosine amplitude of every excited tone, in reference units.
    pub amplitude: f64,
    pub num_realizations: usize,
    pub seed: u64,
    pub prefix_samples: usize,
    pub upsample_factor: usize,
}

impl MultisineSpec {
    /// 31.25 Hz, 400 samples, [0.06, 1] Hz, 0.02 per tone, 100-sample prefix,
    /// x32 hold to 1 kHz.
    pub fn nanoindentation_default(num_realizations: usize, seed: u64) -> Self {
        MultisineSpec {
            reference_rate_hz: 31.25,
            samples_per_period: 400,
            f_min_hz: 0.06,
            f_max_hz: 1.0,
            amplitude: 0.02,
            num_realizations,
            seed,
            prefix_samples: 100,
            upsample_factor: 32,
        }
    }

    pub fn resolution_hz(&self) -> f64 {
        self.reference_rate_hz / self.samples_per_period as f64
    }

    pub fn acquisition_rate_hz(&self) -> f64 {
        self.reference_rate_hz * self.upsample_factor as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDesign(msg));
        if !(self.reference_rate_hz.is_finite() && self.reference_rate_hz > 0.0) {
            return bad(format!(
                "reference rate must be positive, got {}",
                self.reference_rate_hz
            ));
        }
        if self.samples_per_period == 0 {
            return bad("samples per period must be positive".into());
        }
        if !(self.f_min_hz.is_finite() && self.f_max_hz.is_finite()) {
            return bad("band edges must be finite".into());
        }
        if self.f_min_hz <= 0.0 || self.f_min_hz > self.f_max_hz {
            return bad(format!(
                "band edges must satisfy 0 < f_min <= f_max, got [{}, {}]",
                self.f_min_hz, self.f_max_hz
            ));
        }
        if self.f_max_hz >= self.reference_rate_hz / 2.0 {
            return bad(format!(
                "f_max {} Hz must be below the Nyquist frequency {} Hz",
                self.f_max_hz,
                self.reference_rate_hz / 2.0
            ));
        }
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return bad(format!(
                "amplitude must be positive, got {}",
                self.amplitude
            ));
        }
        if self.num_realizations == 0 {
            return bad("at least one realization is required".into());
        }
        if self.prefix_samples >= self.samples_per_period {
            return bad(format!(
                "prefix ({}) must be shorter than a period ({})",
                self.prefix_samples, self.samples_per_period
            ));
        }
        if self.upsample_factor == 0 {
            return bad("upsample factor must be at least 1".into());
        }
        Ok(())
    }
}

/// Bins `k` with `k f0` inside `[f_min, f_max]`, strictly between DC and
/// Nyquist.
pub fn select_excited_bins(spec: &MultisineSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let f0 = spec.resolution_hz();
    let n = spec.samples_per_period;
    // Ratios that land on an integer up to rounding noise are snapped so that a
    // band edge placed exactly on a bin keeps that bin.
    let snap = |x: f64| {
        let r = x.round();
        if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
            r
        } else {
            x
        }
    };
    let lo = snap(spec.f_min_hz / f0).ceil().max(1.0) as usize;
    let hi_f = snap(spec.f_max_hz / f0).floor();
    // Strictly below Nyquist: k < N/2.
    let hi = if hi_f < 0.0 {
        0
    } else {
        (hi_f as usize).min((n - 1) / 2)
    };
    if lo > hi {
        return Err(Error::EmptyBand {
            f_min_hz: spec.f_min_hz,
            f_max_hz: spec.f_max_hz,
            resolution_hz: f0,
        });
    }
    Ok((lo..=hi).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSignal {
    pub spec: MultisineSpec,
    pub realization_index: usize,
    pub excited_bins: Vec<usize>,
    /// One phase per excited bin, in `[0, 2 pi)`.
    pub phases: Vec<f64>,
    /// Prefix followed by one period, at the reference rate.
    pub reference_samples: Vec<f64>,
    /// `reference_samples` held for `upsample_factor` samples each.
    pub upsampled_samples: Vec<f64>,
}

impl ExcitationSignal {
    /// Builds the signal from explicit phases (e.g. read back from a design
    /// file).
    pub fn from_phases(
        spec: &MultisineSpec,
        realization_index: usize,
        phases: Vec<f64>,
    ) -> Result<Self> {
        let excited_bins = select_excited_bins(spec)?;
        if realization_index >= spec.num_realizations {
            return Err(Error::RealizationOutOfRange {
                index: realization_index,
                count: spec.num_realizations,
            });
        }
        if phases.len() != excited_bins.len() {
            return Err(Error::InvalidDesign(format!(
                "{} phases supplied for {} excited bins",
                phases.len(),
                excited_bins.len()
            )));
        }
        let period = multisine_period(
            spec.samples_per_period,
            &excited_bins,
            &phases,
            spec.amplitude,
        );
        let reference_samples = with_prefix(&period, spec.prefix_samples);
        let upsampled_samples = zoh_upsample(&reference_samples, spec.upsample_factor);
        Ok(ExcitationSignal {
            spec: spec.clone(),
            realization_index,
            excited_bins,
            phases,
            reference_samples,
            upsampled_samples,
        })
    }

    /// The steady-state period (reference samples after the prefix).
    pub fn period(&self) -> &[f64] {
        &self.reference_samples[self.spec.prefix_samples..]
    }
}

/// Draws the phases of realization `realization_index` for `count` tones.
pub fn draw_phases(seed: u64, realization_index: usize, count: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(realization_index as u64);
    let dist = Uniform::new(0.0, TAU).expect("valid phase range");
    (0..count).map(|_| dist.sample(&mut rng)).collect()
}

pub fn generate_multisine(
    spec: &MultisineSpec,
    realization_index: usize,
) -> Result<ExcitationSignal> {
    let bins = select_excited_bins(spec)?;
    if realization_index >= spec.num_realizations {
        return Err(Error::RealizationOutOfRange {
            index: realization_index,
            count: spec.num_realizations,
        });
    }
    let phases = draw_phases(spec.seed, realization_index, bins.len());
    ExcitationSignal::from_phases(spec, realization_index, phases)
}

/// Evaluates one period of the multisine. The argument `k n mod N` is reduced
/// in integers so long periods keep full phase accuracy.
pub fn multisine_period(n: usize, bins: &[usize], phases: &[f64], amplitude: f64) -> Vec<f64> {
    let nf = n as f64;
    (0..n)
        .map(|i| {
            bins.iter()
                .zip(phases)
                .map(|(&k, &phi)| {
                    let m = ((k as u128 * i as u128) % n as u128) as f64;
                    amplitude * (TAU * m / nf + phi).cos()
                })
                .sum()
        })
        .collect()
}

/// Prepends the last `prefix` samples of `period`.
pub fn with_prefix(period: &[f64], prefix: usize) -> Vec<f64> {
    let n = period.len();
    let mut out = Vec::with_capacity(prefix + n);
    out.extend_from_slice(&period[n - prefix..]);
    out.extend_from_slice(period);
    out
}

/// Zero-order hold: every sample repeated `factor` times.
pub fn zoh_upsample(samples: &[f64], factor: usize) -> Vec<f64> {
    assert!(factor >= 1, "upsample factor must be at least 1");
    samples
        .iter()
        .flat_map(|&x| std::iter::repeat_n(x, factor))
        .collect()
}

pub fn rms(samples: &[f64]) -> f64 {
    (samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Peak-to-RMS ratio.
pub fn crest_factor(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::UndefinedMetric(
            "crest factor of an empty sequence".into(),
        ));
    }
    let r = rms(samples);
    if r == 0.0 || !r.is_finite() {
        return Err(Error::UndefinedMetric(format!("crest factor with RMS {r}")));
    }
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(peak / r)
}

/// Serialized design: every `MultisineSpec` field, the excited bins and the phases of
/// each realization, enough to rebuild the excitation without the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    #[serde(flatten)]
    pub spec: MultisineSpec,
    pub excited_bins: Vec<usize>,
    pub phases: Vec<Vec<f64>>,
}

impl DesignFile {
    pub fn new(spec: MultisineSpec) -> Result<Self> {
        let excited_bins = select_excited_bins(&spec)?;
        let phases = (0..spec.num_realizations)
            .map(|m| draw_phases(spec.seed, m, excited_bins.len()))
            .collect();
        Ok(DesignFile {
            spec,
            excited_bins,
            phases,
        })
    }

    /// Checks that the stored bins and phases agree with `spec`.
    pub fn validate(&self) -> Result<()> {
        let bins = select_excited_bins(&self.spec)?;
        if bins != self.excited_bins {
            return Err(Error::InvalidDesign(
                "excited bins do not match the band and resolution".into(),
            ));
        }
        if self.phases.len() != self.spec.num_realizations {
            return Err(Error::InvalidDesign(format!(
                "{} phase sets for {} realizations",
                self.phases.len(),
                self.spec.num_realizations
            )));
        }
        for (m, set) in self.phases.iter().enumerate() {
            if set.len() != bins.len() || set.iter().any(|p| !(0.0..TAU).contains(p)) {
                return Err(Error::InvalidDesign(format!(
                    "phase set {m} has wrong length or values outside [0, 2pi)"
                )));
            }
        }
        Ok(())
    }

    pub fn excitation(&self, realization_index: usize) -> Result<ExcitationSignal> {
        let phases = self
            .phases
            .get(realization_index)
            .ok_or(Error::RealizationOutOfRange {
                index: realization_index,
                count: self.phases.len(),
            })?
            .clone();
        ExcitationSignal::from_phases(&self.spec, realization_index, phases)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let design: DesignFile = serde_json::from_str(text)?;
        design.validate()?;
        Ok(design)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
