//! Synthetic plants standing in for the measured system.
//!
//! A plant is a rational discrete-time filter `G(z) = B(z^-1) / A(z^-1)` at
//! the reference rate, optionally combined with a static polynomial
//! `f(v) = c_0 + c_1 v + ... + c_D v^D`:
//!
//! - `lti`: `y = G u`
//! - `wiener`: `y = f(G u)`
//! - `hammerstein`: `y = G f(u)`
//!
//! plus white Gaussian noise at the output.

use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::record::{ChannelUnits, MeasurementRecord, RecordMetadata};
use crate::signal::{rms, zoh_upsample, DesignFile, MultisineSpec};

/// Default number of periods run before any output is kept.
pub const DEFAULT_SETTLE_PERIODS: usize = 2;

/// Steady state is declared once consecutive periods differ by less than
/// this fraction of the output RMS.
const SETTLE_TOLERANCE: f64 = 1e-10;

const MAX_SETTLE_PERIODS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    Lti,
    Wiener,
    Hammerstein,
}

fn identity_polynomial() -> Vec<f64> {
    vec![0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub kind: PlantKind,
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    /// `c_0..c_D`; ignored for `lti`.
    #[serde(default = "identity_polynomial")]
    pub nonlinearity: Vec<f64>,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PlantSpec {
    pub fn lti(numerator: Vec<f64>, denominator: Vec<f64>) -> Self {
        PlantSpec {
            kind: PlantKind::Lti,
            numerator,
            denominator,
            nonlinearity: identity_polynomial(),
            noise_std: 0.0,
            seed: 0,
        }
    }

    pub fn with_noise(mut self, noise_std: f64, seed: u64) -> Self {
        self.noise_std = noise_std;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidPlant(m.to_string()));
        if self.numerator.is_empty() || self.denominator.is_empty() {
            return bad("numerator and denominator must be non-empty");
        }
        if self.denominator[0] == 0.0 {
            return bad("denominator leading coefficient must be nonzero");
        }
        if self
            .numerator
            .iter()
            .chain(&self.denominator)
            .chain(&self.nonlinearity)
            .any(|c| !c.is_finite())
        {
            return bad("coefficients must be finite");
        }
        if self.kind != PlantKind::Lti && self.nonlinearity.is_empty() {
            return bad("nonlinear plants need at least one polynomial coefficient");
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad("noise standard deviation must be non-negative");
        }
        check_stable(&self.denominator)
    }

    /// `B(e^{-jw}) / A(e^{-jw})` of the linear block, `w = 2 pi f / fs`.
    pub fn filter_response(&self, freq_hz: &[f64], sample_rate_hz: f64) -> Vec<Complex64> {
        let poly = |coef: &[f64], z_inv: Complex64| -> Complex64 {
            coef.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z_inv + c)
        };
        freq_hz
            .iter()
            .map(|f| {
                let z_inv = Complex64::from_polar(1.0, -std::f64::consts::TAU * f / sample_rate_hz);
                poly(&self.numerator, z_inv) / poly(&self.denominator, z_inv)
            })
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: PlantSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Schur-Cohn step-down: the polynomial is stable iff every reflection
/// coefficient has magnitude below one.
fn check_stable(denominator: &[f64]) -> Result<()> {
    let mut a: Vec<f64> = denominator.iter().map(|c| c / denominator[0]).collect();
    while a.len() > 1 && *a.last().unwrap() == 0.0 {
        a.pop();
    }
    for order in (1..a.len()).rev() {
        let k = a[order];
        if k.abs() >= 1.0 {
            return Err(Error::UnstableFilter {
                stage: order,
                magnitude: k.abs(),
            });
        }
        let denom = 1.0 - k * k;
        let prev: Vec<f64> = (0..order)
            .map(|j| {
                if j == 0 {
                    1.0
                } else {
                    (a[j] - k * a[order - j]) / denom
                }
            })
            .collect();
        a = prev;
    }
    Ok(())
}

/// Transposed direct form II.
struct Filter {
    b: Vec<f64>,
    a: Vec<f64>,
    state: Vec<f64>,
}

impl Filter {
    fn new(spec: &PlantSpec) -> Self {
        let a0 = spec.denominator[0];
        let order = spec.numerator.len().max(spec.denominator.len());
        let mut b: Vec<f64> = spec.numerator.iter().map(|c| c / a0).collect();
        let mut a: Vec<f64> = spec.denominator.iter().map(|c| c / a0).collect();
        b.resize(order, 0.0);
        a.resize(order, 0.0);
        Filter {
            b,
            a,
            state: vec![0.0; order.saturating_sub(1)],
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.state.first().copied().unwrap_or(0.0);
        let n = self.state.len();
        for i in 0..n {
            let next = if i + 1 < n { self.state[i + 1] } else { 0.0 };
            self.state[i] = self.b[i + 1] * x - self.a[i + 1] * y + next;
        }
        y
    }
}

fn polynomial(coef: &[f64], v: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| acc * v + c)
}

struct Plant<'a> {
    spec: &'a PlantSpec,
    filter: Filter,
}

impl Plant<'_> {
    fn step(&mut self, u: f64) -> f64 {
        match self.spec.kind {
            PlantKind::Lti => self.filter.step(u),
            PlantKind::Wiener => polynomial(&self.spec.nonlinearity, self.filter.step(u)),
            PlantKind::Hammerstein => self.filter.step(polynomial(&self.spec.nonlinearity, u)),
        }
    }

    fn run_period(&mut self, period: &[f64], out: &mut [f64]) {
        for (o, &u) in out.iter_mut().zip(period) {
            *o = self.step(u);
        }
    }
}

/// Output noise for realization stream `stream`.
pub fn output_noise(spec: &PlantSpec, stream: u64, len: usize) -> Vec<f64> {
    if spec.noise_std == 0.0 {
        return vec![0.0; len];
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, spec.noise_std).expect("validated noise level");
    (0..len).map(|_| normal.sample(&mut rng)).collect()
}

/// Drives the plant with the periodic input `period` and returns
/// `periods_out` periods of steady-state output with noise added.
///
/// At least `periods_to_settle` periods are discarded; more are run until two
/// consecutive noiseless periods agree to within `1e-10` of the output RMS.
pub fn simulate_plant(
    spec: &PlantSpec,
    period: &[f64],
    periods_out: usize,
    periods_to_settle: usize,
    stream: u64,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if periods_to_settle == 0 {
        return Err(Error::InvalidPlant(
            "at least one settle period is required".into(),
        ));
    }
    if period.is_empty() {
        return Err(Error::InvalidPlant("input period is empty".into()));
    }
    let n = period.len();
    let mut plant = Plant {
        spec,
        filter: Filter::new(spec),
    };
    let mut previous = vec![0.0; n];
    let mut current = vec![0.0; n];
    let mut settled_after = 0;
    loop {
        plant.run_period(period, &mut current);
        settled_after += 1;
        if settled_after >= periods_to_settle {
            let scale = rms(&current);
            let diff = current
                .iter()
                .zip(&previous)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if diff <= SETTLE_TOLERANCE * scale || (scale == 0.0 && diff == 0.0) {
                break;
            }
        }
        if settled_after >= MAX_SETTLE_PERIODS {
            return Err(Error::InvalidPlant(format!(
                "output did not reach a periodic steady state within {MAX_SETTLE_PERIODS} periods"
            )));
        }
        std::mem::swap(&mut previous, &mut current);
    }
    let mut out = vec![0.0; periods_out * n];
    for chunk in out.chunks_exact_mut(n) {
        plant.run_period(period, chunk);
    }
    let noise = output_noise(spec, stream, out.len());
    out.iter_mut().zip(noise).for_each(|(y, e)| *y += e);
    Ok(out)
}

/// Exact FRF of an `lti` plant.
pub fn analytic_frf(
    spec: &PlantSpec,
    freq_hz: &[f64],
    sample_rate_hz: f64,
) -> Result<Vec<Complex64>> {
    if spec.kind != PlantKind::Lti {
        return Err(Error::InvalidPlant(
            "an analytic FRF exists only for lti plants".into(),
        ));
    }
    spec.validate()?;
    Ok(spec.filter_response(freq_hz, sample_rate_hz))
}

pub fn run_experiment(
    plant: &PlantSpec,
    design: &MultisineSpec,
    periods: usize,
    realizations: usize,
) -> Result<Vec<MeasurementRecord>> {
    let design_file = DesignFile::new(design.clone())?;
    if realizations > design.num_realizations {
        return Err(Error::RealizationOutOfRange {
            index: realizations - 1,
            count: design.num_realizations,
        });
    }
    run_design(
        plant,
        &design_file,
        periods,
        realizations,
        DEFAULT_SETTLE_PERIODS,
        Exec::default(),
    )
}

/// Simulates the first `realizations` realizations stored in `design`, each
/// as one record of `prefix + periods` periods at the acquisition rate.
pub fn run_design(
    plant: &PlantSpec,
    design: &DesignFile,
    periods: usize,
    realizations: usize,
    settle_periods: usize,
    exec: Exec,
) -> Result<Vec<MeasurementRecord>> {
    plant.validate()?;
    design.validate()?;
    if periods == 0 {
        return Err(Error::InvalidDesign(
            "at least one period is required".into(),
        ));
    }
    if realizations == 0 {
        return Err(Error::InvalidDesign(
            "at least one realization is required".into(),
        ));
    }
    let spec = &design.spec;
    exec.try_map(realizations, |m| {
        let excitation = design.excitation(m)?;
        let n = spec.samples_per_period;
        let prefix = spec.prefix_samples;
        let y_all = simulate_plant(
            plant,
            excitation.period(),
            periods + 1,
            settle_periods,
            m as u64,
        )?;
        let keep = prefix + periods * n;
        let y_ref = &y_all[y_all.len() - keep..];
        let mut u_ref = Vec::with_capacity(keep);
        u_ref.extend_from_slice(&excitation.reference_samples);
        for _ in 1..periods {
            u_ref.extend_from_slice(excitation.period());
        }
        let factor = spec.upsample_factor;
        let metadata = RecordMetadata {
            sample_rate_hz: spec.acquisition_rate_hz(),
            samples_per_period: n * factor,
            prefix_samples: prefix * factor,
            num_periods: periods,
            realization_index: m,
            channel_units: ChannelUnits::default(),
            probe: None,
        };
        MeasurementRecord::from_channels(
            metadata,
            zoh_upsample(&u_ref, factor),
            zoh_upsample(y_ref, factor),
        )
    })
}
