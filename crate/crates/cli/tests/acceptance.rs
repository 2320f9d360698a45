//! Acceptance suite. Runs every criterion in order and prints one line each:
//! `PASS [n] name: details` or `FAIL [n] name: reason`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use frfkit::bla::{median, nl_output_fraction, robust_bla_values, BlaResult};
use frfkit::exec::Exec;
use frfkit::pipeline::{analyze, estimate_bla, AnalysisOptions};
use frfkit::signal::{generate_multisine, rms, DesignFile, MultisineSpec};
use frfkit::spectral::dft_period;
use frfkit::synth::{analytic_frf, run_design, PlantKind, PlantSpec, DEFAULT_SETTLE_PERIODS};
use frfkit::Complex64;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn med(v: &[f64]) -> f64 {
    median(&mut v.to_vec())
}

fn lab_design(m: usize, seed: u64) -> DesignFile {
    DesignFile::new(MultisineSpec::nanoindentation_default(m, seed)).unwrap()
}

fn bla_for(
    plant: &PlantSpec,
    design: &DesignFile,
    p: usize,
    m: usize,
    options: &AnalysisOptions,
) -> BlaResult {
    let recs = run_design(
        plant,
        design,
        p,
        m,
        DEFAULT_SETTLE_PERIODS,
        Exec::Sequential,
    )
    .unwrap();
    estimate_bla(&recs, design, options).unwrap()
}

// ---------------------------------------------------------------- [1]

const C1_MAG_TOL: f64 = 1e-12;
const C1_RMS_TOL: f64 = 1e-10;

fn excitation_fidelity() -> Outcome {
    let spec = MultisineSpec::nanoindentation_default(1, 7);
    let exc = generate_multisine(&spec, 0).map_err(|e| e.to_string())?;
    check(exc.excited_bins.len() == 12, || {
        format!("{} excited bins", exc.excited_bins.len())
    })?;
    check(exc.excited_bins == (1..=12).collect::<Vec<_>>(), || {
        format!("bins {:?}", exc.excited_bins)
    })?;
    check(exc.reference_samples.len() == 500, || {
        format!("{} reference samples", exc.reference_samples.len())
    })?;
    check(exc.upsampled_samples.len() == 16000, || {
        format!("{} upsampled samples", exc.upsampled_samples.len())
    })?;
    let spectrum = dft_period(exc.period(), spec.reference_rate_hz);
    let worst_mag = exc
        .excited_bins
        .iter()
        .map(|&k| (spectrum.coefficients[k].norm() - 0.01).abs())
        .fold(0.0, f64::max);
    check(worst_mag <= C1_MAG_TOL, || {
        format!("DFT magnitude off by {worst_mag:e}")
    })?;
    // 12 tones of amplitude 0.02: sqrt(12 * 0.02^2 / 2) = 0.0489897948...
    let expected = (12.0 * 0.02f64.powi(2) / 2.0).sqrt();
    let r = rms(exc.period());
    check((r - expected).abs() <= C1_RMS_TOL, || {
        format!("RMS {r} vs {expected}")
    })?;
    Ok(format!(
        "12 bins, 500/16000 samples, max |X_k|-0.01 = {worst_mag:.1e}, RMS {r:.10}"
    ))
}

// ---------------------------------------------------------------- [2]

const C2_REPS: usize = 100;
const C2_SIGMA_MULT: f64 = 3.0;
const C2_COVERAGE: f64 = 0.95;
const C2_NOISE: f64 = 1e-3;

fn coverage(g: &[Complex64], var: &[f64], truth: &[Complex64]) -> usize {
    g.iter()
        .zip(var)
        .zip(truth)
        .filter(|((g, v), t)| (*g - *t).norm() <= C2_SIGMA_MULT * v.sqrt())
        .count()
}

fn linear_oracle_equivalence() -> Outcome {
    let plants = [
        ("identity", PlantSpec::lti(vec![1.0], vec![1.0])),
        ("delay", PlantSpec::lti(vec![0.0, 0.0, 1.0], vec![1.0])),
        ("one-pole", PlantSpec::lti(vec![1.0], vec![1.0, -0.5])),
    ];
    let mut details = Vec::new();
    for (name, base) in &plants {
        let counts = Exec::default().map(C2_REPS, |rep| {
            let plant = base.clone().with_noise(C2_NOISE, 10_000 + rep as u64);
            let design = lab_design(4, 20_000 + rep as u64);
            let bla = bla_for(&plant, &design, 4, 4, &AnalysisOptions::default());
            let truth = analytic_frf(&plant, &bla.freq_hz, design.spec.reference_rate_hz).unwrap();
            let robust = coverage(&bla.g_bla, bla.var_noise.as_ref().unwrap(), &truth);
            let lpm = bla.lpm.as_ref().unwrap();
            let local = coverage(&lpm.g, &lpm.noise_variance, &truth);
            (robust, local, truth.len())
        });
        let total: usize = counts.iter().map(|c| c.2).sum();
        let robust = counts.iter().map(|c| c.0).sum::<usize>() as f64 / total as f64;
        let local = counts.iter().map(|c| c.1).sum::<usize>() as f64 / total as f64;
        check(robust >= C2_COVERAGE, || {
            format!("{name}: robust BLA coverage {robust:.3}")
        })?;
        check(local >= C2_COVERAGE, || {
            format!("{name}: LPM coverage {local:.3}")
        })?;
        details.push(format!("{name} {robust:.3}/{local:.3}"));
    }
    Ok(format!(
        "bins within 3 sigma (robust/LPM) over {C2_REPS} runs: {}",
        details.join(", ")
    ))
}

// ---------------------------------------------------------------- [3]

const C3_TARGET_DB: f64 = 30.0;
const C3_TOL_DB: f64 = 2.0;
const C3_PILOT_SIGMA: f64 = 1e-3;
const C3_RUNS: usize = 20;

fn median_noise_gap(sigma: f64, seed_base: u64) -> f64 {
    let gaps = Exec::default().map(C3_RUNS, |r| {
        let plant =
            PlantSpec::lti(vec![1.0], vec![1.0, -0.5]).with_noise(sigma, seed_base + r as u64);
        let design = lab_design(2, seed_base + 1000 + r as u64);
        let recs = run_design(
            &plant,
            &design,
            3,
            2,
            DEFAULT_SETTLE_PERIODS,
            Exec::Sequential,
        )
        .unwrap();
        analyze(&recs, &design, &AnalysisOptions::default())
            .unwrap()
            .summary
            .noise_gap_db
            .unwrap()
    });
    med(&gaps)
}

fn noise_floor_calibration() -> Outcome {
    let pilot = median_noise_gap(C3_PILOT_SIGMA, 30_000);
    // gap falls 20 dB per decade of sigma
    let sigma = C3_PILOT_SIGMA * 10f64.powf((pilot - C3_TARGET_DB) / 20.0);
    let gap = median_noise_gap(sigma, 40_000);
    check((gap - C3_TARGET_DB).abs() <= C3_TOL_DB, || {
        format!("noise gap {gap:.2} dB at sigma {sigma:.3e}")
    })?;
    Ok(format!(
        "pilot gap {pilot:.2} dB at sigma {C3_PILOT_SIGMA:e}; calibrated sigma {sigma:.3e} gives {gap:.2} dB (M=2, P=3)"
    ))
}

// ---------------------------------------------------------------- [4]

const C4_TARGET_DB: f64 = 10.0;
const C4_GAP_TOL_DB: f64 = 1.0;
const C4_FRACTION: f64 = 0.32;
const C4_FRACTION_TOL: f64 = 0.05;
const C4_M: usize = 2;
const C4_P: usize = 3;
const C4_RUNS: usize = 64;
const C4_NOISE: f64 = 1e-4;

/// `v + cubic v^3` after a one-pole filter; negative `cubic` softens.
fn wiener(cubic: f64, seed: u64) -> PlantSpec {
    let mut p = PlantSpec::lti(vec![1.0], vec![1.0, -0.5]).with_noise(C4_NOISE, seed);
    p.kind = PlantKind::Wiener;
    p.nonlinearity = vec![0.0, 1.0, 0.0, cubic];
    p
}

/// Median total gap and median NL fraction over all excited bins of
/// `C4_RUNS` independent experiments.
fn pooled(cubic: f64, seed_base: u64) -> (f64, f64) {
    let per_run = Exec::default().map(C4_RUNS, |r| {
        let seed = seed_base + r as u64;
        let bla = bla_for(
            &wiener(cubic, seed),
            &lab_design(C4_M, seed),
            C4_P,
            C4_M,
            &AnalysisOptions::default(),
        );
        let total = bla.var_total.as_ref().unwrap();
        let gaps: Vec<f64> = bla
            .g_bla
            .iter()
            .zip(total)
            .map(|(g, v)| 20.0 * g.norm().log10() - 10.0 * v.log10())
            .collect();
        let fractions: Vec<f64> = nl_output_fraction(&bla)
            .unwrap()
            .per_bin
            .into_iter()
            .flatten()
            .collect();
        (gaps, fractions)
    });
    let gaps: Vec<f64> = per_run.iter().flat_map(|r| r.0.iter().copied()).collect();
    let fractions: Vec<f64> = per_run.iter().flat_map(|r| r.1.iter().copied()).collect();
    (med(&gaps), med(&fractions))
}

fn nonlinearity_consistency() -> Outcome {
    // bisection over the softening range
    let (mut lo, mut hi) = (-30.0f64, 0.0f64);
    check(
        pooled(lo, 50_000).0 < C4_TARGET_DB && pooled(hi, 50_000).0 > C4_TARGET_DB,
        || "calibration bracket does not straddle the target".into(),
    )?;
    for _ in 0..25 {
        let mid = 0.5 * (lo + hi);
        if pooled(mid, 50_000).0 > C4_TARGET_DB {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let cubic = 0.5 * (lo + hi);
    let (gap, fraction) = pooled(cubic, 60_000);
    check((gap - C4_TARGET_DB).abs() <= C4_GAP_TOL_DB, || {
        format!("total gap {gap:.2} dB, cubic {cubic:.3}")
    })?;
    check((fraction - C4_FRACTION).abs() <= C4_FRACTION_TOL, || {
        format!("NL fraction {fraction:.3} at gap {gap:.2} dB")
    })?;
    Ok(format!(
        "cubic {cubic:.3}: total gap {gap:.2} dB, NL output fraction {fraction:.3} (M={C4_M}, P={C4_P}, {C4_RUNS} fresh runs pooled)"
    ))
}

// ---------------------------------------------------------------- [5]

const C5_RATIO: f64 = 0.1;
const C5_CASES: usize = 8;

fn transient_suppression() -> Outcome {
    let plant = PlantSpec::lti(vec![1.0], vec![1.0, -0.5]).with_noise(1e-7, 5);
    let mut lpm_bias = Vec::new();
    let mut div_bias = Vec::new();
    for case in 0..C5_CASES {
        let design = lab_design(1, 70_000 + case as u64);
        let mut recs = run_design(
            &plant,
            &design,
            1,
            1,
            DEFAULT_SETTLE_PERIODS,
            Exec::Sequential,
        )
        .unwrap();
        let meta = recs[0].metadata.clone();
        // a * rho^n per reference sample, sampled at the acquisition rate
        let (a, rho) = (0.05 * (1.0 + case as f64 / 4.0), 0.8f64);
        let factor = meta.samples_per_period as f64 / design.spec.samples_per_period as f64;
        for (i, y) in recs[0]
            .indentation
            .iter_mut()
            .enumerate()
            .skip(meta.prefix_samples)
        {
            *y += a * rho.powf((i - meta.prefix_samples) as f64 / factor);
        }
        let bla = estimate_bla(&recs, &design, &AnalysisOptions::default()).unwrap();
        let truth = analytic_frf(&plant, &bla.freq_hz, design.spec.reference_rate_hz).unwrap();
        let lpm = &bla.lpm.as_ref().unwrap().g;
        for (k, t) in truth.iter().enumerate() {
            lpm_bias.push((lpm[k] - t).norm());
            div_bias.push((bla.period_frfs[0][0][k] - t).norm());
        }
    }
    let (l, d) = (med(&lpm_bias), med(&div_bias));
    check(l <= C5_RATIO * d, || {
        format!("median LPM bias {l:.3e} vs division {d:.3e}")
    })?;
    Ok(format!(
        "median |bias| LPM {l:.3e}, per-period division {d:.3e}, ratio {:.2e}",
        l / d
    ))
}

// ---------------------------------------------------------------- [6]

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn two_by_two(values: Vec<Vec<Vec<Complex64>>>) -> BlaResult {
    robust_bla_values(vec![3], vec![0.234375], values)
}

fn robust_exactness() -> Outcome {
    // Dyadic values keep every operation exact in binary floating point.
    let g = c(1.0, 0.5);
    let d = c(0.25, 0.125);
    let (e1, e2) = (c(0.25, 0.0), c(0.0, 0.125));
    let cells = vec![
        vec![vec![g + d + e1], vec![g + d - e1]],
        vec![vec![g - d + e2], vec![g - d - e2]],
    ];
    let r = two_by_two(cells.clone());
    let d2 = d.norm_sqr();
    let sum_dev: f64 = r
        .realization_frfs
        .iter()
        .map(|gm| (gm[0] - r.g_bla[0]).norm_sqr())
        .sum();
    check(r.g_bla[0] == g, || format!("G_bla {}", r.g_bla[0]))?;
    check(sum_dev == 2.0 * d2, || {
        format!("sum of squared deviations {sum_dev} vs 2|d|^2 {}", 2.0 * d2)
    })?;
    let total = r.var_total.as_ref().unwrap()[0];
    check(total == d2, || format!("var_total {total} vs |d|^2 {d2}"))?;
    // per realization: (1/(P(P-1))) * 2|e|^2 = |e|^2, then averaged over M^2
    let noise_expected = (e1.norm_sqr() + e2.norm_sqr()) / 4.0;
    let noise = r.var_noise.as_ref().unwrap()[0];
    check(noise == noise_expected, || {
        format!("var_noise {noise} vs {noise_expected}")
    })?;
    let nl = r.var_nl.as_ref().unwrap()[0];
    check(nl == d2 - noise_expected, || format!("var_nl {nl}"))?;
    check(r.dof_noise == Some(2) && r.dof_total == Some(1), || {
        "dof".into()
    })?;

    let mut swapped = cells.clone();
    swapped.swap(0, 1);
    swapped[0].swap(0, 1);
    let s = two_by_two(swapped);
    check(
        s.g_bla == r.g_bla
            && s.var_noise == r.var_noise
            && s.var_total == r.var_total
            && s.var_nl == r.var_nl,
        || "permutation changed the statistics".into(),
    )?;

    // Noise scatter larger than realization scatter: clamp to 0.
    let big = c(2.0, 0.0);
    let clamp = two_by_two(vec![
        vec![vec![g + d + big], vec![g + d - big]],
        vec![vec![g - d + big], vec![g - d - big]],
    ]);
    let raw = clamp.var_nl_raw.as_ref().unwrap()[0];
    let clamped = clamp.var_nl.as_ref().unwrap()[0];
    check(raw == d2 - 2.0 && clamped == 0.0, || {
        format!("raw {raw}, clamped {clamped}")
    })?;
    Ok(format!(
        "var_total {total} = |d|^2 (sum of squares {sum_dev} = 2|d|^2), var_noise {noise}, permutation invariant, clamp raw {raw} -> 0"
    ))
}

// ---------------------------------------------------------------- [7]

fn run_cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_frfkit"))
        .args(args)
        .env_remove("FRFKIT_OUT_DIR")
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!(
            "`{}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn chain(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let plant = r#"{"kind":"wiener","numerator":[1.0],"denominator":[1.0,-0.5],"nonlinearity":[0.0,1.0,0.0,20.0],"noise_std":0.0005,"seed":42}"#;
    std::fs::write(dir.join("plant.json"), plant).map_err(|e| e.to_string())?;
    run_cli(
        &[
            "design",
            "--realizations",
            "2",
            "--seed",
            "7",
            "--out-dir",
            ".",
        ],
        dir,
    )?;
    run_cli(
        &[
            "simulate",
            "--design",
            "design.json",
            "--plant",
            "plant.json",
            "--periods",
            "3",
            "--out-dir",
            "rec",
        ],
        dir,
    )?;
    run_cli(
        &[
            "analyze",
            "--design",
            "design.json",
            "--records",
            "rec/record_m0.csv",
            "rec/record_m1.csv",
            "--out-dir",
            "out",
        ],
        dir,
    )?;
    run_cli(
        &[
            "report",
            "--analysis",
            "out/analysis.json",
            "--out-dir",
            "report",
        ],
        dir,
    )?;
    run_cli(
        &[
            "report",
            "--analysis",
            "out/analysis.json",
            "--format",
            "json",
            "--out-dir",
            "report",
        ],
        dir,
    )?;
    let mut files = Vec::new();
    for sub in ["report", "out", "rec"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(sub))
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for n in names {
            let bytes = std::fs::read(dir.join(sub).join(&n)).map_err(|e| e.to_string())?;
            files.push((format!("{sub}/{n}"), bytes));
        }
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = chain(a.path())?;
    let second = chain(b.path())?;
    let names: Vec<&str> = first.iter().map(|f| f.0.as_str()).collect();
    check(
        names == second.iter().map(|f| f.0.as_str()).collect::<Vec<_>>(),
        || "file sets differ".into(),
    )?;
    let reports = names.iter().filter(|n| n.starts_with("report/")).count();
    check(reports == 6, || {
        format!("{reports} report files: {names:?}")
    })?;
    for (x, y) in first.iter().zip(&second) {
        check(x.1 == y.1, || format!("{} differs between runs", x.0))?;
    }
    let bytes: usize = first.iter().map(|f| f.1.len()).sum();
    Ok(format!(
        "{} files ({bytes} bytes) byte-identical across two runs",
        first.len()
    ))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 7] = [
        (
            "excitation fidelity",
            Duration::from_secs(1),
            excitation_fidelity,
        ),
        (
            "linear-plant oracle equivalence",
            Duration::from_secs(60),
            linear_oracle_equivalence,
        ),
        (
            "variance-decomposition calibration",
            Duration::from_secs(30),
            noise_floor_calibration,
        ),
        (
            "nonlinearity detection, 10 dB vs 30%",
            Duration::from_secs(60),
            nonlinearity_consistency,
        ),
        (
            "LPM transient suppression",
            Duration::from_secs(30),
            transient_suppression,
        ),
        (
            "robust-statistics exactness",
            Duration::from_secs(1),
            robust_exactness,
        ),
        ("determinism", Duration::from_secs(30), determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if elapsed <= *limit {
                Ok(msg)
            } else {
                Err(format!("took {elapsed:.2?}, limit {limit:?}"))
            }
        });
        match outcome {
            Ok(msg) => println!("PASS [{}] {name} ({elapsed:.2?}): {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL [{}] {name} ({elapsed:.2?}): {msg}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
