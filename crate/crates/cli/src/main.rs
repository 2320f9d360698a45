//! `frfkit` command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data validation error,
//! 4 numerical failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use frfkit::exec::Exec;
use frfkit::frf::{FrfMethod, LpmConfig};
use frfkit::pipeline::{analyze, Analysis, AnalysisOptions};
use frfkit::record::{read_record, DEFAULT_DRIFT_THRESHOLD};
use frfkit::report::{write_report, ReportFormat};
use frfkit::signal::{DesignFile, MultisineSpec};
use frfkit::synth::{run_design, PlantSpec, DEFAULT_SETTLE_PERIODS};
use frfkit::{Error, ErrorKind};

#[derive(Parser)]
#[command(
    name = "frfkit",
    version,
    about = "Multisine design, FRF and BLA estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design random-phase multisine realizations.
    Design(DesignArgs),
    /// Run a synthetic plant on a design and write records.
    Simulate(SimulateArgs),
    /// Estimate FRF and BLA from records.
    Analyze(AnalyzeArgs),
    /// Write plot-ready tables from an analysis.
    Report(ReportArgs),
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "FRFKIT_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DesignArgs {
    /// Reference (generation) rate in Hz.
    #[arg(long, default_value_t = 31.25)]
    fs: f64,
    /// Samples per period at the reference rate.
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 0.06)]
    fmin: f64,
    #[arg(long, default_value_t = 1.0)]
    fmax: f64,
    /// Cosine amplitude per excited tone.
    #[arg(long, default_value_t = 0.02)]
    amp: f64,
    /// Prefix length in reference samples.
    #[arg(long, default_value_t = 100)]
    prefix: usize,
    #[arg(long, default_value_t = 1)]
    realizations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Zero-order-hold factor to the acquisition rate.
    #[arg(long, default_value_t = 32)]
    upsample: usize,
    /// Design file name, relative to the output directory.
    #[arg(long, default_value = "design.json")]
    out: PathBuf,
    #[command(flatten)]
    dir: OutDir,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    design: PathBuf,
    /// Plant description (JSON).
    #[arg(long)]
    plant: PathBuf,
    /// Periods per record after the prefix.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    periods: u64,
    /// Number of realizations to run; all in the design when omitted.
    #[arg(long)]
    realizations: Option<usize>,
    /// Minimum periods discarded before recording.
    #[arg(long, default_value_t = DEFAULT_SETTLE_PERIODS as u64, value_parser = clap::value_parser!(u64).range(1..))]
    settle: u64,
    #[arg(long)]
    sequential: bool,
    #[command(flatten)]
    dir: OutDir,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Etfe,
    Lpm,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    design: PathBuf,
    /// Record CSV files (sidecar metadata next to each).
    #[arg(long, num_args = 1.., required = true)]
    records: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Lpm)]
    method: Method,
    /// LPM polynomial order.
    #[arg(long, default_value_t = 2)]
    poly_order: usize,
    /// LPM half-width in bins, or `auto`.
    #[arg(long, default_value = "auto", value_parser = parse_half_width)]
    half_width: HalfWidth,
    #[arg(long, default_value_t = DEFAULT_DRIFT_THRESHOLD)]
    drift_threshold: f64,
    #[arg(long)]
    sequential: bool,
    #[command(flatten)]
    dir: OutDir,
}

#[derive(Clone, Copy)]
struct HalfWidth(Option<usize>);

fn parse_half_width(s: &str) -> Result<HalfWidth, String> {
    if s == "auto" {
        return Ok(HalfWidth(None));
    }
    s.parse()
        .map(|n| HalfWidth(Some(n)))
        .map_err(|_| format!("expected `auto` or a bin count, got `{s}`"))
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    analysis: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(flatten)]
    dir: OutDir,
}

fn exec_for(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn create_dir(dir: &Path) -> frfkit::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_with<F>(path: &Path, f: F) -> frfkit::Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    f(&mut w).and_then(|_| w.flush()).map_err(io)
}

fn design(args: DesignArgs) -> frfkit::Result<()> {
    let spec = MultisineSpec {
        reference_rate_hz: args.fs,
        samples_per_period: args.n,
        f_min_hz: args.fmin,
        f_max_hz: args.fmax,
        amplitude: args.amp,
        num_realizations: args.realizations,
        seed: args.seed,
        prefix_samples: args.prefix,
        upsample_factor: args.upsample,
    };
    let file = DesignFile::new(spec)?;
    create_dir(&args.dir.out_dir)?;
    let path = args.dir.out_dir.join(&args.out);
    file.write(&path)?;

    let f0 = file.spec.resolution_hz();
    println!(
        "{} excited bins, resolution {f0} Hz",
        file.excited_bins.len()
    );
    println!("{:>5}  {:>12}", "bin", "freq_hz");
    for k in &file.excited_bins {
        println!("{k:>5}  {:>12.6}", *k as f64 * f0);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn simulate(args: SimulateArgs) -> frfkit::Result<()> {
    let design = DesignFile::read(&args.design)?;
    let plant = PlantSpec::read(&args.plant)?;
    let m = args.realizations.unwrap_or(design.spec.num_realizations);
    if m > design.spec.num_realizations {
        return Err(Error::RealizationOutOfRange {
            index: m.saturating_sub(1),
            count: design.spec.num_realizations,
        });
    }
    let records = run_design(
        &plant,
        &design,
        args.periods as usize,
        m,
        args.settle as usize,
        exec_for(args.sequential),
    )?;
    create_dir(&args.dir.out_dir)?;
    for r in &records {
        let path = args
            .dir
            .out_dir
            .join(format!("record_m{}.csv", r.metadata.realization_index));
        r.write(&path)?;
        println!("wrote {} ({} samples)", path.display(), r.len());
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>, unit: &str) -> String {
    v.map_or_else(|| "unavailable".to_string(), |x| format!("{x:.2}{unit}"))
}

fn analyze_cmd(args: AnalyzeArgs) -> frfkit::Result<()> {
    let design = DesignFile::read(&args.design)?;
    let records = args
        .records
        .iter()
        .map(|p| read_record(p))
        .collect::<frfkit::Result<Vec<_>>>()?;
    let options = AnalysisOptions {
        method: match args.method {
            Method::Etfe => FrfMethod::Etfe,
            Method::Lpm => FrfMethod::Lpm,
        },
        lpm: LpmConfig {
            poly_order: args.poly_order,
            half_width: args.half_width.0,
        },
        drift_threshold: args.drift_threshold,
        exec: exec_for(args.sequential),
    };
    if options.method == FrfMethod::Lpm {
        options.lpm.dof()?;
    }
    let analysis = analyze(&records, &design, &options)?;

    let dir = &args.dir.out_dir;
    create_dir(dir)?;
    let json_path = dir.join("analysis.json");
    let mut text = analysis.to_json()?;
    text.push('\n');
    std::fs::write(&json_path, text).map_err(|e| Error::Io {
        path: json_path.clone(),
        source: e,
    })?;
    write_with(&dir.join("bla_curves.csv"), |w| {
        analysis.bla.write_curves_csv(w)
    })?;
    write_with(&dir.join("frf.csv"), |w| {
        analysis.plotted_frf().write_csv(w)
    })?;

    let s = &analysis.summary;
    println!(
        "records: {}  periods: {}",
        analysis.bla.realizations, analysis.bla.periods
    );
    println!("plotted curve: {:?}", s.plotted);
    println!("median FRF magnitude: {:.2} dB", s.median_frf_mag_db);
    println!("noise gap: {}", fmt_opt(s.noise_gap_db, " dB"));
    println!("total gap: {}", fmt_opt(s.total_gap_db, " dB"));
    println!("NL output fraction: {}", fmt_opt(s.nl_output_fraction, ""));
    println!("noise-only fraction: {}", fmt_opt(s.noise_fraction, ""));
    for p in analysis.drift.records.iter().filter(|p| p.flagged) {
        println!(
            "set-point drift flagged: realization {} shift {}",
            p.realization_index,
            fmt_opt(p.relative_shift, "")
        );
    }
    println!("wrote {}", json_path.display());
    Ok(())
}

fn report(args: ReportArgs) -> frfkit::Result<()> {
    let text = std::fs::read_to_string(&args.analysis).map_err(|e| Error::Io {
        path: args.analysis.clone(),
        source: e,
    })?;
    let analysis = Analysis::from_json(&text)?;
    let format = match args.format {
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    };
    for path in write_report(&analysis, &args.dir.out_dir, format)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Design(a) => design(a),
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}
