//! Plot-ready tables built from an [`Analysis`].
//!
//! Five figure families, each written as `<name>.csv` or bundled into one
//! JSON document with the same rows:
//!
//! | name           | columns |
//! |----------------|---------|
//! | `excitation`   | `realization,n,time_s,reference` |
//! | `time_periods` | `realization,period,n,time_s,load,indentation` |
//! | `spectra`      | `realization,period,channel,bin,freq_hz,re,im` |
//! | `trajectories` | `realization,period,load,indentation` |
//! | `bla_curves`   | `freq_hz,mag_db,noise_var_db,total_var_db,nl_var_db,dof_noise,dof_total` |
//!
//! In `spectra` the `reference` channel carries the reference period of each
//! realization (period 0); `load` and `indentation` carry every measured
//! period after mean removal.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::bla::variance_to_db;
use crate::error::{Error, Result};
use crate::pipeline::Analysis;
use crate::record::{remove_mean, PeriodBlock};
use crate::spectral::{dft_period, Spectrum};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(usize),
    Num(f64),
    Text(&'static str),
    /// Written as `NA` in CSV and `null` in JSON.
    Missing,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) => format!("{x}"),
            Cell::Text(s) => (*s).to_string(),
            Cell::Missing => "NA".to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(i) => Value::from(*i),
            // JSON has no infinities; keep the CSV spelling.
            Cell::Num(x) if !x.is_finite() => Value::from(format!("{x}")),
            Cell::Num(x) => Value::from(*x),
            Cell::Text(s) => Value::from(*s),
            Cell::Missing => Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: &'static str, columns: &[&'static str]) -> Self {
        Table {
            name,
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::csv).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| ((*c).to_string(), v.json()))
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

pub const BLA_CURVE_COLUMNS: [&str; 7] = [
    "freq_hz",
    "mag_db",
    "noise_var_db",
    "total_var_db",
    "nl_var_db",
    "dof_noise",
    "dof_total",
];

fn push_spectrum(
    table: &mut Table,
    realization: usize,
    period: usize,
    channel: &'static str,
    s: &Spectrum,
) {
    for (k, c) in s.coefficients.iter().enumerate() {
        table.rows.push(vec![
            Cell::Int(realization),
            Cell::Int(period),
            Cell::Text(channel),
            Cell::Int(k),
            Cell::Num(s.bin_hz(k)),
            Cell::Num(c.re),
            Cell::Num(c.im),
        ]);
    }
}

pub fn build_tables(analysis: &Analysis) -> Result<Vec<Table>> {
    let design = &analysis.design;
    let ref_rate = design.spec.reference_rate_hz;

    let mut excitation = Table::new("excitation", &["realization", "n", "time_s", "reference"]);
    let mut spectra = Table::new(
        "spectra",
        &[
            "realization",
            "period",
            "channel",
            "bin",
            "freq_hz",
            "re",
            "im",
        ],
    );
    let mut realizations: Vec<usize> = analysis
        .records
        .iter()
        .map(|r| r.realization_index)
        .collect();
    realizations.sort_unstable();
    realizations.dedup();
    for &m in &realizations {
        let exc = design.excitation(m)?;
        for (n, &x) in exc.period().iter().enumerate() {
            excitation.rows.push(vec![
                Cell::Int(m),
                Cell::Int(n),
                Cell::Num(n as f64 / ref_rate),
                Cell::Num(x),
            ]);
        }
        push_spectrum(
            &mut spectra,
            m,
            0,
            "reference",
            &dft_period(exc.period(), ref_rate),
        );
    }

    let mut time_periods = Table::new(
        "time_periods",
        &[
            "realization",
            "period",
            "n",
            "time_s",
            "load",
            "indentation",
        ],
    );
    let mut trajectories = Table::new(
        "trajectories",
        &["realization", "period", "load", "indentation"],
    );
    for rec in &analysis.records {
        let m = rec.realization_index;
        for (p, (u, y)) in rec.load.iter().zip(&rec.indentation).enumerate() {
            for (n, (a, b)) in u.iter().zip(y).enumerate() {
                time_periods.rows.push(vec![
                    Cell::Int(m),
                    Cell::Int(p),
                    Cell::Int(n),
                    Cell::Num(n as f64 / rec.sample_rate_hz),
                    Cell::Num(*a),
                    Cell::Num(*b),
                ]);
                trajectories.rows.push(vec![
                    Cell::Int(m),
                    Cell::Int(p),
                    Cell::Num(*a),
                    Cell::Num(*b),
                ]);
            }
        }
        let centered = remove_mean(&PeriodBlock {
            periods_u: rec.load.clone(),
            periods_y: rec.indentation.clone(),
        });
        for (p, u) in centered.block.periods_u.iter().enumerate() {
            push_spectrum(
                &mut spectra,
                m,
                p,
                "load",
                &dft_period(u, rec.sample_rate_hz),
            );
        }
        for (p, y) in centered.block.periods_y.iter().enumerate() {
            push_spectrum(
                &mut spectra,
                m,
                p,
                "indentation",
                &dft_period(y, rec.sample_rate_hz),
            );
        }
    }

    let bla = &analysis.bla;
    let db = variance_to_db(bla);
    let mut curves = Table::new("bla_curves", &BLA_CURVE_COLUMNS);
    let opt =
        |c: &Option<Vec<f64>>, k: usize| c.as_ref().map_or(Cell::Missing, |v| Cell::Num(v[k]));
    let dof = |d: Option<usize>| d.map_or(Cell::Missing, Cell::Int);
    for k in 0..bla.excited_bins.len() {
        curves.rows.push(vec![
            Cell::Num(bla.freq_hz[k]),
            Cell::Num(db.mag_db[k]),
            opt(&db.noise_db, k),
            opt(&db.total_db, k),
            opt(&db.nl_db, k),
            dof(bla.dof_noise),
            dof(bla.dof_total),
        ]);
    }

    Ok(vec![
        excitation,
        time_periods,
        spectra,
        trajectories,
        curves,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Writes the tables into `dir`; returns the files written.
pub fn write_report(analysis: &Analysis, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tables = build_tables(analysis)?;
    match format {
        ReportFormat::Csv => tables
            .iter()
            .map(|t| {
                let path = dir.join(format!("{}.csv", t.name));
                let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                let mut w = std::io::BufWriter::new(file);
                t.write_csv(&mut w)
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::io(&path, e))?;
                Ok(path)
            })
            .collect(),
        ReportFormat::Json => {
            let mut doc = Map::new();
            doc.insert(
                "plotted_curve".into(),
                serde_json::to_value(analysis.bla.plotted)?,
            );
            for t in &tables {
                doc.insert(t.name.to_string(), t.to_json());
            }
            let path = dir.join("report.json");
            let mut text = serde_json::to_string(&Value::Object(doc))?;
            text.push('\n');
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(vec![path])
        }
    }
}
