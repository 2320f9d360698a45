//! Measurement records: load `u(t)` as input, indentation `y(t)` as output.
//!
//! On disk a record is a CSV file with header `time_s,load,indentation` and a
//! JSON sidecar `<basename>.meta.json` holding [`RecordMetadata`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::rms;

pub const CSV_HEADER: [&str; 3] = ["time_s", "load", "indentation"];

/// Default relative set-point shift above which a record is flagged.
pub const DEFAULT_DRIFT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelUnits {
    pub load: String,
    pub indentation: String,
}

impl Default for ChannelUnits {
    fn default() -> Self {
        ChannelUnits {
            load: "arb".into(),
            indentation: "arb".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeDescriptor {
    pub stiffness_n_per_m: Option<f64>,
    pub tip_diameter_um: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetadata {
    pub sample_rate_hz: f64,
    pub samples_per_period: usize,
    pub prefix_samples: usize,
    pub num_periods: usize,
    pub realization_index: usize,
    #[serde(default)]
    pub channel_units: ChannelUnits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeDescriptor>,
}

impl RecordMetadata {
    pub fn required_len(&self) -> usize {
        self.prefix_samples + self.num_periods * self.samples_per_period
    }

    fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Metadata(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.samples_per_period == 0 || self.num_periods == 0 {
            return Err(Error::Metadata(
                "samples per period and number of periods must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let meta: RecordMetadata = serde_json::from_str(&text)?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// `dir/name.csv` -> `dir/name.meta.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub metadata: RecordMetadata,
    pub time_s: Vec<f64>,
    pub load: Vec<f64>,
    pub indentation: Vec<f64>,
}

impl MeasurementRecord {
    /// Builds a record with `time_s[i] = i / fs`.
    pub fn from_channels(
        metadata: RecordMetadata,
        load: Vec<f64>,
        indentation: Vec<f64>,
    ) -> Result<Self> {
        let dt = 1.0 / metadata.sample_rate_hz;
        let time_s = (0..load.len()).map(|i| i as f64 * dt).collect();
        let record = MeasurementRecord {
            metadata,
            time_s,
            load,
            indentation,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.metadata.validate()?;
        let n = self.time_s.len();
        if n == 0 {
            return Err(Error::EmptyRecord);
        }
        if self.load.len() != n || self.indentation.len() != n {
            return Err(Error::Metadata(format!(
                "channel lengths differ: time {}, load {}, indentation {}",
                n,
                self.load.len(),
                self.indentation.len()
            )));
        }
        for (row, ((t, u), y)) in self
            .time_s
            .iter()
            .zip(&self.load)
            .zip(&self.indentation)
            .enumerate()
        {
            for (value, column) in [(t, "time_s"), (u, "load"), (y, "indentation")] {
                if !value.is_finite() {
                    return Err(Error::NonFinite { row, column });
                }
            }
        }
        if let Some(row) = self.time_s.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotoneTime { row: row + 1 });
        }
        if n > 1 {
            let mean_step = (self.time_s[n - 1] - self.time_s[0]) / (n - 1) as f64;
            let expect = 1.0 / self.metadata.sample_rate_hz;
            if ((mean_step - expect) / expect).abs() > 1e-6 {
                return Err(Error::Metadata(format!(
                    "mean time step {mean_step} s does not match sample rate {} Hz",
                    self.metadata.sample_rate_hz
                )));
            }
        }
        let required = self.metadata.required_len();
        if n < required {
            return Err(Error::InsufficientLength {
                required,
                actual: n,
            });
        }
        Ok(())
    }

    /// Writes the CSV with 17 significant digits per value and the JSON
    /// sidecar next to it.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        let file = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(csv_path, e);
        writeln!(w, "{}", CSV_HEADER.join(",")).map_err(io)?;
        for ((t, u), y) in self.time_s.iter().zip(&self.load).zip(&self.indentation) {
            writeln!(w, "{t:.16e},{u:.16e},{y:.16e}").map_err(io)?;
        }
        w.flush().map_err(io)?;
        self.metadata.write(&sidecar_path(csv_path))
    }
}

/// Reads a record CSV and attaches `metadata`.
pub fn read_record_csv(path: &Path, metadata: RecordMetadata) -> Result<MeasurementRecord> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = reader.records();
    let header = match rows.next() {
        None => return Err(Error::EmptyRecord),
        Some(h) => h.map_err(|e| Error::Parse {
            row: 0,
            message: e.to_string(),
        })?,
    };
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            row: 0,
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut time_s = Vec::new();
    let mut load = Vec::new();
    let mut indentation = Vec::new();
    for (i, row) in rows.enumerate() {
        // Data rows are numbered from 1 (the header is row 0).
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Parse {
            row: row_no,
            message: e.to_string(),
        })?;
        if row.len() != 3 {
            return Err(Error::Parse {
                row: row_no,
                message: format!("expected 3 fields, found {}", row.len()),
            });
        }
        let mut values = [0.0; 3];
        for (slot, (field, column)) in values.iter_mut().zip(row.iter().zip(CSV_HEADER)) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: row_no,
                message: format!("cannot parse {column} value `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: row_no,
                    column,
                });
            }
            *slot = v;
        }
        time_s.push(values[0]);
        load.push(values[1]);
        indentation.push(values[2]);
    }
    if time_s.is_empty() {
        return Err(Error::EmptyRecord);
    }
    if let Some(i) = time_s.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotoneTime { row: i + 2 });
    }
    let record = MeasurementRecord {
        metadata,
        time_s,
        load,
        indentation,
    };
    record.validate()?;
    Ok(record)
}

/// Reads a record CSV together with its `.meta.json` sidecar.
pub fn read_record(path: &Path) -> Result<MeasurementRecord> {
    let metadata = RecordMetadata::read(&sidecar_path(path))?;
    read_record_csv(path, metadata)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodBlock {
    pub periods_u: Vec<Vec<f64>>,
    pub periods_y: Vec<Vec<f64>>,
}

impl PeriodBlock {
    pub fn num_periods(&self) -> usize {
        self.periods_u.len()
    }

    pub fn period_len(&self) -> usize {
        self.periods_u.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmented {
    pub block: PeriodBlock,
    /// Samples past `prefix + P N` that were dropped.
    pub dropped_trailing: usize,
}

pub fn segment_periods(record: &MeasurementRecord) -> Result<Segmented> {
    let meta = &record.metadata;
    let required = meta.required_len();
    if record.len() < required {
        return Err(Error::InsufficientLength {
            required,
            actual: record.len(),
        });
    }
    let n = meta.samples_per_period;
    let slice = |x: &[f64]| -> Vec<Vec<f64>> {
        x[meta.prefix_samples..required]
            .chunks_exact(n)
            .map(<[f64]>::to_vec)
            .collect()
    };
    Ok(Segmented {
        block: PeriodBlock {
            periods_u: slice(&record.load),
            periods_y: slice(&record.indentation),
        },
        dropped_trailing: record.len() - required,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Centered {
    pub block: PeriodBlock,
    pub mean_u: f64,
    pub mean_y: f64,
}

fn grand_mean(rows: &[Vec<f64>]) -> f64 {
    let count: usize = rows.iter().map(Vec::len).sum();
    rows.iter().flatten().sum::<f64>() / count as f64
}

/// Subtracts the grand mean over all periods of each channel.
pub fn remove_mean(block: &PeriodBlock) -> Centered {
    let center = |rows: &[Vec<f64>]| -> (Vec<Vec<f64>>, f64) {
        let mean = grand_mean(rows);
        let centered = rows
            .iter()
            .map(|r| r.iter().map(|x| x - mean).collect())
            .collect();
        (centered, mean)
    };
    let (periods_u, mean_u) = center(&block.periods_u);
    let (periods_y, mean_y) = center(&block.periods_y);
    Centered {
        block: PeriodBlock {
            periods_u,
            periods_y,
        },
        mean_u,
        mean_y,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetPoint {
    pub realization_index: usize,
    pub period_mean_load: Vec<f64>,
    pub period_mean_indentation: Vec<f64>,
    pub mean_load: f64,
    pub mean_indentation: f64,
    /// `(mean_load - first) / |first|`; `None` for the first record and when
    /// the first record's mean load is negligible against its RMS.
    pub relative_shift: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub threshold: f64,
    pub records: Vec<SetPoint>,
}

pub fn drift_metric(records: &[MeasurementRecord], threshold: f64) -> Result<DriftReport> {
    let first = records
        .first()
        .ok_or_else(|| Error::Metadata("drift needs at least one record".into()))?;
    let reference = &first.metadata;
    for r in &records[1..] {
        let m = &r.metadata;
        if m.sample_rate_hz != reference.sample_rate_hz
            || m.samples_per_period != reference.samples_per_period
            || m.prefix_samples != reference.prefix_samples
            || m.num_periods != reference.num_periods
        {
            return Err(Error::Metadata(format!(
                "record for realization {} has different acquisition parameters",
                m.realization_index
            )));
        }
    }
    let mut set_points = Vec::with_capacity(records.len());
    let mut base: Option<f64> = None;
    for (i, record) in records.iter().enumerate() {
        let seg = segment_periods(record)?.block;
        let means = |rows: &[Vec<f64>]| -> Vec<f64> {
            rows.iter()
                .map(|r| r.iter().sum::<f64>() / r.len() as f64)
                .collect()
        };
        let mean_load = grand_mean(&seg.periods_u);
        let mean_indentation = grand_mean(&seg.periods_y);
        if i == 0 {
            let all: Vec<f64> = seg.periods_u.iter().flatten().copied().collect();
            if mean_load.abs() > 1e-12 * rms(&all) {
                base = Some(mean_load);
            }
        }
        let relative_shift = match (i, base) {
            (0, _) | (_, None) => None,
            (_, Some(b)) => Some((mean_load - b) / b.abs()),
        };
        set_points.push(SetPoint {
            realization_index: record.metadata.realization_index,
            period_mean_load: means(&seg.periods_u),
            period_mean_indentation: means(&seg.periods_y),
            mean_load,
            mean_indentation,
            relative_shift,
            flagged: relative_shift.is_some_and(|s| s.abs() > threshold),
        });
    }
    Ok(DriftReport {
        threshold,
        records: set_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(fs: f64, n: usize, prefix: usize, p: usize) -> RecordMetadata {
        RecordMetadata {
            sample_rate_hz: fs,
            samples_per_period: n,
            prefix_samples: prefix,
            num_periods: p,
            realization_index: 0,
            channel_units: ChannelUnits::default(),
            probe: None,
        }
    }

    fn ramp_record(meta: RecordMetadata, len: usize) -> MeasurementRecord {
        let u: Vec<f64> = (0..len).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..len).map(|i| -(i as f64)).collect();
        MeasurementRecord::from_channels(meta, u, y).unwrap()
    }

    #[test]
    fn lab_sized_record_has_one_period() {
        let r = ramp_record(meta(1000.0, 12800, 3200, 1), 16000);
        let seg = segment_periods(&r).unwrap();
        assert_eq!(seg.block.num_periods(), 1);
        assert_eq!(seg.block.period_len(), 12800);
        assert_eq!(seg.block.periods_u[0][0], 3200.0);
        assert_eq!(seg.dropped_trailing, 0);
    }

    #[test]
    fn three_periods_after_prefix() {
        let r = ramp_record(meta(1000.0, 12800, 3200, 3), 41600);
        let seg = segment_periods(&r).unwrap();
        assert_eq!(seg.block.num_periods(), 3);
        assert_eq!(seg.block.periods_y[2][12799], -41599.0);
    }

    #[test]
    fn exact_fit_without_prefix() {
        let r = ramp_record(meta(10.0, 400, 0, 3), 1200);
        let seg = segment_periods(&r).unwrap();
        for p in 0..3 {
            assert_eq!(
                seg.block.periods_u[p],
                r.load[p * 400..(p + 1) * 400].to_vec()
            );
        }
    }

    #[test]
    fn trailing_samples_are_counted() {
        let r = ramp_record(meta(10.0, 4, 1, 2), 12);
        assert_eq!(segment_periods(&r).unwrap().dropped_trailing, 3);
    }

    #[test]
    fn short_record_reports_lengths() {
        let m = meta(10.0, 4, 1, 3);
        let r = MeasurementRecord {
            metadata: m,
            time_s: vec![0.0, 0.1],
            load: vec![0.0; 2],
            indentation: vec![0.0; 2],
        };
        assert!(matches!(
            segment_periods(&r),
            Err(Error::InsufficientLength {
                required: 13,
                actual: 2
            })
        ));
    }

    #[test]
    fn mean_removal_cases() {
        let block = PeriodBlock {
            periods_u: vec![vec![3.0; 5], vec![3.0; 5]],
            periods_y: vec![vec![-1.0; 5], vec![-1.0; 5]],
        };
        let c = remove_mean(&block);
        assert_eq!(c.mean_u, 3.0);
        assert_eq!(c.mean_y, -1.0);
        assert!(c.block.periods_u.iter().flatten().all(|&x| x == 0.0));

        let n = 64;
        let cosine: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * 3.0 * i as f64 / n as f64).cos())
            .collect();
        let shifted = PeriodBlock {
            periods_u: vec![cosine.iter().map(|x| 5.0 + x).collect()],
            periods_y: vec![cosine.clone()],
        };
        let c = remove_mean(&shifted);
        assert!((c.mean_u - 5.0).abs() < 1e-14);
        for (a, b) in c.block.periods_u[0].iter().zip(&cosine) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in c.block.periods_y[0].iter().zip(&cosine) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn offset_record(offset: f64, index: usize) -> MeasurementRecord {
        let mut m = meta(10.0, 8, 2, 2);
        m.realization_index = index;
        let u: Vec<f64> = (0..18).map(|i| offset + (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..18).map(|i| 0.5 * (i as f64 * 0.7).cos()).collect();
        MeasurementRecord::from_channels(m, u, y).unwrap()
    }

    #[test]
    fn drift_identical_records() {
        let r = offset_record(2.0, 0);
        let report = drift_metric(&[r.clone(), r], DEFAULT_DRIFT_THRESHOLD).unwrap();
        assert_eq!(report.records[1].relative_shift, Some(0.0));
        assert!(report.records.iter().all(|s| !s.flagged));
    }

    #[test]
    fn drift_ten_percent_flagged() {
        let a = offset_record(2.0, 0);
        let mean = drift_metric(std::slice::from_ref(&a), 0.05)
            .unwrap()
            .records[0]
            .mean_load;
        let mut b = a.clone();
        b.metadata.realization_index = 1;
        b.load.iter_mut().for_each(|x| *x += 0.1 * mean);
        let report = drift_metric(&[a, b], DEFAULT_DRIFT_THRESHOLD).unwrap();
        let shift = report.records[1].relative_shift.unwrap();
        assert!((shift - 0.10).abs() < 1e-12, "{shift}");
        assert!(report.records[1].flagged);
        assert!(!report.records[0].flagged);
    }

    #[test]
    fn drift_single_record() {
        let report = drift_metric(&[offset_record(1.0, 0)], 0.05).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.records[0].relative_shift, None);
        assert_eq!(report.records[0].period_mean_load.len(), 2);
    }

    #[test]
    fn drift_rejects_mismatched_metadata() {
        let a = offset_record(1.0, 0);
        let mut b = a.clone();
        b.metadata.num_periods = 1;
        assert!(matches!(
            drift_metric(&[a, b], 0.05),
            Err(Error::Metadata(_))
        ));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.csv");
        let r = offset_record(1.0 / 3.0, 0);
        r.write(&path).unwrap();
        let back = read_record(&path).unwrap();
        assert_eq!(back, r);

        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(
            read_record_csv(&empty, r.metadata.clone()),
            Err(Error::EmptyRecord)
        ));

        let header_only = dir.path().join("h.csv");
        std::fs::write(&header_only, "time_s,load,indentation\n").unwrap();
        assert!(matches!(
            read_record_csv(&header_only, r.metadata.clone()),
            Err(Error::EmptyRecord)
        ));

        let nan = dir.path().join("nan.csv");
        std::fs::write(&nan, "time_s,load,indentation\n0,1,2\n0.1,NaN,2\n0.2,1,2\n").unwrap();
        match read_record_csv(&nan, meta(10.0, 1, 0, 1)) {
            Err(Error::NonFinite {
                row: 2,
                column: "load",
            }) => {}
            other => panic!("unexpected {other:?}"),
        }

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "time_s,load,indentation\n0,1,2\n0.1,x,2\n").unwrap();
        assert!(matches!(
            read_record_csv(&bad, meta(10.0, 1, 0, 1)),
            Err(Error::Parse { row: 2, .. })
        ));

        let back_in_time = dir.path().join("t.csv");
        std::fs::write(
            &back_in_time,
            "time_s,load,indentation\n0,1,2\n0.1,1,2\n0.05,1,2\n",
        )
        .unwrap();
        assert!(matches!(
            read_record_csv(&back_in_time, meta(10.0, 1, 0, 1)),
            Err(Error::NonMonotoneTime { row: 3 })
        ));

        let wrong_header = dir.path().join("w.csv");
        std::fs::write(&wrong_header, "t,u,y\n0,1,2\n").unwrap();
        assert!(matches!(
            read_record_csv(&wrong_header, meta(10.0, 1, 0, 1)),
            Err(Error::Parse { row: 0, .. })
        ));

        let short = dir.path().join("short.csv");
        std::fs::write(&short, "time_s,load,indentation\n0,1,2\n0.1,1,2\n").unwrap();
        assert!(matches!(
            read_record_csv(&short, meta(10.0, 4, 0, 1)),
            Err(Error::InsufficientLength {
                required: 4,
                actual: 2
            })
        ));
    }

    proptest! {
        #[test]
        fn segmentation_recovers_periods(
            n in 1usize..20,
            p in 1usize..5,
            prefix_frac in 0.0f64..1.0,
            seed in any::<u32>(),
        ) {
            let prefix = ((n as f64) * prefix_frac) as usize;
            let periods: Vec<Vec<f64>> = (0..p)
                .map(|j| (0..n).map(|i| ((seed as usize + i * 7 + j * 13) % 101) as f64 - 50.0).collect())
                .collect();
            let mut u = vec![9.0; prefix];
            u.extend(periods.iter().flatten());
            let y: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
            let r = MeasurementRecord::from_channels(meta(50.0, n, prefix, p), u, y).unwrap();
            let seg = segment_periods(&r).unwrap();
            prop_assert_eq!(&seg.block.periods_u, &periods);
        }

        #[test]
        fn remove_mean_is_idempotent(values in proptest::collection::vec(-1e3f64..1e3, 2..64)) {
            let half = values.len() / 2;
            let block = PeriodBlock {
                periods_u: vec![values[..half].to_vec(), values[half..2 * half].to_vec()],
                periods_y: vec![values[..half].to_vec(), values[half..2 * half].to_vec()],
            };
            let once = remove_mean(&block);
            let twice = remove_mean(&once.block);
            let scale = 1e-12 * values.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            prop_assert!(twice.mean_u.abs() <= scale);
            for (a, b) in once.block.periods_u.iter().flatten().zip(twice.block.periods_u.iter().flatten()) {
                prop_assert!((a - b).abs() <= scale);
            }
        }

        #[test]
        fn csv_round_trip_is_exact(values in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.csv");
            let y: Vec<f64> = values.iter().map(|v| v / 7.0).collect();
            let r = MeasurementRecord::from_channels(meta(1000.0, 1, 0, 1), values, y).unwrap();
            r.write(&path).unwrap();
            prop_assert_eq!(read_record(&path).unwrap(), r);
        }
    }
}
