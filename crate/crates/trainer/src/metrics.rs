use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TrainError};

/// One line of the metrics file. Absent values are written as empty
/// fields.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub episodes: u64,
    pub test_return_mean: Option<f64>,
    pub test_return_std: Option<f64>,
    pub test_win_rate: Option<f64>,
    pub capture_count: Option<f64>,
    pub l_lp: Option<f64>,
    pub l_ca: Option<f64>,
    pub l_ib: Option<f64>,
    pub l_qstar: Option<f64>,
    pub l_qtot: Option<f64>,
    pub l_alpha: Option<f64>,
    pub alpha: Option<f64>,
    pub policy_entropy: Option<f64>,
    pub epsilon: Option<f64>,
    pub wall_clock_seconds: Option<f64>,
}

pub const COLUMNS: [&str; 16] = [
    "env_steps",
    "episodes",
    "test_return_mean",
    "test_return_std",
    "test_win_rate",
    "capture_count",
    "l_lp",
    "l_ca",
    "l_ib",
    "l_qstar",
    "l_qtot",
    "l_alpha",
    "alpha",
    "policy_entropy",
    "epsilon",
    "wall_clock_seconds",
];

/// Formats with 6 significant digits, shortest round-trip spelling;
/// exponent notation outside `[1e-4, 1e15)`.
pub fn format_float(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float");
    let mag = rounded.abs();
    if mag != 0.0 && !(1e-4..1e15).contains(&mag) {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

impl MetricsRow {
    fn optionals(&self) -> [Option<f64>; 14] {
        [
            self.test_return_mean,
            self.test_return_std,
            self.test_win_rate,
            self.capture_count,
            self.l_lp,
            self.l_ca,
            self.l_ib,
            self.l_qstar,
            self.l_qtot,
            self.l_alpha,
            self.alpha,
            self.policy_entropy,
            self.epsilon,
            self.wall_clock_seconds,
        ]
    }

    fn optionals_mut(&mut self) -> [&mut Option<f64>; 14] {
        [
            &mut self.test_return_mean,
            &mut self.test_return_std,
            &mut self.test_win_rate,
            &mut self.capture_count,
            &mut self.l_lp,
            &mut self.l_ca,
            &mut self.l_ib,
            &mut self.l_qstar,
            &mut self.l_qtot,
            &mut self.l_alpha,
            &mut self.alpha,
            &mut self.policy_entropy,
            &mut self.epsilon,
            &mut self.wall_clock_seconds,
        ]
    }

    pub fn to_record(&self) -> Vec<String> {
        let mut out = vec![self.env_steps.to_string(), self.episodes.to_string()];
        out.extend(self.optionals().iter().map(|v| v.map(format_float).unwrap_or_default()));
        out
    }

    pub fn from_record(record: &csv::StringRecord) -> Result<Self> {
        if record.len() != COLUMNS.len() {
            return Err(TrainError::Metrics(format!(
                "expected {} fields, found {}",
                COLUMNS.len(),
                record.len()
            )));
        }
        let int = |i: usize| {
            record[i]
                .parse::<u64>()
                .map_err(|e| TrainError::Metrics(format!("{}: {e}", COLUMNS[i])))
        };
        let mut row = MetricsRow {
            env_steps: int(0)?,
            episodes: int(1)?,
            ..MetricsRow::default()
        };
        for (j, slot) in row.optionals_mut().into_iter().enumerate() {
            let field = &record[j + 2];
            if !field.is_empty() {
                *slot = Some(
                    field
                        .parse()
                        .map_err(|e| TrainError::Metrics(format!("{}: {e}", COLUMNS[j + 2])))?,
                );
            }
        }
        Ok(row)
    }

    /// The row as it reads back from the file.
    pub fn rounded(&self) -> Self {
        let mut r = *self;
        for slot in r.optionals_mut() {
            *slot = slot.map(|v| format_float(v).parse().expect("formatted float"));
        }
        r
    }
}

/// Append-only metrics file with a header row.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl MetricsWriter<File> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::new(File::create(path)?)
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(COLUMNS).map_err(csv_err)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.to_record()).map_err(csv_err)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner.into_inner().map_err(|e| TrainError::Metrics(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> TrainError {
    TrainError::Metrics(e.to_string())
}

/// Parses a metrics file, checking the header.
pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().ne(COLUMNS) {
        return Err(TrainError::Metrics(format!("unexpected header {header:?}")));
    }
    reader
        .records()
        .map(|r| MetricsRow::from_record(&r.map_err(csv_err)?))
        .collect()
}

pub fn read_metrics_file(path: &Path) -> Result<Vec<MetricsRow>> {
    read_metrics(File::open(path)?)
}
