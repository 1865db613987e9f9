//! Multivariate time series container and CSV ingestion.
//!
//! CSV layout is tidy: rows are time points, columns are variables, the first
//! column holds time labels. Lines starting with `#` are kept as comments so
//! emitted files round-trip byte-for-byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const SPACING_REL_TOL: f64 = 1e-6;

/// P variables observed at T equally spaced time points; values are P×T.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    variable_names: Vec<String>,
    time_labels: Vec<String>,
    timestamps: Vec<f64>,
    values: Array2<f64>,
    spacing: f64,
}

impl TimeSeriesFrame {
    /// Builds a frame from string time labels. Labels that all parse as
    /// numbers become the numeric timestamps (checked for strict increase and
    /// equal spacing); otherwise positions 0,1,2,... are used.
    pub fn new(
        variable_names: Vec<String>,
        time_labels: Vec<String>,
        values: Array2<f64>,
    ) -> Result<Self> {
        let parsed: Option<Vec<f64>> = time_labels
            .iter()
            .map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        let timestamps = match parsed {
            Some(ts) => ts,
            None => (0..time_labels.len()).map(|i| i as f64).collect(),
        };
        Self::with_timestamps(variable_names, time_labels, timestamps, values)
    }

    /// Builds a frame from numeric timestamps, generating display labels.
    pub fn from_numeric(
        variable_names: Vec<String>,
        timestamps: Vec<f64>,
        values: Array2<f64>,
    ) -> Result<Self> {
        let labels = timestamps.iter().map(|t| t.to_string()).collect();
        Self::with_timestamps(variable_names, labels, timestamps, values)
    }

    pub fn with_timestamps(
        variable_names: Vec<String>,
        time_labels: Vec<String>,
        timestamps: Vec<f64>,
        values: Array2<f64>,
    ) -> Result<Self> {
        let (p, t) = values.dim();
        if p == 0 {
            return Err(Error::InvalidData("frame needs at least one variable".into()));
        }
        if t < 2 {
            return Err(Error::InvalidData(format!(
                "frame needs at least two time points, got {t}"
            )));
        }
        if variable_names.len() != p {
            return Err(Error::DimensionMismatch {
                context: "frame variable names",
                left: variable_names.len().to_string(),
                right: p.to_string(),
            });
        }
        if time_labels.len() != t || timestamps.len() != t {
            return Err(Error::DimensionMismatch {
                context: "frame time labels",
                left: format!("{}/{}", time_labels.len(), timestamps.len()),
                right: t.to_string(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("frame contains non-finite values".into()));
        }
        let spacing = timestamps[1] - timestamps[0];
        if spacing <= 0.0 {
            return Err(Error::InvalidData(
                "timestamps must be strictly increasing".into(),
            ));
        }
        for w in timestamps.windows(2) {
            let d = w[1] - w[0];
            if d <= 0.0 {
                return Err(Error::InvalidData(
                    "timestamps must be strictly increasing".into(),
                ));
            }
            if (d - spacing).abs() > SPACING_REL_TOL * spacing.abs().max(1.0) {
                return Err(Error::InvalidData(format!(
                    "timestamps must be equally spaced: step {d} differs from {spacing}"
                )));
            }
        }
        Ok(Self {
            variable_names,
            time_labels,
            timestamps,
            values,
            spacing,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.values.ncols()
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// P×T value matrix, row per variable.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// A parsed CSV: the frame plus any leading `#` comment lines.
#[derive(Debug, Clone)]
pub struct CsvFrame {
    pub frame: TimeSeriesFrame,
    pub comments: Vec<String>,
}

/// Reads a tidy CSV (rows = time, columns = variables, first column = time
/// labels). Leading `#` lines are collected as comments.
pub fn read_csv(path: &Path) -> Result<CsvFrame> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv_from(BufReader::new(file), &path.display().to_string())
}

pub fn read_csv_from<R: Read>(reader: R, path: &str) -> Result<CsvFrame> {
    let mut content = String::new();
    let mut reader = reader;
    reader.read_to_string(&mut content).map_err(|source| Error::Io {
        path: path.to_string(),
        source,
    })?;

    let mut comments = Vec::new();
    let mut body = String::new();
    for line in content.lines() {
        if line.starts_with('#') && body.is_empty() {
            comments.push(line.to_string());
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedInput {
            path: path.to_string(),
            row: 0,
            detail: e.to_string(),
        })?
        .clone();
    if headers.len() < 2 {
        return Err(Error::MalformedInput {
            path: path.to_string(),
            row: 0,
            detail: "need a time column and at least one variable column".into(),
        });
    }
    let variable_names: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
    let p = variable_names.len();

    let mut time_labels = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::MalformedInput {
            path: path.to_string(),
            row,
            detail: e.to_string(),
        })?;
        if record.len() != p + 1 {
            return Err(Error::MalformedInput {
                path: path.to_string(),
                row,
                detail: format!("expected {} cells, got {}", p + 1, record.len()),
            });
        }
        time_labels.push(record[0].to_string());
        let mut col = Vec::with_capacity(p);
        for (j, cell) in record.iter().skip(1).enumerate() {
            if cell.is_empty() {
                return Err(Error::MalformedInput {
                    path: path.to_string(),
                    row,
                    detail: format!("missing cell in column '{}'", variable_names[j]),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::MalformedInput {
                path: path.to_string(),
                row,
                detail: format!("column '{}': cannot parse '{}' as a number", variable_names[j], cell),
            })?;
            col.push(v);
        }
        columns.push(col);
    }
    let t = columns.len();
    if t < 2 {
        return Err(Error::MalformedInput {
            path: path.to_string(),
            row: t,
            detail: format!("need at least two data rows, got {t}"),
        });
    }
    let mut values = Array2::zeros((p, t));
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            values[(i, j)] = v;
        }
    }
    let frame = TimeSeriesFrame::new(variable_names, time_labels, values)?;
    Ok(CsvFrame { frame, comments })
}

/// Writes a frame in the tidy layout. `first_header` names the label column
/// ("time" for series, "variable" for per-variable tables).
pub fn write_csv(
    path: &Path,
    frame: &TimeSeriesFrame,
    comments: &[String],
    first_header: &str,
) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    for c in comments {
        writeln!(out, "{c}").map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec![first_header.to_string()];
    header.extend(frame.variable_names().iter().cloned());
    wtr.write_record(&header).map_err(|e| Error::Model(e.to_string()))?;
    for j in 0..frame.n_obs() {
        let mut record = vec![frame.time_labels()[j].clone()];
        for i in 0..frame.n_vars() {
            record.push(frame.values()[(i, j)].to_string());
        }
        wtr.write_record(&record).map_err(|e| Error::Model(e.to_string()))?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}
