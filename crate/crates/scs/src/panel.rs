//! Return panels: loading, validation, and transforms.
//!
//! A [`ReturnPanel`] is an immutable T×N matrix of per-period asset
//! returns with unique labels. Row order is time order; timestamps are
//! not interpreted. Missing or non-finite values are hard errors.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Hard cap on the asset universe: 2^25 - 1 masks keeps exhaustive
/// enumeration tractable.
pub const MAX_ASSETS: usize = 25;

/// Immutable T×N matrix of per-period returns, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    labels: Vec<String>,
    periods: usize,
    assets: usize,
    /// Column-major data: asset j occupies `data[j*periods..(j+1)*periods]`.
    data: Vec<f64>,
}

/// CSV ingestion options.
#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
    /// Skip a leading date column (carried nowhere; time order is row order).
    pub date_column: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            has_header: true,
            date_column: false,
        }
    }
}

/// Data-quality findings from [`ReturnPanel::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    ZeroVariance { asset: usize },
    NearDuplicatePair { a: usize, b: usize },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::ZeroVariance { asset } => write!(f, "zero variance: column {asset}"),
            Diagnostic::NearDuplicatePair { a, b } => {
                write!(f, "duplicate pair: columns {a} and {b}")
            }
        }
    }
}

impl ReturnPanel {
    /// Build a panel from row-major data. `rows[t][j]` is the return of
    /// asset `j` at time `t`.
    pub fn from_rows(labels: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = labels.len();
        if n == 0 || n > MAX_ASSETS {
            return Err(Error::BadAssetCount { n, max: MAX_ASSETS });
        }
        let t = rows.len();
        if t < 2 {
            return Err(Error::TooFewRows { min: 2, got: t });
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.is_empty() || !seen.insert(label.as_str()) {
                return Err(Error::BadLabel(label.clone()));
            }
        }
        let mut data = vec![0.0; t * n];
        for (ti, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::MalformedRow {
                    row: ti,
                    message: format!("expected {n} fields, got {}", row.len()),
                });
            }
            for (j, &x) in row.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::NonFinite { row: ti, col: j });
                }
                data[j * t + ti] = x;
            }
        }
        Ok(ReturnPanel {
            labels,
            periods: t,
            assets: n,
            data,
        })
    }

    /// Load a panel from a delimited text file. Row order is preserved
    /// as time order.
    pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(options.delimiter)
            .has_headers(options.has_header)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(file);

        let skip = usize::from(options.date_column);
        let labels: Vec<String> = if options.has_header {
            reader
                .headers()?
                .iter()
                .skip(skip)
                .map(|s| s.trim().to_string())
                .collect()
        } else {
            Vec::new()
        };

        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let mut row = Vec::with_capacity(record.len().saturating_sub(skip));
            for field in record.iter().skip(skip) {
                let value: f64 = field.parse().map_err(|_| Error::MalformedRow {
                    row: i,
                    message: format!("unparseable numeric field {field:?}"),
                })?;
                row.push(value);
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::TooFewRows { min: 2, got: 0 });
        }
        let n = rows[0].len();
        let labels = if options.has_header {
            labels
        } else {
            (0..n).map(|j| format!("asset{j}")).collect()
        };
        Self::from_rows(labels, &rows)
    }

    /// Write the panel back out as CSV with full float precision, so a
    /// load/save cycle round-trips bit-exactly.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(&self.labels)?;
        for t in 0..self.periods {
            let row: Vec<String> = (0..self.assets)
                .map(|j| format!("{:?}", self.get(t, j)))
                .collect();
            writer.write_record(&row)?;
        }
        writer.flush().map_err(|source| Error::Io {
            path: std::path::PathBuf::from("<csv output>"),
            source,
        })?;
        Ok(())
    }

    /// Convert a panel of strictly positive prices into log-returns:
    /// entry (t, j) = ln(price[t+1, j] / price[t, j]).
    pub fn log_returns(prices: &ReturnPanel) -> Result<ReturnPanel> {
        if prices.periods < 3 {
            return Err(Error::TooFewRows {
                min: 3,
                got: prices.periods,
            });
        }
        for j in 0..prices.assets {
            for t in 0..prices.periods {
                if prices.get(t, j) <= 0.0 {
                    return Err(Error::NonPositivePrice { row: t, col: j });
                }
            }
        }
        let rows: Vec<Vec<f64>> = (0..prices.periods - 1)
            .map(|t| {
                (0..prices.assets)
                    .map(|j| (prices.get(t + 1, j) / prices.get(t, j)).ln())
                    .collect()
            })
            .collect();
        ReturnPanel::from_rows(prices.labels.clone(), &rows)
    }

    /// Diagnostic sweep: constant series and near-duplicate asset pairs.
    /// An empty list means clean.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut findings = Vec::new();
        let mut moments = Vec::with_capacity(self.assets);
        for j in 0..self.assets {
            let col = self.column(j);
            let mean = col.iter().sum::<f64>() / self.periods as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                / (self.periods - 1) as f64;
            if var == 0.0 {
                findings.push(Diagnostic::ZeroVariance { asset: j });
            }
            moments.push((mean, var));
        }
        for a in 0..self.assets {
            for b in a + 1..self.assets {
                let (ma, va) = moments[a];
                let (mb, vb) = moments[b];
                if va == 0.0 || vb == 0.0 {
                    continue;
                }
                let cov = self
                    .column(a)
                    .iter()
                    .zip(self.column(b))
                    .map(|(x, y)| (x - ma) * (y - mb))
                    .sum::<f64>()
                    / (self.periods - 1) as f64;
                if cov / (va * vb).sqrt() > 1.0 - 1e-12 {
                    findings.push(Diagnostic::NearDuplicatePair { a, b });
                }
            }
        }
        findings
    }

    /// Multiply all returns by a constant (percent/fraction rescaling).
    pub fn scaled(&self, factor: f64) -> Result<ReturnPanel> {
        if !factor.is_finite() || factor == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "scale factor must be finite and nonzero, got {factor}"
            )));
        }
        let mut scaled = self.clone();
        for x in &mut scaled.data {
            *x *= factor;
        }
        Ok(scaled)
    }

    /// Panel restricted to the first `t` periods.
    pub fn truncated(&self, t: usize) -> Result<ReturnPanel> {
        if t < 2 || t > self.periods {
            return Err(Error::TooFewRows { min: 2, got: t });
        }
        if t == self.periods {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(t * self.assets);
        for j in 0..self.assets {
            data.extend_from_slice(&self.column(j)[..t]);
        }
        Ok(ReturnPanel {
            labels: self.labels.clone(),
            periods: t,
            assets: self.assets,
            data,
        })
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn assets(&self) -> usize {
        self.assets
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    #[inline]
    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.data[j * self.periods + t]
    }

    /// Contiguous return series of a single asset.
    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.periods..(j + 1) * self.periods]
    }
}
