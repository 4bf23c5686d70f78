//! CSV ingestion, chronological splits and z-score normalization.

use std::io::Read;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multivariate series, row-major `rows × channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub columns: Vec<String>,
    pub dates: Vec<String>,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(columns: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if columns.is_empty() || values.len() % columns.len() != 0 {
            return Err(Error::Dimension(format!(
                "{} values do not fill rows of {} channels",
                values.len(),
                columns.len()
            )));
        }
        let rows = values.len() / columns.len();
        Ok(Self { columns, dates: (0..rows).map(|i| i.to_string()).collect(), values })
    }

    pub fn rows(&self) -> usize {
        self.dates.len()
    }

    pub fn channels(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.channels()).copied().collect()
    }

    /// Rows in `range`, row-major.
    pub fn rows_slice(&self, range: Range<usize>) -> &[f64] {
        let d = self.channels();
        &self.values[range.start * d..range.end * d]
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> Result<Series> {
        if n == 0 || n > self.rows() {
            return Err(Error::Config(format!("rows = {n} is outside 1..={}", self.rows())));
        }
        Ok(Series {
            columns: self.columns.clone(),
            dates: self.dates[..n].to_vec(),
            values: self.values[..n * self.channels()].to_vec(),
        })
    }

    /// Keeps the named columns in the given order; an empty list keeps all.
    pub fn select(&self, names: &[String]) -> Result<Series> {
        if names.is_empty() {
            return Ok(self.clone());
        }
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.columns
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::Config(format!("unknown channel {n:?}; available: {:?}", self.columns)))
            })
            .collect::<Result<_>>()?;
        let d = self.channels();
        let values = (0..self.rows()).flat_map(|r| idx.iter().map(move |&c| self.values[r * d + c])).collect();
        Ok(Series { columns: names.to_vec(), dates: self.dates.clone(), values })
    }
}

pub fn load_csv(path: &Path) -> Result<Series> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file)
}

/// First column is the timestamp; every other column must be numeric.
pub fn parse_csv(reader: impl Read) -> Result<Series> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Ingestion { line: 1, column: String::new(), message: e.to_string() })?
        .clone();
    if header.len() < 2 {
        return Err(Error::Ingestion {
            line: 1,
            column: String::new(),
            message: "expected a date column followed by at least one numeric column".into(),
        });
    }
    let columns: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Ingestion {
            line: e.position().map_or(0, |p| p.line()),
            column: String::new(),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        dates.push(record.get(0).unwrap_or_default().trim().to_string());
        for (c, name) in columns.iter().enumerate() {
            let cell = record.get(c + 1).unwrap_or_default().trim();
            let v: f64 = cell.parse().map_err(|_| Error::Ingestion {
                line,
                column: name.clone(),
                message: if cell.is_empty() {
                    "missing value".into()
                } else {
                    format!("not a number: {cell:?}")
                },
            })?;
            if !v.is_finite() {
                return Err(Error::Ingestion { line, column: name.clone(), message: format!("non-finite value {cell:?}") });
            }
            values.push(v);
        }
    }
    if dates.is_empty() {
        return Err(Error::Ingestion { line: 1, column: String::new(), message: "no data rows".into() });
    }
    Ok(Series { columns, dates, values })
}

/// Contiguous train / validation / test row ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Train and validation take `⌊ratio·Q⌋` rows; test takes the rest.
pub fn chrono_split(rows: usize, ratios: [f64; 3]) -> Result<SplitRanges> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    let count = |r: f64| (r * rows as f64 + 1e-9).floor() as usize;
    let a = count(ratios[0]);
    let b = a + count(ratios[1]);
    Ok(SplitRanges { train: 0..a, val: a..b, test: b..rows })
}

impl SplitRanges {
    /// Extends validation and test backwards by `lookback` rows of history.
    pub fn with_context(&self, lookback: usize) -> SplitRanges {
        SplitRanges {
            train: self.train.clone(),
            val: self.val.start.saturating_sub(lookback)..self.val.end,
            test: self.test.start.saturating_sub(lookback)..self.test.end,
        }
    }

    /// Every range must hold at least one window.
    pub fn check(&self, lookback: usize, horizon: usize) -> Result<()> {
        for (name, r) in [("train", &self.train), ("validation", &self.val), ("test", &self.test)] {
            if r.len() < lookback + horizon {
                return Err(Error::Config(format!(
                    "{name} split has {} rows, fewer than lookback + horizon = {}",
                    r.len(),
                    lookback + horizon
                )));
            }
        }
        Ok(())
    }
}

/// Per-channel affine normalization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScore {
    /// Population mean and standard deviation over `rows` (row-major).
    pub fn fit(rows: &[f64], channels: usize) -> Result<Self> {
        if channels == 0 || rows.is_empty() || rows.len() % channels != 0 {
            return Err(Error::Data("cannot fit normalization on an empty split".into()));
        }
        let n = (rows.len() / channels) as f64;
        let mut mean = vec![0.0; channels];
        for r in rows.chunks(channels) {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; channels];
        for r in rows.chunks(channels) {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
        if let Some(c) = std.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::Data(format!("channel {c} is constant on the training split")));
        }
        Ok(Self { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, rows: &[f64]) -> Vec<f64> {
        let d = self.channels();
        rows.iter().enumerate().map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d]).collect()
    }

    pub fn denormalize(&self, rows: &[f64]) -> Vec<f64> {
        let d = self.channels();
        rows.iter().enumerate().map(|(i, v)| v * self.std[i % d] + self.mean[i % d]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_csv() {
        let text = "date,a,b\n2020-01-01,1,2\n2020-01-02,3,4.5\n2020-01-03,-1,0\n";
        let s = parse_csv(text.as_bytes()).unwrap();
        assert_eq!(s.rows(), 3);
        assert_eq!(s.channels(), 2);
        assert_eq!(s.columns, vec!["a", "b"]);
        assert_eq!(s.values, vec![1.0, 2.0, 3.0, 4.5, -1.0, 0.0]);
        assert_eq!(s.column(1), vec![2.0, 4.5, 0.0]);
    }

    #[test]
    fn missing_cell_names_line_and_column() {
        let text = "date,a,b\n2020-01-01,1,2\n2020-01-02,,4\n";
        match parse_csv(text.as_bytes()).unwrap_err() {
            Error::Ingestion { line, column, message } => {
                assert_eq!(line, 3);
                assert_eq!(column, "a");
                assert!(message.contains("missing"));
            }
            e => panic!("unexpected {e}"),
        }
        let text = "date,a\n2020-01-01,x\n";
        assert!(matches!(parse_csv(text.as_bytes()), Err(Error::Ingestion { line: 2, .. })));
        let text = "date,a\n2020-01-01,1,7\n";
        assert!(matches!(parse_csv(text.as_bytes()), Err(Error::Ingestion { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_csv(Path::new("/nonexistent/x.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn head_keeps_leading_rows() {
        let s = Series::new(vec!["a".into(), "b".into()], (0..8).map(f64::from).collect()).unwrap();
        let h = s.head(3).unwrap();
        assert_eq!(h.rows(), 3);
        assert_eq!(h.values, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(matches!(s.head(0), Err(Error::Config(_))));
        assert!(matches!(s.head(5), Err(Error::Config(_))));
    }

    #[test]
    fn select_channels() {
        let s = Series::new(vec!["a".into(), "b".into(), "c".into()], (0..6).map(f64::from).collect()).unwrap();
        let t = s.select(&["c".into(), "a".into()]).unwrap();
        assert_eq!(t.values, vec![2.0, 0.0, 5.0, 3.0]);
        assert!(matches!(s.select(&["z".into()]), Err(Error::Config(_))));
    }

    #[test]
    fn split_arithmetic() {
        let s = chrono_split(10, [0.6, 0.2, 0.2]).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..6, 6..8, 8..10));
        assert!(matches!(chrono_split(10, [0.6, 0.3, 0.2]), Err(Error::Config(_))));
        let s = chrono_split(17420, [0.6, 0.2, 0.2]).unwrap();
        assert_eq!(s.train.len(), 10452);
        assert_eq!(s.val.len(), 3484);
        assert_eq!(s.test.len(), 3484);
        let c = s.with_context(336);
        assert_eq!(c.val, 10452 - 336..13936);
        assert_eq!(c.test, 13936 - 336..17420);
    }

    #[test]
    fn split_too_small() {
        let s = chrono_split(10, [0.6, 0.2, 0.2]).unwrap().with_context(2);
        assert!(s.check(2, 2).is_ok());
        assert!(matches!(s.check(3, 2), Err(Error::Config(_))));
    }

    #[test]
    fn zscore_round_trip_and_errors() {
        let rows = vec![1.0, 10.0, 2.0, 20.0, 4.0, 60.0];
        let z = ZScore::fit(&rows, 2).unwrap();
        let n = z.normalize(&rows);
        let mean0 = (n[0] + n[2] + n[4]) / 3.0;
        assert!(mean0.abs() < 1e-12);
        for (a, b) in z.denormalize(&n).iter().zip(&rows) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(ZScore::fit(&[1.0, 3.0, 1.0, 4.0], 2), Err(Error::Data(_))));
    }

    #[test]
    fn zscore_on_standard_data_is_near_identity() {
        // symmetric values with unit population variance
        let rows = vec![-1.0, 1.0, -1.0, 1.0];
        let z = ZScore::fit(&rows, 1).unwrap();
        assert_eq!(z.normalize(&rows), rows);
    }
}
