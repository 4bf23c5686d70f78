//! From a CSV file to trained parameters and test metrics.

mod data;
mod snapshot;
mod train;
mod windows;

pub use data::{chrono_split, load_csv, parse_csv, Series, SplitRanges, ZScore};
pub use snapshot::{Snapshot, SNAPSHOT_FORMAT, SNAPSHOT_VERSION};
pub use train::{
    evaluate, evaluate_with, metrics, mse_loss, predict, total_loss, train, train_with, EpochLog, LossBreakdown, Metrics, Trained,
    EPOCH_LOG_HEADER, SHUFFLE_STREAM,
};
pub use windows::{window_count, LevelTargets, WindowBatch, WindowSet};

use crate::config::{Normalization, RunConfig};
use crate::error::Result;
use crate::hierlabel::IntervalPartition;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" | "validation" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(crate::Error::Usage(format!("unknown split {other:?} (expected train, val or test)"))),
        }
    }
}

fn restrict(cfg: &RunConfig, series: &Series) -> Result<Series> {
    let s = series.select(&cfg.data.channels)?;
    match cfg.data.rows {
        Some(n) => s.head(n),
        None => Ok(s),
    }
}

/// Normalized, labeled window sets for the three splits.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub columns: Vec<String>,
    pub ranges: SplitRanges,
    pub norm: ZScore,
    pub partitions: Vec<IntervalPartition>,
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

impl Prepared {
    /// Fits normalization and partitions on the training rows.
    pub fn new(cfg: &RunConfig, series: &Series) -> Result<Self> {
        let series = restrict(cfg, series)?;
        let ranges = chrono_split(series.rows(), cfg.data.split)?;
        let norm = match cfg.data.normalization {
            Normalization::Zscore => ZScore::fit(series.rows_slice(ranges.train.clone()), series.channels())?,
            Normalization::None => ZScore::identity(series.channels()),
        };
        let train_rows = norm.normalize(series.rows_slice(ranges.train.clone()));
        let d = series.channels();
        let cols: Vec<Vec<f64>> =
            (0..d).map(|c| train_rows.iter().skip(c).step_by(d).copied().collect()).collect();
        let partitions = cfg.hierarchy()?.fit(&cols)?;
        Self::with_fitted(cfg, &series, norm, partitions)
    }

    /// Reuses stored normalization and partitions.
    pub fn with_fitted(cfg: &RunConfig, series: &Series, norm: ZScore, partitions: Vec<IntervalPartition>) -> Result<Self> {
        let series = restrict(cfg, series)?;
        let (l, t) = (cfg.data.lookback, cfg.data.horizon);
        let ranges = chrono_split(series.rows(), cfg.data.split)?;
        let ctx = ranges.with_context(l);
        ctx.check(l, t)?;
        let d = series.channels();
        let set = |r: std::ops::Range<usize>| {
            WindowSet::new(norm.normalize(series.rows_slice(r)), d, l, t, &partitions)
        };
        Ok(Self {
            columns: series.columns.clone(),
            train: set(ctx.train.clone())?,
            val: set(ctx.val.clone())?,
            test: set(ctx.test.clone())?,
            ranges,
            norm,
            partitions,
        })
    }

    pub fn split(&self, s: Split) -> &WindowSet {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[cfg(test)]
mod tests;
