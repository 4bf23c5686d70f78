//! Sliding windows with per-level interval labels for the target rows.

use crate::error::{Error, Result};
use crate::hierlabel::{build_labels, IntervalPartition, LevelLabels};
use crate::ndgrad::Tensor;
use crate::uac::OneHot;

pub fn window_count(rows: usize, lookback: usize, horizon: usize) -> usize {
    (rows + 1).saturating_sub(lookback + horizon)
}

/// All stride-1 windows over one split.
#[derive(Debug, Clone)]
pub struct WindowSet {
    channels: usize,
    lookback: usize,
    horizon: usize,
    values: Vec<f64>,
    labels: Vec<LevelLabels>,
    classes: Vec<usize>,
}

/// Labels of one hierarchy level for a batch, laid out `[B, D, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTargets {
    pub classes: usize,
    pub labels: Vec<usize>,
    pub deltas: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// Window start offsets within the split.
    pub starts: Vec<usize>,
    /// `[B, D, L]`
    pub x: Tensor,
    /// `[B, D, T]`
    pub y: Tensor,
    /// One entry per hierarchy level.
    pub levels: Vec<LevelTargets>,
}

impl WindowBatch {
    pub fn size(&self) -> usize {
        self.starts.len()
    }

    pub fn onehot(&self, level: usize) -> Result<OneHot> {
        let t = &self.levels[level];
        OneHot::from_labels(self.y.shape(), &t.labels, t.classes)
    }
}

impl WindowSet {
    /// `values` are the split's rows (row-major, context included).
    pub fn new(
        values: Vec<f64>,
        channels: usize,
        lookback: usize,
        horizon: usize,
        partitions: &[IntervalPartition],
    ) -> Result<Self> {
        if channels == 0 || values.len() % channels != 0 {
            return Err(Error::Dimension("split values do not fill whole rows".into()));
        }
        let rows = values.len() / channels;
        if lookback == 0 || horizon == 0 || window_count(rows, lookback, horizon) == 0 {
            return Err(Error::Config(format!(
                "split of {rows} rows holds no window with lookback {lookback} and horizon {horizon}"
            )));
        }
        let labels = build_labels(&values, channels, partitions)?;
        let classes = partitions.iter().map(IntervalPartition::classes).collect();
        Ok(Self { channels, lookback, horizon, values, labels, classes })
    }

    pub fn len(&self) -> usize {
        window_count(self.values.len() / self.channels, self.lookback, self.horizon)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn levels(&self) -> usize {
        self.labels.len()
    }

    /// Row-major split values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn batch(&self, starts: &[usize]) -> WindowBatch {
        let (d, l, t) = (self.channels, self.lookback, self.horizon);
        let b = starts.len();
        let mut x = Vec::with_capacity(b * d * l);
        let mut y = Vec::with_capacity(b * d * t);
        let mut levels: Vec<(Vec<usize>, Vec<f64>)> =
            self.labels.iter().map(|_| (Vec::with_capacity(b * d * t), Vec::with_capacity(b * d * t))).collect();
        for &s in starts {
            assert!(s < self.len(), "window {s} out of range");
            for c in 0..d {
                x.extend((s..s + l).map(|r| self.values[r * d + c]));
                for r in s + l..s + l + t {
                    y.push(self.values[r * d + c]);
                    for (lv, (cls, del)) in self.labels.iter().zip(levels.iter_mut()) {
                        cls.push(lv.classes[r * d + c]);
                        del.push(lv.deltas[r * d + c]);
                    }
                }
            }
        }
        WindowBatch {
            starts: starts.to_vec(),
            x: Tensor::new(vec![b, d, l], x).expect("sized"),
            y: Tensor::new(vec![b, d, t], y).expect("sized"),
            levels: levels
                .into_iter()
                .zip(&self.classes)
                .map(|((labels, deltas), &classes)| LevelTargets {
                    classes,
                    labels,
                    deltas: Tensor::new(vec![b, d, t], deltas).expect("sized"),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierlabel::HierarchySpec;

    fn set(rows: usize, channels: usize, l: usize, t: usize) -> WindowSet {
        let values: Vec<f64> = (0..rows * channels).map(|i| (i as f64 * 0.7).sin() + i as f64 * 0.01).collect();
        let cols: Vec<Vec<f64>> = (0..channels).map(|c| values.iter().skip(c).step_by(channels).copied().collect()).collect();
        let parts = HierarchySpec::default().fit(&cols).unwrap();
        WindowSet::new(values, channels, l, t, &parts).unwrap()
    }

    #[test]
    fn count_formula() {
        assert_eq!(window_count(10, 3, 2), 6);
        assert_eq!(window_count(4, 3, 2), 0);
        assert_eq!(set(10, 1, 3, 2).len(), 6);
    }

    #[test]
    fn first_window_indexing() {
        let s = set(10, 2, 3, 2);
        let b = s.batch(&[0]);
        let v = s.values();
        // channel 0 history is rows 0..3, target rows 3..5
        assert_eq!(&b.x.data()[..3], &[v[0], v[2], v[4]]);
        assert_eq!(&b.x.data()[3..], &[v[1], v[3], v[5]]);
        assert_eq!(b.y.data(), &[v[6], v[8], v[7], v[9]]);
        assert_eq!(b.x.shape(), &[1, 2, 3]);
        assert_eq!(b.levels.len(), 3);
        assert_eq!(b.onehot(2).unwrap().mask().shape(), &[1, 2, 2, 4]);
    }

    #[test]
    fn fine_labels_nest_in_coarse_labels() {
        let s = set(60, 3, 5, 4);
        let spec = HierarchySpec::default();
        let nest = spec.nesting(2);
        let all: Vec<usize> = (0..s.len()).collect();
        let b = s.batch(&all);
        for (f, c) in b.levels[2].labels.iter().zip(&b.levels[1].labels) {
            assert_eq!(nest.parent(*f), *c);
        }
    }

    #[test]
    fn too_short_split() {
        let parts = HierarchySpec::new(vec![1]).unwrap().fit(&[vec![0.0, 1.0, 2.0, 3.0]]).unwrap();
        let e = WindowSet::new(vec![0.0, 1.0, 2.0, 3.0], 1, 3, 2, &parts);
        assert!(matches!(e, Err(Error::Config(_))));
    }
}
