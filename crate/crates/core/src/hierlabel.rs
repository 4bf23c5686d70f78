//! Quantile group mapping and hierarchical class labels.
//!
//! A level with `K` classes sorts the training values of a channel and takes
//! the `K + 1` order statistics at indices `⌊(Q−1)·j/K⌋`, `j = 0..=K`, as
//! interval boundaries. Intervals are half-open `[left, right)` except the
//! last, which is closed; values outside the training range clamp to the
//! first or last class. Because every finer class count is a multiple of the
//! coarser one, each coarse boundary is also a fine boundary.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel class boundaries for one hierarchy level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalPartition {
    pub level: usize,
    classes: usize,
    /// `boundaries[channel]` holds `classes + 1` non-decreasing values.
    boundaries: Vec<Vec<f64>>,
}

/// Sorted-order index of the `j`-th boundary for `q` values and `k` classes.
pub fn boundary_index(q: usize, k: usize, j: usize) -> usize {
    (q - 1) * j / k
}

impl IntervalPartition {
    /// Fits boundaries independently for every channel.
    pub fn fit(level: usize, channels: &[Vec<f64>], classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Config("a level needs at least one class".into()));
        }
        let boundaries = channels
            .iter()
            .enumerate()
            .map(|(c, values)| fit_channel(values, classes).map_err(|e| annotate(e, c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            level,
            classes,
            boundaries,
        })
    }

    /// Builds a partition from explicit boundaries (e.g. a parsed table).
    pub fn from_boundaries(level: usize, boundaries: Vec<Vec<f64>>) -> Result<Self> {
        let classes = boundaries
            .first()
            .map(|b| b.len().saturating_sub(1))
            .ok_or_else(|| Error::Data("partition without channels".into()))?;
        if classes == 0 {
            return Err(Error::Data("partition needs at least two boundaries".into()));
        }
        for (c, b) in boundaries.iter().enumerate() {
            if b.len() != classes + 1 {
                return Err(Error::Data(format!(
                    "channel {c} has {} boundaries, expected {}",
                    b.len(),
                    classes + 1
                )));
            }
            if b.windows(2).any(|w| !(w[0] <= w[1])) {
                return Err(Error::Data(format!("channel {c} boundaries are not sorted")));
            }
        }
        Ok(Self {
            level,
            classes,
            boundaries,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn channels(&self) -> usize {
        self.boundaries.len()
    }

    pub fn boundaries(&self, channel: usize) -> &[f64] {
        &self.boundaries[channel]
    }

    /// Class index (0-based) and offset from the class's left boundary.
    pub fn classify(&self, channel: usize, y: f64) -> Result<(usize, f64)> {
        if y.is_nan() {
            return Err(Error::Data(format!("NaN target on channel {channel}")));
        }
        let b = &self.boundaries[channel];
        // Count of interior boundaries at or below y; clamps both tails.
        let k = b[1..self.classes].partition_point(|&edge| edge <= y);
        Ok((k, y - b[k]))
    }

    /// Train-split histogram of class counts for one channel.
    pub fn histogram(&self, channel: usize, values: &[f64]) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.classes];
        for &v in values {
            counts[self.classify(channel, v)?.0] += 1;
        }
        Ok(counts)
    }
}

fn annotate(e: Error, channel: usize) -> Error {
    match e {
        Error::Data(m) => Error::Data(format!("channel {channel}: {m}")),
        Error::Config(m) => Error::Config(format!("channel {channel}: {m}")),
        other => other,
    }
}

fn fit_channel(values: &[f64], classes: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Data("empty channel".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("NaN in training values".into()));
    }
    let q = values.len();
    if classes > q {
        return Err(Error::Config(format!("{classes} classes exceed {q} values")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distinct = 1 + sorted.windows(2).filter(|w| w[0] != w[1]).count();
    if distinct < classes {
        return Err(Error::Data(format!(
            "{distinct} distinct values cannot fill {classes} classes"
        )));
    }
    Ok((0..=classes)
        .map(|j| sorted[boundary_index(q, classes, j)])
        .collect())
}

/// Ordered class counts per level plus the fine→coarse parent maps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchySpec {
    classes: Vec<usize>,
}

impl Default for HierarchySpec {
    fn default() -> Self {
        Self {
            classes: vec![1, 2, 4],
        }
    }
}

impl HierarchySpec {
    /// Levels ordered coarsest first; each count must divide the next.
    pub fn new(classes: Vec<usize>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Config("hierarchy needs at least one level".into()));
        }
        if classes.contains(&0) {
            return Err(Error::Config("class counts must be positive".into()));
        }
        for w in classes.windows(2) {
            if w[1] <= w[0] || w[1] % w[0] != 0 {
                return Err(Error::Config(format!(
                    "class count {} is not a larger multiple of {}",
                    w[1], w[0]
                )));
            }
        }
        Ok(Self { classes })
    }

    pub fn levels(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self, level: usize) -> usize {
        self.classes[level]
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.classes
    }

    /// Parent class at `level - 1` for every class at `level`.
    pub fn nesting(&self, level: usize) -> NestingMap {
        assert!(level > 0 && level < self.classes.len());
        let ratio = self.classes[level] / self.classes[level - 1];
        NestingMap::new(
            (0..self.classes[level]).map(|k| k / ratio).collect(),
            self.classes[level - 1],
        )
        .expect("divisible class counts give a total, surjective map")
    }

    /// Fits one partition per level on per-channel training values.
    pub fn fit(&self, channels: &[Vec<f64>]) -> Result<Vec<IntervalPartition>> {
        self.classes
            .iter()
            .enumerate()
            .map(|(level, &k)| IntervalPartition::fit(level, channels, k))
            .collect()
    }
}

/// Fine class → coarse parent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestingMap {
    parent: Vec<usize>,
    coarse: usize,
}

impl NestingMap {
    pub fn new(parent: Vec<usize>, coarse: usize) -> Result<Self> {
        if parent.is_empty() {
            return Err(Error::Config("nesting map over no fine classes".into()));
        }
        let mut sizes = vec![0usize; coarse];
        for &p in &parent {
            if p >= coarse {
                return Err(Error::Config(format!("parent {p} out of range for {coarse} coarse classes")));
            }
            sizes[p] += 1;
        }
        if let Some(g) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("coarse class {g} has no fine members")));
        }
        Ok(Self { parent, coarse })
    }

    pub fn fine_classes(&self) -> usize {
        self.parent.len()
    }

    pub fn coarse_classes(&self) -> usize {
        self.coarse
    }

    pub fn parent(&self, fine: usize) -> usize {
        self.parent[fine]
    }

    pub fn group_size(&self, coarse: usize) -> usize {
        self.parent.iter().filter(|&&p| p == coarse).count()
    }
}

/// Class and offset labels for one level over a `rows × channels` block.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelLabels {
    pub classes: Vec<usize>,
    pub deltas: Vec<f64>,
}

/// Labels every value of a row-major `rows × channels` matrix at every level.
pub fn build_labels(
    values: &[f64],
    channels: usize,
    partitions: &[IntervalPartition],
) -> Result<Vec<LevelLabels>> {
    if channels == 0 || values.len() % channels != 0 {
        return Err(Error::Dimension(format!(
            "{} values do not form rows of {channels} channels",
            values.len()
        )));
    }
    partitions
        .iter()
        .map(|p| {
            if p.channels() != channels {
                return Err(Error::Dimension(format!(
                    "partition for level {} covers {} channels, data has {channels}",
                    p.level,
                    p.channels()
                )));
            }
            let mut classes = Vec::with_capacity(values.len());
            let mut deltas = Vec::with_capacity(values.len());
            for (i, &v) in values.iter().enumerate() {
                let (k, d) = p.classify(i % channels, v)?;
                classes.push(k);
                deltas.push(d);
            }
            Ok(LevelLabels { classes, deltas })
        })
        .collect()
}

/// Writes partitions as a tab-separated table: `level channel classes b0 .. bK`.
/// Floats use the shortest representation that round-trips exactly.
pub fn write_partition_table(partitions: &[IntervalPartition]) -> String {
    let mut out = String::from("# level\tchannel\tclasses\tboundaries\n");
    for p in partitions {
        for c in 0..p.channels() {
            let _ = write!(out, "{}\t{}\t{}", p.level, c, p.classes);
            for b in p.boundaries(c) {
                let _ = write!(out, "\t{b:?}");
            }
            out.push('\n');
        }
    }
    out
}

/// Parses [`write_partition_table`] output; lines starting with `#` are skipped.
pub fn parse_partition_table(text: &str) -> Result<Vec<IntervalPartition>> {
    let mut levels: Vec<(usize, Vec<Vec<f64>>)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Data(format!("partition table line {}: {what}", n + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 5 {
            return Err(bad("too few fields"));
        }
        let level: usize = fields[0].parse().map_err(|_| bad("bad level"))?;
        let channel: usize = fields[1].parse().map_err(|_| bad("bad channel"))?;
        let classes: usize = fields[2].parse().map_err(|_| bad("bad class count"))?;
        let bounds = fields[3..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad("bad boundary")))
            .collect::<Result<Vec<_>>>()?;
        if bounds.len() != classes + 1 {
            return Err(bad("boundary count does not match class count"));
        }
        if levels.last().map(|(l, _)| *l) != Some(level) {
            levels.push((level, Vec::new()));
        }
        let entry = &mut levels.last_mut().expect("pushed above").1;
        if channel != entry.len() {
            return Err(bad("channels out of order"));
        }
        entry.push(bounds);
    }
    levels
        .into_iter()
        .map(|(level, b)| IntervalPartition::from_boundaries(level, b))
        .collect()
}
