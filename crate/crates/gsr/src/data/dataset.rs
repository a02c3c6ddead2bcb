use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{GsrError, Result};

/// Fixed feature embeddings with class labels and optional group labels.
///
/// Features are stored row-per-sample (`n × d`). Datasets are immutable
/// once built; every split or corruption produces a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    features: DMatrix<f64>,
    labels: Vec<usize>,
    groups: Option<Vec<usize>>,
    n_classes: usize,
    n_groups: usize,
}

impl EmbeddingDataset {
    /// Builds and validates a dataset.
    ///
    /// `n_classes` / `n_groups` default to `max id + 1` when `None`. When
    /// groups are given, every id in `0..n_groups` must occur at least once.
    pub fn new(
        features: DMatrix<f64>,
        labels: Vec<usize>,
        groups: Option<Vec<usize>>,
        n_classes: Option<usize>,
        n_groups: Option<usize>,
    ) -> Result<Self> {
        let ds = Self::build(features, labels, groups, n_classes, n_groups)?;
        if ds.groups.is_some() {
            let counts = ds.group_counts()?;
            if let Some(g) = counts.iter().position(|&c| c == 0) {
                return Err(GsrError::EmptyGroup(g));
            }
        }
        Ok(ds)
    }

    fn build(
        features: DMatrix<f64>,
        labels: Vec<usize>,
        groups: Option<Vec<usize>>,
        n_classes: Option<usize>,
        n_groups: Option<usize>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(GsrError::Empty("dataset has no rows".into()));
        }
        if features.ncols() == 0 {
            return Err(GsrError::Empty("dataset has no feature columns".into()));
        }
        if labels.len() != n {
            return Err(GsrError::DimensionMismatch(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        for row in 0..n {
            for column in 0..features.ncols() {
                if !features[(row, column)].is_finite() {
                    return Err(GsrError::NonFiniteFeature { row, column });
                }
            }
        }
        let n_classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(GsrError::LabelOutOfRange {
                row,
                label,
                n_classes,
            });
        }
        let n_groups = match &groups {
            Some(gs) => {
                if gs.len() != n {
                    return Err(GsrError::DimensionMismatch(format!(
                        "{} group ids for {n} rows",
                        gs.len()
                    )));
                }
                let m = n_groups.unwrap_or_else(|| gs.iter().max().map_or(0, |m| m + 1));
                if let Some((row, &group)) = gs.iter().enumerate().find(|(_, &g)| g >= m) {
                    return Err(GsrError::GroupOutOfRange {
                        row,
                        group,
                        n_groups: m,
                    });
                }
                m
            }
            None => 0,
        };
        Ok(Self {
            features,
            labels,
            groups,
            n_classes,
            n_groups,
        })
    }

    /// Rows `indices` (in the given order), keeping the parent's class and
    /// group counts. Groups may end up unrepresented in the subset; ops that
    /// need every group report [`GsrError::EmptyGroup`].
    pub fn subset(&self, indices: &[usize]) -> Self {
        let features = self.features.select_rows(indices.iter());
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let groups = self
            .groups
            .as_ref()
            .map(|gs| indices.iter().map(|&i| gs[i]).collect());
        Self {
            features,
            labels,
            groups,
            n_classes: self.n_classes,
            n_groups: self.n_groups,
        }
    }

    /// Same features and groups with replaced labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        let mut out = self.clone();
        if labels.len() != self.len() {
            return Err(GsrError::DimensionMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                self.len()
            )));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= self.n_classes) {
            return Err(GsrError::LabelOutOfRange {
                row,
                label,
                n_classes: self.n_classes,
            });
        }
        out.labels = labels;
        Ok(out)
    }

    /// Appends a constant-1 feature column (for callers that want a bias).
    pub fn with_bias_column(&self) -> Self {
        let n = self.len();
        let d = self.dim();
        let mut features = self.features.clone().resize_horizontally(d + 1, 1.0);
        for i in 0..n {
            features[(i, d)] = 1.0;
        }
        Self {
            features,
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Number of groups, or 0 when the dataset carries no group labels.
    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    /// Feature vector of sample `i`.
    pub fn x(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    pub fn row(&self, i: usize) -> RowDVector<f64> {
        self.features.row(i).into_owned()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    pub fn has_groups(&self) -> bool {
        self.groups.is_some()
    }

    pub fn require_groups(&self) -> Result<&[usize]> {
        self.groups.as_deref().ok_or(GsrError::MissingGroups)
    }

    pub fn group_counts(&self) -> Result<Vec<usize>> {
        let gs = self.require_groups()?;
        let mut counts = vec![0; self.n_groups];
        for &g in gs {
            counts[g] += 1;
        }
        Ok(counts)
    }

    /// Row indices of each group, in row order.
    pub fn group_indices(&self) -> Result<Vec<Vec<usize>>> {
        let gs = self.require_groups()?;
        let mut out = vec![Vec::new(); self.n_groups];
        for (i, &g) in gs.iter().enumerate() {
            out[g].push(i);
        }
        Ok(out)
    }

    /// Like [`group_indices`](Self::group_indices) but errors on an empty group.
    pub fn nonempty_group_indices(&self) -> Result<Vec<Vec<usize>>> {
        let idx = self.group_indices()?;
        if let Some(g) = idx.iter().position(Vec::is_empty) {
            return Err(GsrError::EmptyGroup(g));
        }
        Ok(idx)
    }
}
