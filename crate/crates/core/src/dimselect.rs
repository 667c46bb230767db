//! PCA reduction and control-score selection of a constrained dimensionality.
//!
//! For a candidate dimensionality `d`, the control score sums over layers the
//! gap between positive-control and negative-control AUCs:
//!
//! ```text
//! S(d) = Σ_layer ( P1 + P2 − N1 − N2 )
//! ```
//!
//! The selected `d*` maximizes `S(d)` over powers of two up to `D`, with `D`
//! itself appended, preferring the smallest `d` among ties.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::reprstore::{LayerStore, StoreError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DimError {
    #[error("PCA needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("PCA input is degenerate: all rows are identical")]
    Degenerate,
    #[error("PCA input has a non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("requested {requested} components but only {available} are available")]
    ComponentRange { requested: usize, available: usize },
    #[error("input has {got} columns, projection expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("layer {layer} is missing control score {which}")]
    MissingScore { layer: i32, which: &'static str },
    #[error("control score for layer {layer} is not finite")]
    NonFiniteScore { layer: i32 },
    #[error("candidate grid is empty")]
    EmptyGrid,
}

/// Principal axes of a centered data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub mean: DVector<f64>,
    /// `d_max × D`, orthonormal rows ordered by descending variance.
    pub components: DMatrix<f64>,
    /// Sample variance (divisor n − 1) along each component.
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl PcaProjection {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    fn check(&self, cols: usize, d: usize) -> Result<(), DimError> {
        if cols != self.input_dim() {
            return Err(DimError::Dimension {
                expected: self.input_dim(),
                got: cols,
            });
        }
        if d == 0 || d > self.n_components() {
            return Err(DimError::ComponentRange {
                requested: d,
                available: self.n_components(),
            });
        }
        Ok(())
    }

    /// `(X − mean)·componentsᵀ`, keeping the first `d` columns.
    pub fn project(&self, x: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>, DimError> {
        self.check(x.ncols(), d)?;
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * self.components.rows(0, d).transpose())
    }

    /// Maps `d`-dimensional scores back to the input space.
    pub fn reconstruct(&self, scores: &DMatrix<f64>) -> Result<DMatrix<f64>, DimError> {
        let d = scores.ncols();
        self.check(self.input_dim(), d)?;
        let mut x = scores * self.components.rows(0, d);
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        Ok(x)
    }

    /// Projects every frame of a store, producing a `d`-dimensional store
    /// with the same layer id and geometry. Pooling commutes with this map.
    pub fn project_store(&self, store: &LayerStore, d: usize) -> Result<LayerStore, ProjectStoreError> {
        self.check(store.dim(), d)?;
        let basis = self.components.rows(0, d).into_owned();
        let mean = self.mean.clone();
        Ok(store.map_frames(d, |row| {
            (0..d)
                .map(|k| {
                    basis
                        .row(k)
                        .iter()
                        .zip(row)
                        .zip(mean.iter())
                        .map(|((b, &v), m)| b * (v as f64 - m))
                        .sum::<f64>() as f32
                })
                .collect()
        })?)
    }
}

#[derive(Debug, Error)]
pub enum ProjectStoreError {
    #[error(transparent)]
    Dim(#[from] DimError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Fits PCA by singular value decomposition of the mean-centered data.
///
/// Only components with non-negligible singular values are kept. Each
/// component is signed so that its largest-magnitude coordinate is positive.
pub fn fit_pca(x: &DMatrix<f64>) -> Result<PcaProjection, DimError> {
    let (n, dim) = x.shape();
    if n < 2 {
        return Err(DimError::TooFewRows(n));
    }
    for (c, col) in x.column_iter().enumerate() {
        if let Some(row) = col.iter().position(|v| !v.is_finite()) {
            return Err(DimError::NonFinite { row, col: c });
        }
    }
    let mean = DVector::from_iterator(dim, x.column_iter().map(|c| c.mean()));
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let scale = centered.amax();
    if scale == 0.0 {
        return Err(DimError::Degenerate);
    }
    // Scaling keeps the SVD well away from overflow/underflow.
    let svd = (&centered / scale).svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let sv = &svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let smax = sv[order[0]];
    let cutoff = smax * (n.max(dim) as f64) * f64::EPSILON * 8.0;
    let keep: Vec<usize> = order.into_iter().filter(|&i| sv[i] > cutoff).collect();
    if keep.is_empty() {
        return Err(DimError::Degenerate);
    }

    let mut components = DMatrix::zeros(keep.len(), dim);
    let mut explained_variance = Vec::with_capacity(keep.len());
    for (r, &i) in keep.iter().enumerate() {
        let mut axis = v_t.row(i).into_owned();
        let lead = axis.iter().fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m });
        if lead < 0.0 {
            axis.neg_mut();
        }
        components.set_row(r, &axis);
        let s = sv[i] * scale;
        explained_variance.push(s * s / (n - 1) as f64);
    }
    let total_variance = centered.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
    Ok(PcaProjection {
        mean,
        components,
        explained_variance,
        total_variance,
    })
}

/// Positive- and negative-control AUCs for each layer at one dimensionality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControlSlot {
    P1,
    P2,
    N1,
    N2,
}

impl ControlSlot {
    pub const ALL: [ControlSlot; 4] = [Self::P1, Self::P2, Self::N1, Self::N2];

    fn name(self) -> &'static str {
        match self {
            ControlSlot::P1 => "P1",
            ControlSlot::P2 => "P2",
            ControlSlot::N1 => "N1",
            ControlSlot::N2 => "N2",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControlScores {
    layers: BTreeMap<i32, [Option<f64>; 4]>,
}

impl ControlScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, layer: i32, slot: ControlSlot, auc: f64) {
        self.layers.entry(layer).or_insert([None; 4])[slot as usize] = Some(auc);
    }

    pub fn set_layer(&mut self, layer: i32, p1: f64, p2: f64, n1: f64, n2: f64) {
        self.layers.insert(layer, [Some(p1), Some(p2), Some(n1), Some(n2)]);
    }

    pub fn layers(&self) -> impl Iterator<Item = i32> + '_ {
        self.layers.keys().copied()
    }

    pub fn get(&self, layer: i32, slot: ControlSlot) -> Option<f64> {
        self.layers.get(&layer).and_then(|s| s[slot as usize])
    }
}

/// `Σ_layer (P1 + P2 − N1 − N2)`.
pub fn control_score(scores: &ControlScores) -> Result<f64, DimError> {
    let mut total = 0.0;
    for (&layer, slots) in &scores.layers {
        let mut v = [0.0; 4];
        for slot in ControlSlot::ALL {
            v[slot as usize] = slots[slot as usize].ok_or(DimError::MissingScore {
                layer,
                which: slot.name(),
            })?;
        }
        let term = v[0] + v[1] - v[2] - v[3];
        if !term.is_finite() {
            return Err(DimError::NonFiniteScore { layer });
        }
        total += term;
    }
    Ok(total)
}

/// Powers of two up to `max_dim`, plus `max_dim` itself when it is not one.
pub fn dim_grid(max_dim: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = std::iter::successors(Some(2usize), |d| d.checked_mul(2))
        .take_while(|&d| d <= max_dim)
        .collect();
    if grid.last() != Some(&max_dim) && max_dim >= 1 {
        grid.push(max_dim);
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub grid: Vec<usize>,
    pub scores: Vec<f64>,
    pub d_star: usize,
}

impl SelectionResult {
    pub fn best_score(&self) -> f64 {
        let i = self.grid.iter().position(|&d| d == self.d_star).unwrap();
        self.scores[i]
    }
}

/// The smallest `d` attaining the maximal control score.
pub fn select_dim(per_d: &BTreeMap<usize, f64>) -> Result<SelectionResult, DimError> {
    if per_d.is_empty() {
        return Err(DimError::EmptyGrid);
    }
    let mut best: Option<(usize, f64)> = None;
    for (&d, &s) in per_d {
        if !s.is_finite() {
            return Err(DimError::NonFiniteScore { layer: d as i32 });
        }
        // ascending d, so strict improvement keeps the smallest tie
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((d, s));
        }
    }
    Ok(SelectionResult {
        grid: per_d.keys().copied().collect(),
        scores: per_d.values().copied().collect(),
        d_star: best.unwrap().0,
    })
}
