use nalgebra::DMatrix;
use rayon::prelude::*;

use super::format::{LayerStore, StoreError};
use crate::corpus::PhoneToken;
use crate::phonepatterns::TargetToken;

/// Mean of the frames overlapping one phone.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneVector {
    pub values: Vec<f64>,
    pub token: PhoneToken,
    pub layer_id: i32,
    pub n_frames_pooled: usize,
    /// Index of the first pooled frame.
    pub first_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    /// The phone lies entirely before the first frame or after the last.
    NoOverlappingFrames,
    MissingUtterance,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pooled {
    Vector(PhoneVector),
    Skipped(SkipReason),
}

/// Frames `t` with `[offset + t·hop, offset + (t+1)·hop)` overlapping
/// `[start, end)` with positive measure.
///
/// Overlaps shorter than a millionth of a hop count as touching, so a phone
/// ending at 0.06 s does not pick up a frame whose computed start is
/// 0.06 s minus one ulp.
pub fn overlapping_frames(store: &LayerStore, n_frames: usize, start: f64, end: f64) -> std::ops::Range<usize> {
    let h = store.header();
    let tol = h.hop_s * 1e-6;
    let guess_lo = ((start - h.offset_s) / h.hop_s).floor() - 1.0;
    let guess_hi = ((end - h.offset_s) / h.hop_s).ceil() + 1.0;
    let lo = guess_lo.clamp(0.0, n_frames as f64) as usize;
    let hi = guess_hi.clamp(0.0, n_frames as f64) as usize;
    let mut first = None;
    let mut last = None;
    for t in lo..hi {
        let (fs, fe) = h.frame_span(t);
        if fs < end - tol && fe > start + tol {
            first.get_or_insert(t);
            last = Some(t);
        }
    }
    match (first, last) {
        (Some(a), Some(b)) => a..b + 1,
        _ => 0..0,
    }
}

/// Pools the frames under `token` into their arithmetic mean.
pub fn pool(store: &LayerStore, token: &PhoneToken) -> Result<Pooled, StoreError> {
    let frames = store
        .get(&token.utterance_id)
        .ok_or_else(|| StoreError::UnknownUtterance(token.utterance_id.clone()))?;
    let range = overlapping_frames(store, frames.n_frames(), token.start_s, token.end_s);
    if range.is_empty() {
        return Ok(Pooled::Skipped(SkipReason::NoOverlappingFrames));
    }
    let mut acc = vec![0.0f64; store.dim()];
    for t in range.clone() {
        for (a, &v) in acc.iter_mut().zip(frames.row(t)) {
            *a += v as f64;
        }
    }
    let n = range.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(Pooled::Vector(PhoneVector {
        values: acc,
        token: token.clone(),
        layer_id: store.layer_id(),
        n_frames_pooled: range.len(),
        first_frame: range.start,
    }))
}

/// Stacked phone vectors with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// (utterance_id, position) of each row.
    pub keys: Vec<(String, usize)>,
}

impl DataMatrix {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, n_classes: usize) -> Self {
        assert_eq!(features.nrows(), labels.len(), "row/label count mismatch");
        let keys = (0..labels.len()).map(|i| (String::new(), i)).collect();
        Self {
            features,
            labels,
            n_classes,
            keys,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn select(&self, rows: &[usize]) -> DataMatrix {
        DataMatrix {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            n_classes: self.n_classes,
            keys: rows.iter().map(|&r| self.keys[r].clone()).collect(),
        }
    }

    pub fn with_features(&self, features: DMatrix<f64>) -> DataMatrix {
        assert_eq!(features.nrows(), self.n_samples());
        DataMatrix {
            features,
            labels: self.labels.clone(),
            n_classes: self.n_classes,
            keys: self.keys.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skip {
    pub target: usize,
    pub utterance_id: String,
    pub position: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub matrix: DataMatrix,
    pub skipped: Vec<Skip>,
}

/// Pools every target and stacks the results in target order. Targets whose
/// phone has no overlapping frame, or whose utterance is absent from the
/// store, are skipped and reported.
pub fn assemble(store: &LayerStore, targets: &[TargetToken], n_classes: usize) -> Result<Assembled, StoreError> {
    let pooled: Vec<Pooled> = targets
        .par_iter()
        .map(|t| match store.get(&t.token.utterance_id) {
            None => Ok(Pooled::Skipped(SkipReason::MissingUtterance)),
            Some(_) => pool(store, &t.token),
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut keys = Vec::new();
    let mut skipped = Vec::new();
    for (i, (t, p)) in targets.iter().zip(pooled).enumerate() {
        match p {
            Pooled::Vector(v) => {
                rows.push(v.values);
                labels.push(t.label.index());
                keys.push(t.key());
            }
            Pooled::Skipped(reason) => skipped.push(Skip {
                target: i,
                utterance_id: t.token.utterance_id.clone(),
                position: t.position,
                reason,
            }),
        }
    }
    if rows.is_empty() {
        return Err(StoreError::EmptyMatrix { skipped: skipped.len() });
    }
    if !skipped.is_empty() {
        log::info!(
            "layer {}: skipped {} of {} targets",
            store.layer_id(),
            skipped.len(),
            targets.len()
        );
    }
    let dim = store.dim();
    let features = DMatrix::from_fn(rows.len(), dim, |r, c| rows[r][c]);
    Ok(Assembled {
        matrix: DataMatrix {
            features,
            labels,
            n_classes,
            keys,
        },
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reprstore::{FrameMatrix, StoreHeader};

    fn store(n_frames: usize, dim: usize, f: impl Fn(usize, usize) -> f32) -> LayerStore {
        let data = (0..n_frames)
            .flat_map(|t| (0..dim).map(move |c| (t, c)))
            .map(|(t, c)| f(t, c))
            .collect();
        LayerStore::new(
            StoreHeader {
                model_id: "m".into(),
                layer_id: 1,
                dim,
                hop_s: 0.020,
                offset_s: 0.0,
            },
            vec![("u".into(), FrameMatrix::new(n_frames, dim, data).unwrap())],
        )
        .unwrap()
    }

    fn token(start: f64, end: f64) -> PhoneToken {
        PhoneToken {
            utterance_id: "u".into(),
            word_form: "w".into(),
            is_pseudoword: false,
            index_in_word: 0,
            label: "P".into(),
            start_s: start,
            end_s: end,
        }
    }

    fn vector(p: Pooled) -> PhoneVector {
        match p {
            Pooled::Vector(v) => v,
            Pooled::Skipped(r) => panic!("skipped: {r:?}"),
        }
    }

    #[test]
    fn hand_overlap_example() {
        let s = store(10, 1, |t, _| t as f32);
        let v = vector(pool(&s, &token(0.035, 0.085)).unwrap());
        assert_eq!(v.first_frame, 1);
        assert_eq!(v.n_frames_pooled, 4);
        assert_eq!(v.values, vec![2.5]);
    }

    #[test]
    fn boundary_touching_frames_are_excluded() {
        let s = store(10, 1, |t, _| t as f32);
        let v = vector(pool(&s, &token(0.04, 0.08)).unwrap());
        assert_eq!((v.first_frame, v.n_frames_pooled), (2, 2));
    }

    #[test]
    fn single_frame_phone_equals_row() {
        let s = store(5, 3, |t, c| (t * 10 + c) as f32 + 0.25);
        let v = vector(pool(&s, &token(0.061, 0.079)).unwrap());
        assert_eq!(v.n_frames_pooled, 1);
        assert_eq!(v.values, vec![30.25, 31.25, 32.25]);
    }

    #[test]
    fn constant_frames_pool_to_constant() {
        let s = store(8, 4, |_, _| 1.7);
        let v = vector(pool(&s, &token(0.01, 0.13)).unwrap());
        assert!(v.values.iter().all(|&x| x == 1.7f32 as f64));
    }

    #[test]
    fn out_of_range_phone_is_skipped() {
        let s = store(5, 1, |t, _| t as f32);
        assert_eq!(
            pool(&s, &token(0.2, 0.3)).unwrap(),
            Pooled::Skipped(SkipReason::NoOverlappingFrames)
        );
        let mut t = token(0.0, 0.1);
        t.utterance_id = "nope".into();
        assert!(matches!(pool(&s, &t), Err(StoreError::UnknownUtterance(_))));
    }

    fn target(start: f64, end: f64, label: crate::phonepatterns::ContrastLabel) -> TargetToken {
        TargetToken {
            token: token(start, end),
            position: 0,
            label,
            contrast: "c".into(),
        }
    }

    #[test]
    fn assemble_reports_skips() {
        use crate::phonepatterns::ContrastLabel::*;
        let s = store(10, 2, |t, c| (t + c) as f32);
        let mut targets: Vec<_> = (0..9)
            .map(|i| {
                target(
                    i as f64 * 0.02,
                    i as f64 * 0.02 + 0.03,
                    [Group1, Group2, Confound][i % 3],
                )
            })
            .collect();
        targets.push(target(0.5, 0.6, Group1));
        let a = assemble(&s, &targets, 3).unwrap();
        assert_eq!(a.matrix.features.shape(), (9, 2));
        assert_eq!(a.skipped.len(), 1);
        assert_eq!(a.skipped[0].target, 9);
        assert_eq!(a.matrix.class_counts(), vec![3, 3, 3]);
        assert_eq!(assemble(&s, &targets, 3).unwrap(), a);

        let none = vec![target(0.5, 0.6, Group1)];
        assert!(matches!(
            assemble(&s, &none, 3),
            Err(StoreError::EmptyMatrix { skipped: 1 })
        ));
    }
}
