//! L2-regularized multinomial (softmax) probes.
//!
//! A probe maps a standardized representation `z` to class probabilities
//! `softmax(b + W z)`. Training minimizes the mean negative log-likelihood
//! plus `(lambda/2)·‖W‖²_F`; the intercept `b` is not penalized. Fits start
//! at `W = 0, b = 0` and are deterministic.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::optim::{self, LbfgsOptions, Termination};
use crate::reprstore::DataMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("class {class} has no training samples (counts {counts:?})")]
    InsufficientClass { class: usize, counts: Vec<usize> },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("expected a length-{expected} input, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid probe setting: {0}")]
    Invalid(String),
    #[error("malformed probe CSV: {0}")]
    Csv(String),
}

/// Per-feature centering and scaling learned from training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant features.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let (lo, hi) = col
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            mean.push(m);
            scale.push(if hi > lo && sd > 0.0 { sd } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| (x[(r, c)] - self.mean[c]) / self.scale[c])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    /// One row per class.
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub lambda: f64,
    pub standardizer: Standardizer,
}

impl ProbeModel {
    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Class probabilities for one raw (unstandardized) input.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>, ProbeError> {
        if x.len() != self.dim() {
            return Err(ProbeError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let z: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(c, v)| (v - self.standardizer.mean[c]) / self.standardizer.scale[c])
            .collect();
        let mut logits: Vec<f64> = (0..self.n_classes())
            .map(|k| self.intercept[k] + self.weights.row(k).iter().zip(&z).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        softmax_in_place(&mut logits);
        Ok(logits)
    }

    /// Row-wise class probabilities for a matrix of raw inputs.
    pub fn predict_proba_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, ProbeError> {
        if x.ncols() != self.dim() {
            return Err(ProbeError::Dimension {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let z = self.standardizer.transform(x);
        let mut logits = &z * self.weights.transpose();
        for mut row in logits.row_iter_mut() {
            let mut v: Vec<f64> = row.iter().zip(self.intercept.iter()).map(|(a, b)| a + b).collect();
            softmax_in_place(&mut v);
            row.iter_mut().zip(v).for_each(|(r, p)| *r = p);
        }
        Ok(logits)
    }

    /// Writes weights, intercept and standardization as CSV.
    ///
    /// Columns are `row,bias,f0..f{d-1}`; rows are `class_<k>` for each class,
    /// then `feature_mean`, `feature_scale`, and `lambda` (value in `bias`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim();
        let mut header = vec!["row".to_string(), "bias".to_string()];
        header.extend((0..d).map(|i| format!("f{i}")));
        writeln!(w, "{}", header.join(","))?;
        let join = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        for k in 0..self.n_classes() {
            writeln!(
                w,
                "class_{k},{},{}",
                self.intercept[k],
                join(&mut self.weights.row(k).iter().copied())
            )?;
        }
        writeln!(w, "feature_mean,,{}", join(&mut self.standardizer.mean.iter().copied()))?;
        writeln!(
            w,
            "feature_scale,,{}",
            join(&mut self.standardizer.scale.iter().copied())
        )?;
        writeln!(w, "lambda,{}{}", self.lambda, ",".repeat(d))?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<ProbeModel, ProbeError> {
        let bad = |m: &str| ProbeError::Csv(m.to_string());
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty"))?
            .map_err(|e| bad(&e.to_string()))?;
        let d = header
            .split(',')
            .count()
            .checked_sub(2)
            .ok_or_else(|| bad("short header"))?;
        let mut classes: Vec<(f64, Vec<f64>)> = Vec::new();
        let (mut mean, mut scale, mut lambda) = (None, None, None);
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number '{s}'")));
        for line in lines {
            let line = line.map_err(|e| bad(&e.to_string()))?;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != d + 2 {
                return Err(bad("row width mismatch"));
            }
            let values = || f[2..].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>();
            match f[0] {
                s if s.starts_with("class_") => classes.push((num(f[1])?, values()?)),
                "feature_mean" => mean = Some(values()?),
                "feature_scale" => scale = Some(values()?),
                "lambda" => lambda = Some(num(f[1])?),
                other => return Err(bad(&format!("unknown row '{other}'"))),
            }
        }
        let k = classes.len();
        if k < 2 {
            return Err(bad("need at least two class rows"));
        }
        Ok(ProbeModel {
            weights: DMatrix::from_fn(k, d, |r, c| classes[r].1[c]),
            intercept: DVector::from_iterator(k, classes.iter().map(|c| c.0)),
            lambda: lambda.ok_or_else(|| bad("missing lambda"))?,
            standardizer: Standardizer {
                mean: mean.ok_or_else(|| bad("missing feature_mean"))?,
                scale: scale.ok_or_else(|| bad("missing feature_scale"))?,
            },
        })
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    v.iter_mut().for_each(|x| *x /= s);
}

/// Mean multinomial NLL plus the L2 penalty, over standardized features.
///
/// Parameters are laid out as the `k × d` weight matrix in row-major order
/// followed by the `k` intercepts.
pub struct Objective<'a> {
    x: &'a DMatrix<f64>,
    labels: &'a [usize],
    n_classes: usize,
    lambda: f64,
}

impl<'a> Objective<'a> {
    pub fn new(x: &'a DMatrix<f64>, labels: &'a [usize], n_classes: usize, lambda: f64) -> Self {
        assert_eq!(x.nrows(), labels.len());
        Self {
            x,
            labels,
            n_classes,
            lambda,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_classes * (self.x.ncols() + 1)
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        let mut g = vec![0.0; params.len()];
        self.value_and_gradient(params, &mut g)
    }

    pub fn value_and_gradient(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let (k, d) = (self.n_classes, self.x.ncols());
        let n = self.x.nrows() as f64;
        let w = DMatrix::from_row_slice(k, d, &params[..k * d]);
        let b = &params[k * d..];

        let mut resid = self.x * w.transpose();
        let mut nll = 0.0;
        for (i, mut row) in resid.row_iter_mut().enumerate() {
            let m = row.iter().zip(b).fold(f64::NEG_INFINITY, |a, (z, bk)| a.max(z + bk));
            let y = self.labels[i];
            let shifted_y = row[y] + b[y] - m;
            let mut s = 0.0;
            for (z, bk) in row.iter_mut().zip(b) {
                *z = (*z + bk - m).exp();
                s += *z;
            }
            nll -= shifted_y - s.ln();
            row.iter_mut().for_each(|p| *p /= s);
            row[y] -= 1.0;
        }

        let gw = resid.transpose() * self.x;
        let mut penalty = 0.0;
        for r in 0..k {
            for c in 0..d {
                let wrc = w[(r, c)];
                penalty += wrc * wrc;
                grad[r * d + c] = gw[(r, c)] / n + self.lambda * wrc;
            }
            grad[k * d + r] = resid.column(r).sum() / n;
        }
        nll / n + 0.5 * self.lambda * penalty
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeOptions {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbFit {
    pub model: ProbeModel,
    pub final_objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at every accepted iterate, starting from the initial point.
    pub trace: Vec<f64>,
}

fn check_data(x: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<(), ProbeError> {
    if x.ncols() == 0 {
        return Err(ProbeError::Invalid("zero-dimensional features".into()));
    }
    if n_classes < 2 {
        return Err(ProbeError::Invalid("need at least two classes".into()));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(ProbeError::Invalid(format!("label {l} out of range")));
        }
        counts[l] += 1;
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(ProbeError::InsufficientClass { class, counts });
    }
    for (c, col) in x.column_iter().enumerate() {
        if let Some(row) = col.iter().position(|v| !v.is_finite()) {
            return Err(ProbeError::NonFinite { row, col: c });
        }
    }
    Ok(())
}

/// Fits a probe from `W = 0, b = 0`.
pub fn fit(data: &DataMatrix, lambda: f64, tol: f64) -> Result<ProbFit, ProbeError> {
    fit_with(
        data,
        &ProbeOptions {
            lambda,
            tol,
            ..ProbeOptions::default()
        },
        None,
    )
}

/// Fits a probe, optionally from a given starting parameter vector.
pub fn fit_with(data: &DataMatrix, opts: &ProbeOptions, init: Option<&[f64]>) -> Result<ProbFit, ProbeError> {
    if !(opts.lambda.is_finite() && opts.lambda >= 0.0) {
        return Err(ProbeError::Invalid(format!("lambda {} must be >= 0", opts.lambda)));
    }
    let k = data.n_classes;
    check_data(&data.features, &data.labels, k)?;
    let standardizer = Standardizer::fit(&data.features);
    let z = standardizer.transform(&data.features);
    let objective = Objective::new(&z, &data.labels, k, opts.lambda);
    let x0 = match init {
        Some(p) if p.len() == objective.n_params() => p.to_vec(),
        Some(p) => {
            return Err(ProbeError::Dimension {
                expected: objective.n_params(),
                got: p.len(),
            })
        }
        None => vec![0.0; objective.n_params()],
    };
    let min = optim::minimize(
        |p, g| objective.value_and_gradient(p, g),
        x0,
        &LbfgsOptions {
            tol: opts.tol,
            max_iter: opts.max_iter,
            ..LbfgsOptions::default()
        },
    );
    let converged = min.termination == Termination::Converged;
    if !converged {
        log::debug!(
            "probe fit stopped ({:?}) after {} iterations, gradient {:.3e}",
            min.termination,
            min.iterations,
            min.grad_inf
        );
    }
    let d = data.dim();
    let weights = DMatrix::from_row_slice(k, d, &min.x[..k * d]);
    // The objective is invariant to a common intercept shift; pin its mean to 0.
    let mut intercept = DVector::from_column_slice(&min.x[k * d..]);
    let shift = intercept.mean();
    intercept.add_scalar_mut(-shift);
    Ok(ProbFit {
        model: ProbeModel {
            weights,
            intercept,
            lambda: opts.lambda,
            standardizer,
        },
        final_objective: min.value,
        grad_norm: min.grad_inf,
        iterations: min.iterations,
        converged,
        trace: min.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn data(features: DMatrix<f64>, labels: Vec<usize>, k: usize) -> DataMatrix {
        DataMatrix::new(features, labels, k)
    }

    #[test]
    fn separable_1d_clusters() {
        let xs: Vec<f64> = (0..60).map(|i| [-1.0, 0.0, 1.0][i / 20]).collect();
        let labels: Vec<usize> = (0..60).map(|i| i / 20).collect();
        let dm = data(DMatrix::from_column_slice(60, 1, &xs), labels.clone(), 3);
        let fit = fit(&dm, 1e-4, 1e-8).unwrap();
        assert!(fit.converged, "grad {}", fit.grad_norm);
        let proba = fit.model.predict_proba_matrix(&dm.features).unwrap();
        let correct = (0..60)
            .filter(|&r| {
                proba
                    .row(r)
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0
                    == labels[r]
            })
            .count();
        assert_eq!(correct, 60);
    }

    #[test]
    fn uniform_with_zero_weights() {
        let model = ProbeModel {
            weights: DMatrix::zeros(3, 2),
            intercept: DVector::zeros(3),
            lambda: 0.0,
            standardizer: Standardizer {
                mean: vec![0.0; 2],
                scale: vec![1.0; 2],
            },
        };
        let p = model.predict_proba(&[3.0, -1.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(matches!(model.predict_proba(&[1.0]), Err(ProbeError::Dimension { .. })));
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = ProbeModel {
            weights: DMatrix::from_fn(3, 4, |_, _| rng.sample(StandardNormal)),
            intercept: DVector::from_fn(3, |_, _| rng.sample(StandardNormal)),
            lambda: 0.0,
            standardizer: Standardizer {
                mean: vec![0.0; 4],
                scale: vec![1.0; 4],
            },
        };
        let x = [0.3, -0.2, 1.1, 0.7];
        let before = model.predict_proba(&x).unwrap();
        let shift = DVector::from_fn(4, |i, _| i as f64 * 0.5 - 1.0);
        for mut row in model.weights.row_iter_mut() {
            row += shift.transpose();
        }
        model.intercept.add_scalar_mut(2.5);
        let after = model.predict_proba(&x).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((after.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_class_and_bad_values() {
        let dm = data(DMatrix::from_element(4, 2, 1.0), vec![0, 1, 0, 1], 3);
        assert!(matches!(
            fit(&dm, 1.0, 1e-8),
            Err(ProbeError::InsufficientClass { class: 2, .. })
        ));
        let mut x = DMatrix::from_element(3, 2, 1.0);
        x[(1, 1)] = f64::NAN;
        let dm = data(x, vec![0, 1, 2], 3);
        assert!(matches!(
            fit(&dm, 1.0, 1e-8),
            Err(ProbeError::NonFinite { row: 1, col: 1 })
        ));
    }

    #[test]
    fn constant_features_get_unit_scale() {
        let x = DMatrix::from_fn(6, 2, |r, c| if c == 0 { 4.0 } else { r as f64 });
        let s = Standardizer::fit(&x);
        assert_eq!(s.scale[0], 1.0);
        assert!(s.scale[1] > 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(30, 3, |_, _| rng.sample(StandardNormal));
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let fit = fit(&data(x, labels, 3), 0.1, 1e-8).unwrap();
        let mut buf = Vec::new();
        fit.model.write_csv(&mut buf).unwrap();
        let back = ProbeModel::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, fit.model);
    }
}
