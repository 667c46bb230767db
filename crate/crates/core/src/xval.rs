//! Nested stratified cross-validation with inner-loop selection of the L2
//! penalty.
//!
//! Every outer fold chooses its penalty using only its own training rows,
//! refits on them, and is scored on the untouched held-out rows. Fold work is
//! spread across threads, but each task is a pure function of its inputs, so
//! results do not depend on scheduling.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dimselect::{fit_pca, DimError};
use crate::evalmetrics::{multiclass_auc, AucReport, AucScheme, MetricError};
use crate::probe::{fit_with, ProbeError, ProbeModel, ProbeOptions};
use crate::reprstore::DataMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FoldFailure {
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Pca(#[from] DimError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum XvalError {
    #[error("label {label} has {count} samples, fewer than the {k} folds requested{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    InfeasibleSplit {
        label: usize,
        count: usize,
        k: usize,
        context: Option<String>,
    },
    #[error("invalid fold plan: {0}")]
    Plan(String),
    #[error("lambda grid must be nonempty with finite nonnegative values")]
    Grid,
    #[error("outer fold {fold}{}: {source}", inner.map(|i| format!(", inner fold {i}")).unwrap_or_default())]
    Fold {
        fold: usize,
        inner: Option<usize>,
        #[source]
        source: FoldFailure,
    },
}

/// Outer test folds and, for each, an inner partition of its training rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    n_samples: usize,
    outer: Vec<Vec<usize>>,
    inner: Vec<Vec<Vec<usize>>>,
    seed: u64,
}

fn check_partition(parts: &[Vec<usize>], universe: &[usize], what: &str) -> Result<(), XvalError> {
    let mut seen: Vec<usize> = parts.iter().flatten().copied().collect();
    seen.sort_unstable();
    if seen != universe {
        return Err(XvalError::Plan(format!(
            "{what} folds do not partition their index set"
        )));
    }
    if parts.iter().any(Vec::is_empty) {
        return Err(XvalError::Plan(format!("{what} fold is empty")));
    }
    Ok(())
}

/// Stratified `k`-way partition of `0..labels.len()`.
///
/// Each label's indices are shuffled and dealt round-robin, continuing from
/// where the previous label stopped, so per-label counts differ by at most
/// one across folds and fold sizes do too.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, XvalError> {
    if k < 2 {
        return Err(XvalError::Plan(format!("need at least 2 folds, got {k}")));
    }
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    if let Some((&label, idx)) = by_label.iter().find(|(_, v)| v.len() < k) {
        return Err(XvalError::InfeasibleSplit {
            label,
            count: idx.len(),
            k,
            context: None,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut offset = 0;
    for idx in by_label.values_mut() {
        idx.shuffle(&mut rng);
        for (j, &i) in idx.iter().enumerate() {
            folds[(offset + j) % k].push(i);
        }
        offset += idx.len();
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

fn inner_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl FoldPlan {
    /// Stratified outer folds, each with stratified inner folds over its
    /// training rows.
    pub fn stratified(labels: &[usize], outer_k: usize, inner_k: usize, seed: u64) -> Result<Self, XvalError> {
        let outer = stratified_folds(labels, outer_k, seed)?;
        let mut inner = Vec::with_capacity(outer_k);
        for (f, test) in outer.iter().enumerate() {
            let train = complement(labels.len(), test);
            let sub: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let parts = stratified_folds(&sub, inner_k, inner_seed(seed, f)).map_err(|e| match e {
                XvalError::InfeasibleSplit { label, count, k, .. } => XvalError::InfeasibleSplit {
                    label,
                    count,
                    k,
                    context: Some(format!("inner split of outer fold {f}")),
                },
                other => other,
            })?;
            inner.push(
                parts
                    .into_iter()
                    .map(|p| p.into_iter().map(|j| train[j]).collect())
                    .collect(),
            );
        }
        Ok(Self {
            n_samples: labels.len(),
            outer,
            inner,
            seed,
        })
    }

    /// A plan from explicit index sets, validated for the partition
    /// properties.
    pub fn from_parts(
        n_samples: usize,
        outer: Vec<Vec<usize>>,
        inner: Vec<Vec<Vec<usize>>>,
        seed: u64,
    ) -> Result<Self, XvalError> {
        let all: Vec<usize> = (0..n_samples).collect();
        check_partition(&outer, &all, "outer")?;
        if inner.len() != outer.len() {
            return Err(XvalError::Plan("one inner partition is needed per outer fold".into()));
        }
        for (test, parts) in outer.iter().zip(&inner) {
            check_partition(parts, &complement(n_samples, test), "inner")?;
        }
        Ok(Self {
            n_samples,
            outer,
            inner,
            seed,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_outer(&self) -> usize {
        self.outer.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn outer_test(&self, fold: usize) -> &[usize] {
        &self.outer[fold]
    }

    pub fn outer_train(&self, fold: usize) -> Vec<usize> {
        complement(self.n_samples, &self.outer[fold])
    }

    pub fn inner(&self, fold: usize) -> &[Vec<usize>] {
        &self.inner[fold]
    }

    /// Rows `level,outer_fold,inner_fold,sample`; `inner_fold` is empty for
    /// outer test assignments.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["level", "outer_fold", "inner_fold", "sample"])?;
        for (f, test) in self.outer.iter().enumerate() {
            for &i in test {
                out.write_record(["outer", &f.to_string(), "", &i.to_string()])?;
            }
            for (j, part) in self.inner[f].iter().enumerate() {
                for &i in part {
                    out.write_record(["inner", &f.to_string(), &j.to_string(), &i.to_string()])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn complement(n: usize, sorted_subset: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    sorted_subset.iter().for_each(|&i| mask[i] = false);
    (0..n).filter(|&i| mask[i]).collect()
}

#[derive(Debug, Clone)]
pub struct CvOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub scheme: AucScheme,
    /// Fit PCA on each outer training set and reduce to this many components.
    pub fold_pca: Option<usize>,
}

impl Default for CvOptions {
    fn default() -> Self {
        let p = ProbeOptions::default();
        Self {
            tol: p.tol,
            max_iter: p.max_iter,
            scheme: AucScheme::OneVsOne,
            fold_pca: None,
        }
    }
}

/// Default penalty grid: seven log-uniform points on `[1e-4, 1e2]`.
pub fn default_lambdas() -> Vec<f64> {
    (0..7).map(|i| 10f64.powi(i - 4)).collect()
}

#[derive(Debug, Clone)]
pub struct FoldScore {
    pub fold: usize,
    pub lambda: f64,
    /// Mean inner-validation weighted AUC for each grid value, in grid order.
    pub inner_means: Vec<f64>,
    pub report: AucReport,
    pub model: ProbeModel,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct HeldOutScore {
    pub folds: Vec<FoldScore>,
    pub aggregate: f64,
}

impl HeldOutScore {
    pub fn lambdas(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.lambda).collect()
    }
}

fn fit_and_score(
    train: &DataMatrix,
    test: &DataMatrix,
    lambda: f64,
    opts: &CvOptions,
) -> Result<(ProbeModel, AucReport), FoldFailure> {
    let probe = ProbeOptions {
        lambda,
        tol: opts.tol,
        max_iter: opts.max_iter,
    };
    let fit = fit_with(train, &probe, None)?;
    if !fit.converged {
        log::debug!(
            "probe stopped after {} iterations, |g| = {:.3e}",
            fit.iterations,
            fit.grad_norm
        );
    }
    let proba = fit.model.predict_proba_matrix(&test.features)?;
    let report = multiclass_auc(opts.scheme, &proba, &test.labels, test.n_classes)?;
    Ok((fit.model, report))
}

/// Outer training and test matrices for one fold, optionally PCA-reduced
/// with axes fit on the training rows alone.
fn fold_data(
    data: &DataMatrix,
    plan: &FoldPlan,
    f: usize,
    opts: &CvOptions,
) -> Result<(DataMatrix, DataMatrix), FoldFailure> {
    let train = data.select(&plan.outer_train(f));
    let test = data.select(plan.outer_test(f));
    match opts.fold_pca {
        None => Ok((train, test)),
        Some(d) => {
            let p = fit_pca(&train.features)?;
            let d = d.min(p.n_components());
            let tr = p.project(&train.features, d)?;
            let te = p.project(&test.features, d)?;
            Ok((train.with_features(tr), test.with_features(te)))
        }
    }
}

/// Nested cross-validated held-out AUC.
///
/// For each outer fold, every grid value is scored by its mean
/// inner-validation weighted AUC; the best value wins, ties going to the
/// larger penalty. The probe is refit on the whole outer training set at that
/// value and scored on the outer test fold. The aggregate is the mean of the
/// fold scores.
pub fn nested_cv_evaluate(
    data: &DataMatrix,
    lambdas: &[f64],
    plan: &FoldPlan,
    opts: &CvOptions,
) -> Result<HeldOutScore, XvalError> {
    if lambdas.is_empty() || lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(XvalError::Grid);
    }
    if plan.n_samples() != data.n_samples() {
        return Err(XvalError::Plan(format!(
            "plan covers {} samples, data has {}",
            plan.n_samples(),
            data.n_samples()
        )));
    }
    // Results are gathered in task order before the first error is taken, so
    // the reported failure does not depend on scheduling.
    let wrap = |fold: usize, inner: Option<usize>| move |source: FoldFailure| XvalError::Fold { fold, inner, source };

    let per_fold: Vec<(DataMatrix, DataMatrix)> = (0..plan.n_outer())
        .into_par_iter()
        .map(|f| fold_data(data, plan, f, opts).map_err(wrap(f, None)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, _>>()?;

    // Local row positions of each inner validation part within the outer
    // training matrix.
    let inner_local: Vec<Vec<(Vec<usize>, Vec<usize>)>> = (0..plan.n_outer())
        .map(|f| {
            let train = plan.outer_train(f);
            let pos: BTreeMap<usize, usize> = train.iter().enumerate().map(|(p, &i)| (i, p)).collect();
            plan.inner(f)
                .iter()
                .map(|part| {
                    let val: Vec<usize> = part.iter().map(|i| pos[i]).collect();
                    let fit = complement(train.len(), &val);
                    (fit, val)
                })
                .collect()
        })
        .collect();

    let tasks: Vec<(usize, usize, usize)> = (0..plan.n_outer())
        .flat_map(|f| (0..lambdas.len()).flat_map(move |l| (0..plan.inner(f).len()).map(move |j| (f, l, j))))
        .collect();
    let inner_scores: Vec<f64> = tasks
        .par_iter()
        .map(|&(f, l, j)| {
            let (train, _) = &per_fold[f];
            let (fit_rows, val_rows) = &inner_local[f][j];
            fit_and_score(&train.select(fit_rows), &train.select(val_rows), lambdas[l], opts)
                .map(|(_, r)| r.weighted_total)
                .map_err(wrap(f, Some(j)))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, _>>()?;

    let mut chosen = Vec::with_capacity(plan.n_outer());
    let mut cursor = 0;
    for f in 0..plan.n_outer() {
        let k = plan.inner(f).len();
        let means: Vec<f64> = (0..lambdas.len())
            .map(|l| {
                let s = &inner_scores[cursor + l * k..cursor + (l + 1) * k];
                s.iter().sum::<f64>() / k as f64
            })
            .collect();
        cursor += lambdas.len() * k;
        let mut best = 0;
        for l in 1..lambdas.len() {
            let better = means[l] > means[best] || (means[l] == means[best] && lambdas[l] > lambdas[best]);
            if better {
                best = l;
            }
        }
        chosen.push((lambdas[best], means));
    }

    let folds: Vec<FoldScore> = chosen
        .into_par_iter()
        .enumerate()
        .map(|(f, (lambda, inner_means))| {
            let (train, test) = &per_fold[f];
            let (model, report) = fit_and_score(train, test, lambda, opts).map_err(wrap(f, None))?;
            Ok(FoldScore {
                fold: f,
                lambda,
                inner_means,
                report,
                model,
                n_train: train.n_samples(),
                n_test: test.n_samples(),
                dim: train.dim(),
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, XvalError>>()?;

    // Summing in sorted order makes the aggregate independent of fold order.
    let mut totals: Vec<f64> = folds.iter().map(|f| f.report.weighted_total).collect();
    totals.sort_by(f64::total_cmp);
    let aggregate = totals.iter().sum::<f64>() / totals.len() as f64;
    Ok(HeldOutScore { folds, aggregate })
}
