use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CvConfig, ExperimentConfig, PcaMode, PcaPopulation};
use super::report::{emit_report, with_place_means, ResultRow, ResultsTable};
use super::{task_seed, RunError, TaskFailure};
use crate::corpus::{build_inventory, load_alignments, Corpus, Inventory};
use crate::dimselect::{control_score, dim_grid, fit_pca, select_dim, ControlScores, ControlSlot, PcaProjection};
use crate::phonepatterns::{self, match_contrast, ContrastKind, ContrastLabel, ContrastSpec, Place, TargetToken};
use crate::reprstore::{assemble, DataMatrix, LayerStore};
use crate::xval::{nested_cv_evaluate, FoldPlan, HeldOutScore, XvalError};

/// A contrast with the target tokens it selects from the corpus.
#[derive(Debug, Clone)]
pub struct MatchedContrast {
    pub spec: ContrastSpec,
    pub targets: Vec<TargetToken>,
}

/// Phonemic and phonetic contrasts at one place consumed the same tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionCheck {
    pub place: Place,
    pub n_tokens: usize,
}

/// Control AUCs of one layer at one candidate dimensionality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub model_id: String,
    pub layer_id: i32,
    pub d: usize,
    /// Components actually kept (capped by the rank of the PCA fit).
    pub d_used: usize,
    pub p1: f64,
    pub p2: f64,
    pub n1: f64,
    pub n2: f64,
}

/// Control score of a model at one candidate dimensionality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub model_id: String,
    pub d: usize,
    pub score: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub table: ResultsTable,
    pub controls: Vec<ControlRow>,
    pub selection: Vec<SelectionRow>,
    pub partition: Vec<PartitionCheck>,
    /// Targets dropped during pooling, summed over layers and contrasts.
    pub skipped: usize,
}

impl RunOutput {
    pub fn d_star(&self, model: &str) -> Option<usize> {
        self.selection
            .iter()
            .find(|r| r.model_id == model && r.selected)
            .map(|r| r.d)
    }
}

pub fn match_targets(
    corpus: &Corpus,
    inventory: &Inventory,
    specs: &[ContrastSpec],
) -> Result<Vec<MatchedContrast>, RunError> {
    specs
        .iter()
        .map(|spec| {
            let targets = match_contrast(corpus, inventory, spec).map_err(|e| RunError::Pattern {
                contrast: spec.id(),
                source: e,
            })?;
            log::info!("{}: {} targets", spec.id(), targets.len());
            Ok(MatchedContrast {
                spec: spec.clone(),
                targets,
            })
        })
        .collect()
}

fn key_set(m: &MatchedContrast, labels: &[ContrastLabel]) -> BTreeSet<(String, usize)> {
    m.targets
        .iter()
        .filter(|t| labels.contains(&t.label))
        .map(TargetToken::key)
        .collect()
}

/// Checks that the phonemic and phonetic contrasts at each place select the
/// same tokens and only regroup them.
fn check_partitions(matched: &[MatchedContrast]) -> Result<Vec<PartitionCheck>, RunError> {
    use ContrastLabel::*;
    let find = |kind: ContrastKind, place: Place| {
        matched
            .iter()
            .find(|m| m.spec.kind() == kind && m.spec.place() == Some(place) && m.spec.name() == kind.as_str())
    };
    let mut checks = Vec::new();
    for place in Place::ALL {
        let (Some(pm), Some(pt)) = (find(ContrastKind::Phonemic, place), find(ContrastKind::Phonetic, place)) else {
            continue;
        };
        let fail = |message: String| RunError::Partition { place, message };
        let all = [Group1, Group2, Confound];
        if key_set(pm, &all) != key_set(pt, &all) {
            return Err(fail("phonemic and phonetic token sets differ".into()));
        }
        if key_set(pm, &[Confound]) != key_set(pt, &[Confound]) {
            return Err(fail("confound sets differ".into()));
        }
        if !key_set(pt, &[Group1]).is_subset(&key_set(pm, &[Group1])) {
            return Err(fail("phonetic group 1 is not inside phonemic group 1".into()));
        }
        if !key_set(pm, &[Group2]).is_subset(&key_set(pt, &[Group2])) {
            return Err(fail("phonemic group 2 is not inside phonetic group 2".into()));
        }
        let n_tokens = pm.targets.len();
        log::info!(
            "{}: phonemic/phonetic partition holds over {n_tokens} tokens",
            place.as_str()
        );
        checks.push(PartitionCheck { place, n_tokens });
    }
    Ok(checks)
}

fn permute_labels(matched: &mut [MatchedContrast], seed: u64) {
    for m in matched {
        let mut labels: Vec<ContrastLabel> = m.targets.iter().map(|t| t.label).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, &format!("permute/{}", m.spec.id())));
        labels.shuffle(&mut rng);
        m.targets.iter_mut().zip(labels).for_each(|(t, l)| t.label = l);
    }
}

struct Context {
    /// Configured contrasts first, then any control the dimensionality
    /// search needs that was not configured.
    contrasts: Vec<MatchedContrast>,
    n_configured: usize,
    partition: Vec<PartitionCheck>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Context, RunError> {
    cfg.validate()?;
    let mut corpus = load_alignments(&cfg.alignments)?;
    if !cfg.include_pseudowords {
        corpus = corpus.without_pseudowords();
    }
    log::info!(
        "corpus: {} words ({} pseudowords), {} phone tokens",
        corpus.word_count(),
        corpus.pseudoword_count(),
        corpus.token_count()
    );
    let inventory = build_inventory(&corpus)?;
    let mut specs = cfg.contrast_specs()?;
    let n_configured = specs.len();
    if cfg.pca.mode == PcaMode::Select {
        for c in phonepatterns::controls() {
            if !specs.iter().any(|s| s.id() == c.id()) {
                specs.push(c);
            }
        }
    }
    let mut contrasts = match_targets(&corpus, &inventory, &specs)?;
    let partition = check_partitions(&contrasts)?;
    if cfg.permute_labels {
        permute_labels(&mut contrasts, cfg.seed);
    }
    Ok(Context {
        contrasts,
        n_configured,
        partition,
    })
}

struct LayerData {
    layer_id: i32,
    dim: usize,
    /// Pooled matrix per contrast, aligned with `Context::contrasts`.
    matrices: Vec<DataMatrix>,
    pca: Option<PcaProjection>,
    skipped: usize,
}

fn task_err(model: &str, layer: i32, contrast: &str) -> impl Fn(TaskFailure) -> RunError {
    let model = model.to_string();
    let contrast = contrast.to_string();
    move |source| RunError::Task {
        model: model.clone(),
        layer,
        contrast: contrast.clone(),
        source,
    }
}

/// Loads one layer, pools every contrast, and fits PCA on the stimulus
/// population when `fit` is set.
fn load_layer(model: &str, path: &Path, ctx: &Context, fit: bool) -> Result<LayerData, RunError> {
    let store = LayerStore::load(path).map_err(|e| RunError::Store {
        path: path.to_path_buf(),
        source: e,
    })?;
    let layer = store.layer_id();
    let assembled = ctx
        .contrasts
        .par_iter()
        .map(|m| {
            assemble(&store, &m.targets, m.spec.n_classes()).map_err(|e| task_err(model, layer, &m.spec.id())(e.into()))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let skipped = assembled.iter().map(|a| a.skipped.len()).sum();
    let matrices: Vec<DataMatrix> = assembled.into_iter().map(|a| a.matrix).collect();
    let pca = if fit {
        // each stimulus token once, in key order
        let mut rows: BTreeMap<&(String, usize), Vec<f64>> = BTreeMap::new();
        for m in &matrices {
            for (r, key) in m.keys.iter().enumerate() {
                rows.entry(key)
                    .or_insert_with(|| m.features.row(r).iter().copied().collect());
            }
        }
        let rows: Vec<Vec<f64>> = rows.into_values().collect();
        let x = nalgebra::DMatrix::from_fn(rows.len(), store.dim(), |r, c| rows[r][c]);
        let p = fit_pca(&x).map_err(|e| task_err(model, layer, "pca")(e.into()))?;
        log::info!(
            "{model} layer {layer}: PCA on {} stimulus tokens, {} components",
            rows.len(),
            p.n_components()
        );
        Some(p)
    } else {
        None
    };
    Ok(LayerData {
        layer_id: layer,
        dim: store.dim(),
        matrices,
        pca,
        skipped,
    })
}

fn probe(data: &DataMatrix, cv: &CvConfig, fold_pca: Option<usize>, seed: u64) -> Result<HeldOutScore, XvalError> {
    let plan = FoldPlan::stratified(&data.labels, cv.outer_folds, cv.inner_folds, seed)?;
    nested_cv_evaluate(data, &cv.lambdas, &plan, &cv.options(fold_pca))
}

fn reduce(data: &DataMatrix, pca: &PcaProjection, d: usize) -> Result<(DataMatrix, usize), TaskFailure> {
    let d = d.min(pca.n_components());
    Ok((data.with_features(pca.project(&data.features, d)?), d))
}

fn sorted_headers(cfg: &ExperimentConfig, model: usize) -> Result<Vec<(PathBuf, i32, usize)>, RunError> {
    let mut layers = cfg.models[model]
        .layers
        .iter()
        .map(|p| {
            LayerStore::load_header(p)
                .map(|h| (p.clone(), h.layer_id, h.dim))
                .map_err(|e| RunError::Store {
                    path: p.clone(),
                    source: e,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    layers.sort_by_key(|l| l.1);
    Ok(layers)
}

fn control_index(ctx: &Context) -> [usize; 4] {
    let ids = phonepatterns::controls().map(|c| c.id());
    ids.map(|id| {
        ctx.contrasts
            .iter()
            .position(|m| m.spec.id() == id)
            .expect("controls are matched in select mode")
    })
}

/// Scores the four controls at every candidate dimensionality and picks d*
/// for one model.
fn select_for_model(
    cfg: &ExperimentConfig,
    ctx: &Context,
    model: usize,
) -> Result<(Vec<ControlRow>, Vec<SelectionRow>, usize), RunError> {
    let model_id = cfg.models[model].id.as_str();
    let layers = sorted_headers(cfg, model)?;
    let max_dim = layers.iter().map(|l| l.2).max().unwrap_or(1);
    let grid = dim_grid(max_dim);
    let cv = cfg.search_cv();
    let slots = control_index(ctx);

    let per_layer: Vec<Vec<ControlRow>> = layers
        .par_iter()
        .map(|(path, _, _)| {
            let data = load_layer(model_id, path, ctx, true)?;
            let pca = data.pca.as_ref().expect("fit requested");
            let cells: Vec<(usize, usize)> = grid.iter().flat_map(|&d| (0..4).map(move |s| (d, s))).collect();
            let aucs = cells
                .par_iter()
                .map(|&(d, s)| {
                    let m = &ctx.contrasts[slots[s]];
                    let err = task_err(model_id, data.layer_id, &m.spec.id());
                    let (x, used) = reduce(&data.matrices[slots[s]], pca, d).map_err(&err)?;
                    let score = probe(&x, cv, None, task_seed(cfg.seed, &m.spec.id())).map_err(|e| err(e.into()))?;
                    Ok((used, score.aggregate))
                })
                .collect::<Vec<_>>()
                .into_iter()
                .collect::<Result<Vec<_>, RunError>>()?;
            Ok(grid
                .iter()
                .enumerate()
                .map(|(g, &d)| {
                    let a = &aucs[g * 4..g * 4 + 4];
                    ControlRow {
                        model_id: model_id.to_string(),
                        layer_id: data.layer_id,
                        d,
                        d_used: a[0].0,
                        p1: a[0].1,
                        p2: a[1].1,
                        n1: a[2].1,
                        n2: a[3].1,
                    }
                })
                .collect())
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, RunError>>()?;
    let rows: Vec<ControlRow> = per_layer.into_iter().flatten().collect();

    let mut per_d = BTreeMap::new();
    for &d in &grid {
        let mut scores = ControlScores::new();
        for r in rows.iter().filter(|r| r.d == d) {
            scores.set(r.layer_id, ControlSlot::P1, r.p1);
            scores.set(r.layer_id, ControlSlot::P2, r.p2);
            scores.set(r.layer_id, ControlSlot::N1, r.n1);
            scores.set(r.layer_id, ControlSlot::N2, r.n2);
        }
        let s = control_score(&scores).map_err(|e| RunError::Selection {
            model: model_id.to_string(),
            source: e,
        })?;
        per_d.insert(d, s);
    }
    let sel = select_dim(&per_d).map_err(|e| RunError::Selection {
        model: model_id.to_string(),
        source: e,
    })?;
    log::info!("{model_id}: d* = {} (S = {})", sel.d_star, sel.best_score());
    let selection = sel
        .grid
        .iter()
        .zip(&sel.scores)
        .map(|(&d, &score)| SelectionRow {
            model_id: model_id.to_string(),
            d,
            score,
            selected: d == sel.d_star,
        })
        .collect();
    Ok((rows, selection, sel.d_star))
}

/// Runs only the control-score search over the dimensionality grid.
pub fn select_dimensionality(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let mut cfg = cfg.clone();
    cfg.pca.mode = PcaMode::Select;
    with_pool(&cfg, |cfg| {
        let ctx = prepare(cfg)?;
        let mut out = RunOutput {
            partition: ctx.partition.clone(),
            ..RunOutput::default()
        };
        for m in 0..cfg.models.len() {
            let (controls, selection, _) = select_for_model(cfg, &ctx, m)?;
            out.controls.extend(controls);
            out.selection.extend(selection);
        }
        Ok(out)
    })
}

fn with_pool<T: Send>(
    cfg: &ExperimentConfig,
    f: impl FnOnce(&ExperimentConfig) -> Result<T, RunError> + Send,
) -> Result<T, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| RunError::Config(format!("thread pool: {e}")))?;
    pool.install(|| f(cfg))
}

fn stdev(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

fn result_row(
    model: &str,
    layer: i32,
    spec: &ContrastSpec,
    data: &DataMatrix,
    dim: usize,
    s: &HeldOutScore,
) -> ResultRow {
    let totals: Vec<f64> = s.folds.iter().map(|f| f.report.weighted_total).collect();
    let n_parts = s.folds[0].report.parts.len();
    let part = |p: usize| {
        (p < n_parts).then(|| s.folds.iter().map(|f| f.report.parts[p].auc).sum::<f64>() / s.folds.len() as f64)
    };
    let counts = data.class_counts();
    ResultRow {
        model_id: model.to_string(),
        layer_id: layer,
        contrast: spec.name().to_string(),
        kind: spec.kind(),
        place: spec.place().map_or("all", Place::as_str).to_string(),
        dim,
        n_samples: data.n_samples(),
        n_group1: counts[0],
        n_group2: counts[1],
        n_confound: counts.get(2).copied(),
        auc_scheme: s.folds[0].report.scheme,
        weighted_auc: s.aggregate,
        weighted_auc_sd: stdev(&totals),
        auc_part1: part(0).expect("at least one part"),
        auc_part2: part(1),
        auc_part3: part(2),
        lambdas: s.lambdas().iter().map(|l| l.to_string()).collect::<Vec<_>>().join(";"),
    }
}

/// Probes every configured contrast at every layer of one model.
fn probe_model(
    cfg: &ExperimentConfig,
    ctx: &Context,
    model: usize,
    d_target: Option<usize>,
) -> Result<(Vec<ResultRow>, usize), RunError> {
    let model_id = cfg.models[model].id.as_str();
    let layers = sorted_headers(cfg, model)?;
    let stimuli_pca = d_target.is_some() && cfg.pca.population == PcaPopulation::Stimuli;
    let fold_pca = d_target.filter(|_| cfg.pca.population == PcaPopulation::Fold);

    let per_layer = layers
        .par_iter()
        .map(|(path, _, _)| {
            let data = load_layer(model_id, path, ctx, stimuli_pca)?;
            let rows = ctx.contrasts[..ctx.n_configured]
                .par_iter()
                .enumerate()
                .map(|(i, m)| {
                    let id = m.spec.id();
                    let err = task_err(model_id, data.layer_id, &id);
                    let (x, dim) = match (&data.pca, d_target) {
                        (Some(p), Some(d)) => reduce(&data.matrices[i], p, d).map_err(&err)?,
                        _ => (data.matrices[i].clone(), fold_pca.map_or(data.dim, |d| d.min(data.dim))),
                    };
                    let score = probe(&x, &cfg.cv, fold_pca, task_seed(cfg.seed, &id)).map_err(|e| err(e.into()))?;
                    log::info!("{model_id} layer {} {id}: AUC {:.4}", data.layer_id, score.aggregate);
                    Ok(result_row(model_id, data.layer_id, &m.spec, &x, dim, &score))
                })
                .collect::<Vec<_>>()
                .into_iter()
                .collect::<Result<Vec<_>, RunError>>()?;
            Ok((rows, data.skipped))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>, RunError>>()?;

    let mut rows = Vec::new();
    let mut skipped = 0;
    for (mut layer_rows, s) in per_layer {
        // group place variants of a contrast together, keeping config order
        let mut order: Vec<&str> = Vec::new();
        for r in &layer_rows {
            if !order.contains(&r.contrast.as_str()) {
                order.push(&r.contrast);
            }
        }
        let rank: BTreeMap<String, usize> = order.iter().enumerate().map(|(i, n)| (n.to_string(), i)).collect();
        layer_rows.sort_by_key(|r| rank[&r.contrast]);
        rows.extend(with_place_means(layer_rows));
        skipped += s;
    }
    Ok((rows, skipped))
}

/// Runs a full experiment: match, pool, optionally reduce (with d* chosen by
/// the control score when configured), and probe with nested CV.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    with_pool(cfg, |cfg| {
        let ctx = prepare(cfg)?;
        let mut out = RunOutput {
            partition: ctx.partition.clone(),
            ..RunOutput::default()
        };
        for m in 0..cfg.models.len() {
            let d_target = match cfg.pca.mode {
                PcaMode::Off => None,
                PcaMode::Fixed => cfg.pca.dim,
                PcaMode::Select => {
                    let (controls, selection, d_star) = select_for_model(cfg, &ctx, m)?;
                    out.controls.extend(controls);
                    out.selection.extend(selection);
                    Some(d_star)
                }
            };
            let (rows, skipped) = probe_model(cfg, &ctx, m, d_target)?;
            out.table.rows.extend(rows);
            out.skipped += skipped;
        }
        if out.skipped > 0 {
            log::warn!("{} targets had no overlapping frames and were skipped", out.skipped);
        }
        Ok(out)
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunError::Report(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| RunError::Report(e.to_string()))?;
    }
    w.flush().map_err(|e| RunError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes the results CSV and charts, plus the control and selection tables
/// when a dimensionality search ran.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut written = if out.table.rows.is_empty() {
        Vec::new()
    } else {
        emit_report(&out.table, dir)?
    };
    if !out.selection.is_empty() {
        let c = dir.join("control_scores.csv");
        write_rows(&c, &out.controls)?;
        let s = dir.join("dim_selection.csv");
        write_rows(&s, &out.selection)?;
        written.extend([c, s]);
    }
    Ok(written)
}

/// Writes the pooled target vectors of every configured contrast, one CSV
/// per (model, layer): `contrast,utterance_id,position,class,v0,...`.
pub fn pool_layers(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    with_pool(cfg, |cfg| {
        let ctx = prepare(cfg)?;
        std::fs::create_dir_all(dir).map_err(|e| RunError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let mut written = Vec::new();
        for (m, model) in cfg.models.iter().enumerate() {
            for (path, layer, dim) in sorted_headers(cfg, m)? {
                let data = load_layer(&model.id, &path, &ctx, false)?;
                let out = dir.join(format!("pooled_{}_layer{layer}.csv", model.id));
                let report = |e: csv::Error| RunError::Report(format!("{}: {e}", out.display()));
                let mut w = csv::Writer::from_path(&out).map_err(report)?;
                let mut header = vec![
                    "contrast".to_string(),
                    "utterance_id".into(),
                    "position".into(),
                    "class".into(),
                ];
                header.extend((0..dim).map(|c| format!("v{c}")));
                w.write_record(&header).map_err(report)?;
                for (mc, x) in ctx.contrasts[..ctx.n_configured].iter().zip(&data.matrices) {
                    for r in 0..x.n_samples() {
                        let (utt, pos) = &x.keys[r];
                        let class = ContrastLabel::from_index(x.labels[r]).map_or("?", ContrastLabel::as_str);
                        let mut rec = vec![mc.spec.id(), utt.clone(), pos.to_string(), class.to_string()];
                        rec.extend(x.features.row(r).iter().map(|v| v.to_string()));
                        w.write_record(&rec).map_err(report)?;
                    }
                }
                w.flush().map_err(|e| RunError::Io {
                    path: out.clone(),
                    source: e,
                })?;
                written.push(out);
            }
        }
        Ok(written)
    })
}
