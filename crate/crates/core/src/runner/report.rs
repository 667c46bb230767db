//! Results table I/O and layer-wise SVG charts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::evalmetrics::AucScheme;
use crate::phonepatterns::ContrastKind;

/// Column order of the results CSV.
pub const RESULTS_COLUMNS: [&str; 17] = [
    "model_id",
    "layer_id",
    "contrast",
    "kind",
    "place",
    "dim",
    "n_samples",
    "n_group1",
    "n_group2",
    "n_confound",
    "auc_scheme",
    "weighted_auc",
    "weighted_auc_sd",
    "auc_part1",
    "auc_part2",
    "auc_part3",
    "lambdas",
];

/// One probed (model, layer, contrast, place) cell, or the mean over places.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model_id: String,
    pub layer_id: i32,
    pub contrast: String,
    pub kind: ContrastKind,
    /// A place of articulation, `mean` for the across-place average, or
    /// `all` for contrasts not tied to a place.
    pub place: String,
    pub dim: usize,
    pub n_samples: usize,
    pub n_group1: usize,
    pub n_group2: usize,
    pub n_confound: Option<usize>,
    pub auc_scheme: AucScheme,
    /// Mean held-out weighted AUC over outer folds.
    pub weighted_auc: f64,
    /// Sample standard deviation over outer folds; empty on mean rows.
    pub weighted_auc_sd: Option<f64>,
    /// Fold-mean component AUCs: class pairs (1,2), (1,3), (2,3) for
    /// one-vs-one, classes 1, 2, 3 against the rest for one-vs-rest.
    pub auc_part1: f64,
    pub auc_part2: Option<f64>,
    pub auc_part3: Option<f64>,
    /// Penalty chosen in each outer fold, `;`-separated.
    pub lambdas: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            out.write_record(RESULTS_COLUMNS)?;
        }
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, csv::Error> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd.deserialize().collect::<Result<Vec<ResultRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        let file = std::fs::File::create(path).map_err(|e| RunError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| RunError::Report(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let file = std::fs::File::open(path).map_err(|e| RunError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::read_csv(std::io::BufReader::new(file)).map_err(|e| RunError::Report(format!("{}: {e}", path.display())))
    }

    /// Contrast names in first-appearance order.
    pub fn contrasts(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert(r.contrast.clone()))
            .map(|r| r.contrast.clone())
            .collect()
    }
}

/// Appends a `mean` row after each group of place rows sharing
/// (model, layer, contrast) when the group spans at least two places.
pub(crate) fn with_place_means(rows: Vec<ResultRow>) -> Vec<ResultRow> {
    let mut out = Vec::with_capacity(rows.len() * 2);
    let mut i = 0;
    while i < rows.len() {
        let mut j = i + 1;
        let same = |a: &ResultRow, b: &ResultRow| {
            a.model_id == b.model_id && a.layer_id == b.layer_id && a.contrast == b.contrast
        };
        while j < rows.len() && same(&rows[i], &rows[j]) {
            j += 1;
        }
        let group = &rows[i..j];
        out.extend_from_slice(group);
        if group.len() >= 2 && group.iter().all(|r| r.place != "all") {
            out.push(mean_row(group));
        }
        i = j;
    }
    out
}

fn mean_of(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

fn mean_opt(group: &[ResultRow], f: impl Fn(&ResultRow) -> Option<f64>) -> Option<f64> {
    let v: Option<Vec<f64>> = group.iter().map(f).collect();
    v.map(|v| mean_of(v.iter().copied(), v.len()))
}

fn sum_opt(group: &[ResultRow], f: impl Fn(&ResultRow) -> Option<usize>) -> Option<usize> {
    group.iter().map(f).sum()
}

fn mean_row(group: &[ResultRow]) -> ResultRow {
    let n = group.len();
    let first = &group[0];
    ResultRow {
        model_id: first.model_id.clone(),
        layer_id: first.layer_id,
        contrast: first.contrast.clone(),
        kind: first.kind,
        place: "mean".into(),
        dim: first.dim,
        n_samples: group.iter().map(|r| r.n_samples).sum(),
        n_group1: group.iter().map(|r| r.n_group1).sum(),
        n_group2: group.iter().map(|r| r.n_group2).sum(),
        n_confound: sum_opt(group, |r| r.n_confound),
        auc_scheme: first.auc_scheme,
        weighted_auc: mean_of(group.iter().map(|r| r.weighted_auc), n),
        weighted_auc_sd: None,
        auc_part1: mean_of(group.iter().map(|r| r.auc_part1), n),
        auc_part2: mean_opt(group, |r| r.auc_part2),
        auc_part3: mean_opt(group, |r| r.auc_part3),
        lambdas: String::new(),
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];
const BASELINE: &str = "#d62728";

fn chart_rows<'a>(table: &'a ResultsTable, contrast: &str) -> Vec<&'a ResultRow> {
    let rows: Vec<&ResultRow> = table.rows.iter().filter(|r| r.contrast == contrast).collect();
    let places: BTreeSet<&str> = rows.iter().map(|r| r.place.as_str()).collect();
    let pick = ["mean", "all"]
        .into_iter()
        .find(|p| places.contains(p))
        .or_else(|| places.iter().next().copied())
        .unwrap_or("all")
        .to_string();
    rows.into_iter().filter(|r| r.place == pick).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Layer-wise line chart of weighted AUC for one contrast.
///
/// Layers are evenly spaced in id order, so CNN layers (negative ids) sit to
/// the left of transformer layers. A model whose only layer is 0 is drawn as
/// a horizontal baseline.
pub fn render_svg(table: &ResultsTable, contrast: &str) -> String {
    let rows = chart_rows(table, contrast);
    let mut models: Vec<&str> = Vec::new();
    for r in &rows {
        if !models.contains(&r.model_id.as_str()) {
            models.push(&r.model_id);
        }
    }
    let series: Vec<(&str, Vec<(i32, f64)>)> = models
        .iter()
        .map(|m| {
            let mut pts: Vec<(i32, f64)> = rows
                .iter()
                .filter(|r| r.model_id == *m)
                .map(|r| (r.layer_id, r.weighted_auc))
                .collect();
            pts.sort_by_key(|p| p.0);
            (*m, pts)
        })
        .collect();
    let is_baseline = |pts: &[(i32, f64)]| pts.iter().all(|p| p.0 == 0);
    let mut layers: BTreeSet<i32> = series
        .iter()
        .filter(|(_, p)| !is_baseline(p))
        .flat_map(|(_, p)| p.iter().map(|q| q.0))
        .collect();
    if layers.is_empty() {
        layers.insert(0);
    }
    let layers: Vec<i32> = layers.into_iter().collect();
    let ymin_data = rows.iter().map(|r| r.weighted_auc).fold(1.0f64, f64::min);
    let y_lo = ((ymin_data.min(0.5) - 0.05) * 10.0).floor() / 10.0;
    let y_lo = y_lo.max(0.0);

    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (60.0, 160.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x_of = |layer: i32| {
        let i = layers.iter().position(|&l| l == layer).unwrap_or(0) as f64;
        let n = layers.len() as f64;
        left + pw * (i + 0.5) / n
    };
    let y_of = |v: f64| top + ph * (1.0 - (v.clamp(y_lo, 1.0) - y_lo) / (1.0 - y_lo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(contrast)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let mut tick = y_lo;
    while tick <= 1.0 + 1e-9 {
        let y = y_of(tick);
        let _ = writeln!(
            s,
            r##"<g class="ytick"><line x1="{}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="black"/><line x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{tick:.1}</text></g>"##,
            left - 4.0,
            left + pw,
            left - 6.0,
            y + 4.0
        );
        tick += 0.1;
    }
    for &l in &layers {
        let x = x_of(l);
        let _ = writeln!(
            s,
            r#"<g class="xtick"><line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{l}</text></g>"#,
            top + ph,
            top + ph + 4.0,
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">layer</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">weighted AUC</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );

    let mut colour = 0;
    for (k, (model, pts)) in series.iter().enumerate() {
        let legend_y = top + 16.0 * k as f64 + 8.0;
        let c = if is_baseline(pts) {
            let y = y_of(pts[0].1);
            let _ = writeln!(
                s,
                r#"<line class="baseline" x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="{BASELINE}" stroke-dasharray="6 4"/>"#,
                left + pw
            );
            BASELINE
        } else {
            let c = PALETTE[colour % PALETTE.len()];
            colour += 1;
            let path: Vec<String> = pts
                .iter()
                .map(|&(l, v)| format!("{:.2},{:.2}", x_of(l), y_of(v)))
                .collect();
            if pts.len() > 1 {
                let _ = writeln!(
                    s,
                    r#"<polyline class="series" points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
                    path.join(" ")
                );
            }
            for &(l, v) in pts {
                let _ = writeln!(
                    s,
                    r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#,
                    x_of(l),
                    y_of(v)
                );
            }
            c
        };
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{legend_y:.2}" x2="{}" y2="{legend_y:.2}" stroke="{c}" stroke-width="2"/><text x="{}" y="{:.2}">{}</text>"#,
            w - right + 10.0,
            w - right + 30.0,
            w - right + 36.0,
            legend_y + 4.0,
            escape(model)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn file_stem(contrast: &str) -> String {
    contrast
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `results.csv` and one `<contrast>.svg` per contrast into `dir`.
pub fn emit_report(table: &ResultsTable, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    if table.rows.is_empty() {
        return Err(RunError::Report("results table is empty".into()));
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |e| RunError::Io { path, source: e }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let csv_path = dir.join("results.csv");
    table.save(&csv_path)?;
    let mut written = vec![csv_path];
    let mut stems: BTreeMap<String, usize> = BTreeMap::new();
    for contrast in table.contrasts() {
        let mut stem = file_stem(&contrast);
        let n = stems.entry(stem.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            stem = format!("{stem}_{n}");
        }
        let path = dir.join(format!("{stem}.svg"));
        std::fs::write(&path, render_svg(table, &contrast)).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}
