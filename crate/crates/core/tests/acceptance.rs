//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use phonoprobe::corpus::{build_inventory, load_alignments, Corpus, PhoneToken, Utterance};
use phonoprobe::dimselect::{control_score, dim_grid, select_dim, ControlScores};
use phonoprobe::evalmetrics::binary_auc;
use phonoprobe::phonepatterns::{
    consonant_vowel, distant_after, distant_before, match_contrast, phonemic, phonetic, stress, ConfoundPolicy,
    ContrastLabel, ContrastSpec, Place,
};
use phonoprobe::probe::{fit_with, Objective, ProbeOptions};
use phonoprobe::reprstore::{pool, DataMatrix, FrameMatrix, LayerStore, Pooled, StoreHeader};
use phonoprobe::runner::{
    generate_synthetic, run_experiment, select_dimensionality, BuiltinSet, ExperimentConfig, PcaMode, SynthSpec,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- AUC

fn pair_count_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            pairs += 1.0;
            num += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    num / pairs
}

fn auc_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for inst in 0..1000 {
        let n = rng.gen_range(2..=200);
        let mut positive: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        positive[0] = true;
        positive[1] = false;
        // a third of the instances draw from a small grid to force ties
        let scores: Vec<f64> = if inst % 3 == 0 {
            (0..n).map(|_| rng.gen_range(0..8) as f64 / 4.0).collect()
        } else {
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let got = binary_auc(&scores, &positive).map_err(|e| e.to_string())?;
        worst = worst.max((got - pair_count_auc(&scores, &positive)).abs());
    }
    let took = start.elapsed();
    ensure(
        worst <= 1e-12 && took < Duration::from_secs(10),
        format!(
            "max |diff| {worst:.1e} over 1000 instances in {:.2}s",
            took.as_secs_f64()
        ),
    )
}

// -------------------------------------------------------------- probe

fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> (DMatrix<f64>, Vec<usize>) {
    let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    for c in 0..k {
        labels[c] = c;
    }
    (x, labels)
}

fn probe_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(5..=40);
        let d = rng.gen_range(1..=6);
        let lambda = 10f64.powf(rng.gen_range(-4.0..1.0));
        let (x, labels) = random_problem(&mut rng, n, d, 3);
        let obj = Objective::new(&x, &labels, 3, lambda);
        let p: Vec<f64> = (0..obj.n_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = vec![0.0; p.len()];
        obj.value_and_gradient(&p, &mut g);
        for i in 0..p.len() {
            let (mut up, mut down) = (p.clone(), p.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (obj.value(&up) - obj.value(&down)) / (2.0 * h);
            // relative to the coordinate, floored at 1e-3 of the gradient's scale
            let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3 * scale);
            worst = worst.max(rel);
        }
    }
    ensure(
        worst <= 1e-5,
        format!("max relative error {worst:.1e} over 50 instances"),
    )
}

fn probe_priors() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DMatrix::from_fn(100, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
    let labels: Vec<usize> = (0..100)
        .map(|i| {
            if i < 50 {
                0
            } else if i < 80 {
                1
            } else {
                2
            }
        })
        .collect();
    let data = DataMatrix::new(x.clone(), labels, 3);
    let opts = ProbeOptions {
        lambda: 1e6,
        ..ProbeOptions::default()
    };
    let fit = fit_with(&data, &opts, None).map_err(|e| e.to_string())?;
    let proba = fit.model.predict_proba_matrix(&x).map_err(|e| e.to_string())?;
    let prior = [0.5, 0.3, 0.2];
    let mut worst = 0.0f64;
    for r in 0..proba.nrows() {
        for (c, p) in prior.iter().enumerate() {
            worst = worst.max((proba[(r, c)] - p).abs());
        }
    }
    let w = fit.model.weights.amax();
    ensure(worst <= 1e-3, format!("max |p - prior| {worst:.1e}, max |W| {w:.1e}"))
}

fn probe_restarts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(20..=120);
        let d = rng.gen_range(2..=10);
        let (x, labels) = random_problem(&mut rng, n, d, 3);
        let data = DataMatrix::new(x, labels, 3);
        let opts = ProbeOptions {
            lambda: 10f64.powf(rng.gen_range(-3.0..1.0)),
            tol: 1e-10,
            ..ProbeOptions::default()
        };
        let a = fit_with(&data, &opts, None).map_err(|e| e.to_string())?;
        let init: Vec<f64> = (0..3 * (d + 1)).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b = fit_with(&data, &opts, Some(&init)).map_err(|e| e.to_string())?;
        worst = worst.max((a.final_objective - b.final_objective).abs());
    }
    ensure(
        worst <= 1e-8,
        format!("max objective gap {worst:.1e} over 20 restart pairs"),
    )
}

// ------------------------------------------------------------ matcher

const VOWELS: [&str; 8] = ["AA", "AE", "AH", "IY", "IH", "OW", "UW", "EY"];
const CONSONANTS: [&str; 16] = [
    "P", "T", "K", "B", "D", "G", "S", "L", "M", "N", "W", "R", "F", "Z", "HH", "JH",
];

fn random_word(rng: &mut ChaCha8Rng, id: usize) -> Utterance {
    let vowel = |rng: &mut ChaCha8Rng| format!("{}{}", VOWELS.choose(rng).unwrap(), rng.gen_range(0..3));
    let mut labels: Vec<String> = Vec::new();
    if id < 24 {
        // every stop with and without a leading S, twice over
        if id % 2 == 1 {
            labels.push("S".into());
        }
        labels.push(CONSONANTS[(id / 2) % 6].to_string());
        labels.push(vowel(rng));
    } else if rng.gen_bool(0.6) {
        if rng.gen_bool(0.5) {
            labels.push("S".into());
        }
        labels.push(CONSONANTS[..12].choose(rng).unwrap().to_string());
    }
    let len = labels.len() + rng.gen_range(2..=8);
    while labels.len() < len {
        if rng.gen_bool(0.5) {
            labels.push(vowel(rng));
        } else {
            labels.push(CONSONANTS.choose(rng).unwrap().to_string());
        }
    }
    let uid = format!("r{id:03}");
    let tokens = labels
        .iter()
        .enumerate()
        .map(|(i, l)| PhoneToken {
            utterance_id: uid.clone(),
            word_form: uid.clone(),
            is_pseudoword: false,
            index_in_word: i,
            label: l.clone(),
            start_s: i as f64 * 0.05,
            end_s: (i + 1) as f64 * 0.05,
        })
        .collect();
    Utterance {
        id: uid.clone(),
        word_form: uid,
        is_pseudoword: false,
        tokens,
    }
}

/// Slot test written from scratch: literals, sets, C, V, V<digit>, X.
fn slot_ok(slot: &str, label: &str) -> bool {
    let is_vowel = label.ends_with(|c: char| c.is_ascii_digit());
    match slot {
        "X" => true,
        "C" => !is_vowel,
        "V" => is_vowel,
        "V0" | "V1" | "V2" => is_vowel && label.ends_with(&slot[1..]),
        s if s.starts_with('{') => s[1..s.len() - 1].split(',').any(|x| x == label),
        s => s == label,
    }
}

/// Every position of every utterance against every pattern text.
fn brute_force(corpus: &Corpus, groups: &[(ContrastLabel, Vec<String>)]) -> BTreeSet<(String, usize, ContrastLabel)> {
    let mut out = BTreeSet::new();
    for u in corpus.utterances() {
        let labels: Vec<&str> = u.tokens.iter().map(|t| t.label.as_str()).collect();
        for pos in 0..labels.len() {
            for (label, patterns) in groups {
                for text in patterns {
                    let mut parts: Vec<&str> = text.split_whitespace().collect();
                    let anchored = parts[0] == "#";
                    if anchored {
                        parts.remove(0);
                    }
                    let target = parts.iter().position(|p| p.starts_with('(')).unwrap();
                    let slots: Vec<&str> = parts
                        .iter()
                        .map(|p| p.trim_start_matches('(').trim_end_matches(')'))
                        .collect();
                    if pos < target || (anchored && pos != target) || pos - target + slots.len() > labels.len() {
                        continue;
                    }
                    let start = pos - target;
                    if slots.iter().enumerate().all(|(k, s)| slot_ok(s, labels[start + k])) {
                        out.insert((u.id.clone(), pos, *label));
                    }
                }
            }
        }
    }
    out
}

fn table_groups(name: &str, place: Place) -> Vec<(ContrastLabel, Vec<String>)> {
    let (p, b) = (place.voiceless_stop(), place.voiced_stop());
    let set: Vec<&str> = ["K", "T", "L", "M", "N", "W"].into_iter().filter(|s| *s != p).collect();
    let conf = vec![format!("# S ({{{}}}) V", set.join(","))];
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    use ContrastLabel::*;
    match name {
        "phonemic" => vec![
            (Group1, vec![format!("# ({p}) V"), format!("# S ({p}) V")]),
            (Group2, vec![format!("# ({b}) V")]),
            (Confound, conf),
        ],
        "phonetic" => vec![
            (Group1, vec![format!("# ({p}) V")]),
            (Group2, vec![format!("# S ({p}) V"), format!("# ({b}) V")]),
            (Confound, conf),
        ],
        "consonant_vowel" => vec![(Group1, s(&["(C)"])), (Group2, s(&["(V)"]))],
        "stress" => vec![(Group1, s(&["(V1)"])), (Group2, s(&["(V0)"]))],
        "distant_before" => vec![(Group1, s(&["C X X X (V)"])), (Group2, s(&["V X X X (V)"]))],
        "distant_after" => vec![(Group1, s(&["(V) X X X C"])), (Group2, s(&["(V) X X X V"]))],
        _ => unreachable!(),
    }
}

fn matcher_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let corpus =
        Corpus::from_utterances((0..50).map(|i| random_word(&mut rng, i)).collect()).map_err(|e| e.to_string())?;
    let inv = build_inventory(&corpus).map_err(|e| e.to_string())?;
    let policy = ConfoundPolicy::default();
    let mut checked = 0;
    let mut hits_total = 0;
    for place in Place::ALL {
        let specs: Vec<(&str, ContrastSpec)> = vec![
            ("phonemic", phonemic(place, policy)),
            ("phonetic", phonetic(place, policy)),
            ("consonant_vowel", consonant_vowel()),
            ("stress", stress()),
            ("distant_before", distant_before()),
            ("distant_after", distant_after()),
        ];
        let mut keyed: BTreeMap<&str, BTreeSet<(String, usize, ContrastLabel)>> = BTreeMap::new();
        for (name, spec) in &specs {
            let got: BTreeSet<_> = match_contrast(&corpus, &inv, spec)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|t| (t.token.utterance_id.clone(), t.position, t.label))
                .collect();
            let want = brute_force(&corpus, &table_groups(name, place));
            if got != want {
                return Err(format!(
                    "{name}/{place}: {} matched vs {} by brute force",
                    got.len(),
                    want.len()
                ));
            }
            let classes: BTreeSet<_> = got.iter().map(|h| h.2).collect();
            if classes.len() != spec.n_classes() {
                return Err(format!("{name}/{place}: random corpus misses a class"));
            }
            hits_total += got.len();
            checked += 1;
            keyed.insert(name, got);
        }
        let keys = |name: &str, pick: &dyn Fn(ContrastLabel) -> bool| -> BTreeSet<(String, usize)> {
            keyed[name]
                .iter()
                .filter(|h| pick(h.2))
                .map(|h| (h.0.clone(), h.1))
                .collect()
        };
        let same_union = keys("phonemic", &|_| true) == keys("phonetic", &|_| true);
        let conf = |l: ContrastLabel| l == ContrastLabel::Confound;
        let same_conf = keys("phonemic", &conf) == keys("phonetic", &conf);
        if !(same_union && same_conf) {
            return Err(format!("{place}: phonemic and phonetic token sets differ"));
        }
    }
    Ok(format!(
        "{checked} spec/place pairs agree ({hits_total} hits); partition holds at 3 places"
    ))
}

// ------------------------------------------------------------ pooling

fn pooling() -> Outcome {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus20.tsv");
    let corpus = load_alignments(&path).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dim = 4;
    let records = corpus
        .utterances()
        .iter()
        .map(|u| {
            let n = (u.tokens.last().unwrap().end_s / 0.02).ceil() as usize;
            let data = (0..n * dim).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
            (u.id.clone(), FrameMatrix::new(n, dim, data).unwrap())
        })
        .collect();
    let header = StoreHeader {
        model_id: "fixture".into(),
        layer_id: 1,
        dim,
        hop_s: 0.02,
        offset_s: 0.0,
    };
    let store = LayerStore::new(header.clone(), records).map_err(|e| e.to_string())?;
    let mut tokens = 0;
    for u in corpus.utterances() {
        let frames = store.get(&u.id).unwrap();
        for tok in &u.tokens {
            let Pooled::Vector(v) = pool(&store, tok).map_err(|e| e.to_string())? else {
                return Err(format!("{} {} skipped", u.id, tok.label));
            };
            for c in 0..dim {
                let col = (v.first_frame..v.first_frame + v.n_frames_pooled).map(|t| frames.row(t)[c] as f64);
                let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
                if v.values[c] < lo || v.values[c] > hi {
                    return Err(format!("{} {} coordinate {c} outside [{lo}, {hi}]", u.id, tok.label));
                }
            }
            tokens += 1;
        }
    }

    let data: Vec<f32> = (0..6).map(|t| t as f32).collect();
    let single = LayerStore::new(
        StoreHeader { dim: 1, ..header },
        vec![("u".into(), FrameMatrix::new(6, 1, data).unwrap())],
    )
    .map_err(|e| e.to_string())?;
    let tok = PhoneToken {
        utterance_id: "u".into(),
        word_form: "u".into(),
        is_pseudoword: false,
        index_in_word: 0,
        label: "P".into(),
        start_s: 0.035,
        end_s: 0.085,
    };
    let Pooled::Vector(v) = pool(&single, &tok).map_err(|e| e.to_string())? else {
        return Err("hand example skipped".into());
    };
    let frames: Vec<usize> = (v.first_frame..v.first_frame + v.n_frames_pooled).collect();
    ensure(
        frames == vec![1, 2, 3, 4] && v.values == vec![2.5],
        format!("{tokens} fixture tokens convex; [0.035, 0.085) pools frames {frames:?}"),
    )
}

// ------------------------------------------------ control score and grid

fn control_units() -> Outcome {
    let mut three = ControlScores::new();
    for layer in 1..=3 {
        three.set_layer(layer, 0.9, 0.8, 0.6, 0.5);
    }
    let mut chance = ControlScores::new();
    for layer in 1..=3 {
        chance.set_layer(layer, 0.5, 0.5, 0.5, 0.5);
    }
    let mut one = ControlScores::new();
    one.set_layer(1, 1.0, 1.0, 0.5, 0.5);
    let s = [&three, &chance, &one].map(|c| control_score(c).unwrap());
    let arithmetic = (s[0] - 1.8).abs() < 1e-12 && s[1] == 0.0 && s[2] == 1.0;
    let grid = dim_grid(768) == vec![2, 4, 8, 16, 32, 64, 128, 256, 512, 768];
    let ties = BTreeMap::from([(2, 1.0), (4, 2.0), (8, 2.0)]);
    let tie = select_dim(&ties).map(|r| r.d_star) == Ok(4);
    ensure(
        arithmetic && grid && tie,
        format!("S = {:?}; grid(768) ok: {grid}; tie-break d* = 4: {tie}", s),
    )
}

// ------------------------------------------------------- end to end

fn synth_config(spec: &SynthSpec, seed: u64, dir: &Path) -> Result<ExperimentConfig, String> {
    let out = generate_synthetic(spec, seed, dir).map_err(|e| e.to_string())?;
    ExperimentConfig::load(&out.config).map_err(|e| e.to_string())
}

fn planted() -> Outcome {
    let start = Instant::now();
    let mut tallies = Vec::new();
    let mut ok = true;
    for k in [2usize, 4, 8] {
        let mut hits = 0;
        let mut picks = Vec::new();
        for seed in 0..10 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let spec = SynthSpec {
                words_per_type: 20,
                dim: 16,
                separation: 2.0,
                layers: vec![1, 2],
                planted_dim: Some(k),
                ..SynthSpec::default()
            };
            let mut cfg = synth_config(&spec, 100 + seed, dir.path())?;
            cfg.pca.mode = PcaMode::Select;
            cfg.cv.outer_folds = 5;
            cfg.cv.inner_folds = 3;
            cfg.cv.lambdas = vec![1e-2, 1.0, 100.0];
            let out = select_dimensionality(&cfg).map_err(|e| e.to_string())?;
            let d = out.d_star("synthetic").unwrap_or(0);
            picks.push(d);
            hits += usize::from(d == k);
        }
        ok &= hits >= 9;
        tallies.push(format!("k={k}: {hits}/10 {picks:?}"));
    }
    let took = start.elapsed();
    ensure(
        ok && took < Duration::from_secs(300),
        format!("{} in {:.1}s", tallies.join("; "), took.as_secs_f64()),
    )
}

fn aggregate(cfg: &ExperimentConfig) -> Result<f64, String> {
    let out = run_experiment(cfg).map_err(|e| e.to_string())?;
    let means: Vec<f64> = out
        .table
        .rows
        .iter()
        .filter(|r| r.place == "mean")
        .map(|r| r.weighted_auc)
        .collect();
    Ok(means.iter().sum::<f64>() / means.len() as f64)
}

fn null_and_separable() -> Outcome {
    let spec = SynthSpec {
        words_per_type: 15,
        ..SynthSpec::default()
    };
    let mut inside = 0;
    let mut values = Vec::new();
    for seed in 0..20 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = synth_config(&spec, 200 + seed, dir.path())?;
        cfg.permute_labels = true;
        cfg.contrasts.builtin = vec![BuiltinSet::Phonemic, BuiltinSet::Phonetic];
        let a = aggregate(&cfg)?;
        inside += usize::from((0.4..=0.6).contains(&a));
        values.push(format!("{a:.3}"));
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = synth_config(&spec, 300, dir.path())?;
    cfg.contrasts.builtin = vec![BuiltinSet::Phonemic, BuiltinSet::Phonetic];
    let separable = aggregate(&cfg)?;
    ensure(
        inside >= 18 && separable >= 0.99,
        format!(
            "permuted: {inside}/20 in [0.4, 0.6] ({}); separable: {separable:.4}",
            values.join(" ")
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let spec = SynthSpec {
        words_per_type: 10,
        layers: vec![1, 2],
        ..SynthSpec::default()
    };
    generate_synthetic(&spec, 9, d).map_err(|e| e.to_string())?;
    let run = |out: &str, jobs: &str| -> Result<Vec<u8>, String> {
        let status = Command::new(env!("CARGO_BIN_EXE_phonoprobe"))
            .args(["run", "--config", "experiment.toml", "--out", out, "--jobs", jobs])
            .current_dir(d)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?
            .status;
        if !status.success() {
            return Err(format!("run exited with {status}"));
        }
        std::fs::read(d.join(out).join("results.csv")).map_err(|e| e.to_string())
    };
    let (a, b) = (run("first", "1")?, run("second", "4")?);
    ensure(
        a == b,
        format!("{} bytes, identical across 1 and 4 threads: {}", a.len(), a == b),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("auc oracle", auc_oracle),
        ("probe gradient", probe_gradient),
        ("probe prior recovery", probe_priors),
        ("probe restarts", probe_restarts),
        ("pattern matcher", matcher_oracle),
        ("pooling", pooling),
        ("control score and grid", control_units),
        ("planted subspace", planted),
        ("null calibration", null_and_separable),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {name}: {detail} [{:.1}s]", start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
