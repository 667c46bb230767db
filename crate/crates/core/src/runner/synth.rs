//! Synthetic corpora and layer stores with known structure.
//!
//! Every word starts with one of four stimulus prefixes for a place of
//! articulation (aspirated stop, stop after S, voiced stop, S plus sonorant)
//! followed by a random consonant/vowel filler. Each phone gets a mean vector
//! and each of its frames adds unit Gaussian noise.
//!
//! With `planted_dim = k` the phone means carry, in coordinates:
//!
//! ```text
//! 0 .. k-3      label-free nuisance, sd 6         (largest variance)
//! k-2           consonant +4 / vowel -4           (first positive control)
//! k-1           V1 +4 / V0 -4                     (second positive control)
//! k, k+1        distant context ±2.5              (negative controls)
//! D-5 .. D-3    place of a stop target, separation/2 (signal layers only)
//! D-2, D-1      stimulus type, ±separation/2      (signal layers only)
//! ```
//!
//! The place code matters because an `S` + stop token of one place is a
//! confound token for the others and shares its stimulus-type corner.
//!
//! so the positive controls occupy exactly the top `k` principal components
//! and any larger `d` picks up the distant-context coordinates.

use std::path::{Path, PathBuf};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{ExperimentConfig, ModelConfig};
use super::{task_seed, RunError};
use crate::corpus::{Corpus, PhoneToken, Utterance, VOWEL_BASES};
use crate::phonepatterns::Place;
use crate::reprstore::{FrameMatrix, LayerStore, StoreHeader};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub model_id: String,
    /// Words of each stimulus type at each place.
    pub words_per_type: usize,
    pub dim: usize,
    /// Distance between adjacent stimulus-type means, in frame-noise sd.
    pub separation: f64,
    pub layers: Vec<i32>,
    /// Layers carrying the stimulus-type signal; `None` means all.
    pub signal_layers: Option<Vec<i32>>,
    /// Place the positive controls in the top `k` principal components.
    pub planted_dim: Option<usize>,
    pub places: Vec<Place>,
    /// Every n-th word is flagged as a pseudoword; 0 disables.
    pub pseudoword_every: usize,
    pub hop_s: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            model_id: "synthetic".into(),
            words_per_type: 30,
            dim: 16,
            separation: 10.0,
            layers: vec![1],
            signal_layers: None,
            planted_dim: None,
            places: Place::ALL.to_vec(),
            pseudoword_every: 0,
            hop_s: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub alignments: PathBuf,
    pub stores: Vec<PathBuf>,
    pub config: PathBuf,
}

const NUISANCE_SD: f64 = 6.0;
const POSITIVE: f64 = 4.0;
const NEGATIVE: f64 = 2.5;
const FILLER_CONSONANTS: [&str; 10] = ["F", "L", "M", "N", "R", "V", "Z", "HH", "SH", "TH"];
const SONORANTS: [&str; 4] = ["L", "M", "N", "W"];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stimulus {
    Aspirated,
    AfterS,
    Voiced,
    Confound,
}

impl Stimulus {
    const ALL: [Stimulus; 4] = [Self::Aspirated, Self::AfterS, Self::Voiced, Self::Confound];

    fn corner(self) -> (f64, f64) {
        match self {
            Stimulus::Aspirated => (1.0, 1.0),
            Stimulus::AfterS => (1.0, -1.0),
            Stimulus::Voiced => (-1.0, 1.0),
            Stimulus::Confound => (-1.0, -1.0),
        }
    }
}

struct Word {
    labels: Vec<String>,
    frames: Vec<usize>,
    /// Index of the stimulus phone and its type.
    target: (usize, Stimulus),
    place: Place,
    pseudo: bool,
}

fn vowel(rng: &mut ChaCha8Rng) -> String {
    let base = VOWEL_BASES.choose(rng).unwrap();
    let stress = [0, 1, 2][WeightedIndex::new([2, 2, 1]).unwrap().sample(rng)];
    format!("{base}{stress}")
}

fn make_word(place: Place, kind: Stimulus, rng: &mut ChaCha8Rng) -> Word {
    let (p, b) = (place.voiceless_stop().to_string(), place.voiced_stop().to_string());
    let son = SONORANTS.choose(rng).unwrap().to_string();
    let (mut labels, target) = match kind {
        Stimulus::Aspirated => (vec![p], 0),
        Stimulus::AfterS => (vec!["S".into(), p], 1),
        Stimulus::Voiced => (vec![b], 0),
        Stimulus::Confound => (vec!["S".into(), son], 1),
    };
    labels.push(vowel(rng));
    for _ in 0..rng.gen_range(4..=6) {
        if rng.gen_bool(0.5) {
            labels.push(FILLER_CONSONANTS.choose(rng).unwrap().to_string());
        } else {
            labels.push(vowel(rng));
        }
    }
    let frames = labels.iter().map(|_| rng.gen_range(2..=4)).collect();
    Word {
        labels,
        frames,
        target: (target, kind),
        place,
        pseudo: false,
    }
}

fn is_vowel(label: &str) -> bool {
    label.ends_with(|c: char| c.is_ascii_digit())
}

impl SynthSpec {
    fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(format!("synthetic spec: {m}")));
        if self.words_per_type < 3 {
            return bad(format!(
                "words_per_type must be at least 3, got {}",
                self.words_per_type
            ));
        }
        if self.dim < 5 {
            return bad(format!("dim must be at least 5, got {}", self.dim));
        }
        if self.layers.is_empty() || self.places.is_empty() {
            return bad("layers and places must be nonempty".into());
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return bad("separation must be finite and nonnegative".into());
        }
        if !(self.hop_s.is_finite() && self.hop_s > 0.0) {
            return bad("hop_s must be positive".into());
        }
        if let Some(k) = self.planted_dim {
            if k < 2 || k + 7 > self.dim {
                return bad(format!(
                    "planted dimension {k} needs 2 <= k and k + 7 <= dim (dim = {})",
                    self.dim
                ));
            }
        }
        Ok(())
    }

    fn words(&self, rng: &mut ChaCha8Rng) -> Vec<Word> {
        let mut words = Vec::new();
        for &place in &self.places {
            for kind in Stimulus::ALL {
                for _ in 0..self.words_per_type {
                    words.push(make_word(place, kind, rng));
                }
            }
        }
        words.shuffle(rng);
        if self.pseudoword_every > 0 {
            for w in words
                .iter_mut()
                .skip(self.pseudoword_every - 1)
                .step_by(self.pseudoword_every)
            {
                w.pseudo = true;
            }
        }
        words
    }

    /// Mean vector of phone `i` of `w` at a layer.
    fn phone_mean(&self, w: &Word, i: usize, signal: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        if let Some(k) = self.planted_dim {
            for v in m.iter_mut().take(k - 2) {
                *v = NUISANCE_SD * rng.sample::<f64, _>(StandardNormal);
            }
            let label = &w.labels[i];
            let vow = is_vowel(label);
            m[k - 2] = if vow { -POSITIVE } else { POSITIVE };
            m[k - 1] = match label.chars().last() {
                Some('1') => POSITIVE,
                Some('0') => -POSITIVE,
                _ => 0.0,
            };
            if vow {
                let context = |j: Option<usize>| match j.and_then(|j| w.labels.get(j)) {
                    Some(l) if is_vowel(l) => -NEGATIVE,
                    Some(_) => NEGATIVE,
                    None => 0.0,
                };
                m[k] = context(i.checked_sub(4));
                m[k + 1] = context(Some(i + 4));
            }
        }
        if signal && i == w.target.0 {
            let (a, b) = w.target.1.corner();
            let half = self.separation / 2.0;
            m[self.dim - 2] += a * half;
            m[self.dim - 1] += b * half;
            if w.target.1 != Stimulus::Confound {
                m[self.dim - 5 + Place::ALL.iter().position(|&p| p == w.place).expect("known place")] += half;
            }
        }
        m
    }
}

/// Writes `alignments.tsv`, one store per layer and `experiment.toml` into
/// `dir`.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64, dir: &Path) -> Result<SynthOutput, RunError> {
    spec.validate()?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |e| RunError::Io { path, source: e }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;

    let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, "synth/corpus"));
    let words = spec.words(&mut rng);
    let utterances: Vec<Utterance> = words
        .iter()
        .enumerate()
        .map(|(n, w)| {
            let id = format!("syn{n:05}");
            let mut t = 0usize;
            let tokens = w
                .labels
                .iter()
                .zip(&w.frames)
                .enumerate()
                .map(|(i, (label, &f))| {
                    let tok = PhoneToken {
                        utterance_id: id.clone(),
                        word_form: id.to_lowercase(),
                        is_pseudoword: w.pseudo,
                        index_in_word: i,
                        label: label.clone(),
                        start_s: t as f64 * spec.hop_s,
                        end_s: (t + f) as f64 * spec.hop_s,
                    };
                    t += f;
                    tok
                })
                .collect();
            Utterance {
                id: id.clone(),
                word_form: id.to_lowercase(),
                is_pseudoword: w.pseudo,
                tokens,
            }
        })
        .collect();
    let corpus = Corpus::from_utterances(utterances)?;
    let alignments = dir.join("alignments.tsv");
    corpus.save_tsv(&alignments)?;

    let mut stores = Vec::new();
    for &layer in &spec.layers {
        let signal = spec.signal_layers.as_ref().is_none_or(|s| s.contains(&layer));
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, &format!("synth/layer{layer}")));
        let mut records = Vec::with_capacity(words.len());
        for (w, u) in words.iter().zip(corpus.utterances()) {
            let n_frames: usize = w.frames.iter().sum();
            let mut data = Vec::with_capacity(n_frames * spec.dim);
            for (i, &f) in w.frames.iter().enumerate() {
                let mean = spec.phone_mean(w, i, signal, &mut rng);
                for _ in 0..f {
                    data.extend(mean.iter().map(|m| (m + rng.sample::<f64, _>(StandardNormal)) as f32));
                }
            }
            let frames = FrameMatrix::new(n_frames, spec.dim, data).map_err(|e| RunError::Store {
                path: dir.to_path_buf(),
                source: e,
            })?;
            records.push((u.id.clone(), frames));
        }
        let header = StoreHeader {
            model_id: spec.model_id.clone(),
            layer_id: layer,
            dim: spec.dim,
            hop_s: spec.hop_s,
            offset_s: 0.0,
        };
        let path = dir.join(format!("{}_layer{layer}.prst", spec.model_id));
        let store = LayerStore::new(header, records)
            .and_then(|s| s.save(&path).map(|_| s))
            .map_err(|e| RunError::Store {
                path: path.clone(),
                source: e,
            })?;
        log::info!("wrote {} ({} utterances)", path.display(), store.records().len());
        stores.push(path);
    }

    let file_name = |p: &Path| PathBuf::from(p.file_name().expect("generated paths have names"));
    let cfg = ExperimentConfig {
        alignments: file_name(&alignments),
        models: vec![ModelConfig {
            id: spec.model_id.clone(),
            layers: stores.iter().map(|p| file_name(p)).collect(),
        }],
        places: spec.places.clone(),
        seed,
        ..ExperimentConfig::from_toml("alignments = \"\"\nmodels = []\n")?
    };
    let config = dir.join("experiment.toml");
    std::fs::write(&config, cfg.to_toml()).map_err(io(&config))?;
    Ok(SynthOutput {
        alignments,
        stores,
        config,
    })
}
