//! Time-aligned phone annotations for isolated-word recordings.
//!
//! The canonical on-disk form is a 7-column, tab-separated file with one
//! header row:
//!
//! ```text
//! utterance_id  word_form  is_pseudoword  index_in_word  label  start_s  end_s
//! ```
//!
//! Booleans are `0`/`1`, times are decimal seconds. Silence and pause
//! markers are dropped on load.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

/// Labels treated as non-phones and dropped at load time.
pub const SILENCE_MARKERS: &[&str] = &["sil", "sp", "spn", "SIL", "SP", "SPN", ""];

/// The fifteen ARPAbet vowel bases.
pub const VOWEL_BASES: &[&str] = &[
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW",
];

const HEADER: [&str; 7] = [
    "utterance_id",
    "word_form",
    "is_pseudoword",
    "index_in_word",
    "label",
    "start_s",
    "end_s",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("utterance '{utterance}': {message}")]
    Validation { utterance: String, message: String },
    #[error("cannot classify label '{0}': stress digit on a non-vowel base")]
    Classification(String),
    #[error("corpus is empty")]
    Empty,
}

/// One annotated phone interval within a word.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneToken {
    pub utterance_id: String,
    pub word_form: String,
    pub is_pseudoword: bool,
    pub index_in_word: usize,
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub word_form: String,
    pub is_pseudoword: bool,
    pub tokens: Vec<PhoneToken>,
}

impl Utterance {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.label.as_str())
    }
}

/// A validated collection of utterances, in first-appearance order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    utterances: Vec<Utterance>,
    words: usize,
    pseudowords: usize,
}

impl Corpus {
    /// Builds a corpus from utterance records, validating every invariant.
    pub fn from_utterances(utterances: Vec<Utterance>) -> Result<Self, CorpusError> {
        let mut seen = HashMap::new();
        for (i, u) in utterances.iter().enumerate() {
            if seen.insert(u.id.as_str(), i).is_some() {
                return Err(CorpusError::Validation {
                    utterance: u.id.clone(),
                    message: "duplicate utterance id".into(),
                });
            }
            validate_utterance(u)?;
        }
        let pseudowords = utterances.iter().filter(|u| u.is_pseudoword).count();
        Ok(Self {
            words: utterances.len() - pseudowords,
            pseudowords,
            utterances,
        })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn word_count(&self) -> usize {
        self.words
    }

    pub fn pseudoword_count(&self) -> usize {
        self.pseudowords
    }

    pub fn token_count(&self) -> usize {
        self.utterances.iter().map(|u| u.tokens.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    /// Returns a corpus restricted to real words (pseudowords removed).
    pub fn without_pseudowords(&self) -> Corpus {
        let utterances: Vec<_> = self.utterances.iter().filter(|u| !u.is_pseudoword).cloned().collect();
        Corpus {
            words: utterances.len(),
            pseudowords: 0,
            utterances,
        }
    }

    /// Serializes to the canonical TSV form.
    pub fn write_tsv<W: Write>(&self, out: W) -> Result<(), CorpusError> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .quote_style(csv::QuoteStyle::Never)
            .from_writer(out);
        w.write_record(HEADER).map_err(csv_io)?;
        for t in self.utterances.iter().flat_map(|u| u.tokens.iter()) {
            w.write_record([
                t.utterance_id.as_str(),
                t.word_form.as_str(),
                if t.is_pseudoword { "1" } else { "0" },
                &t.index_in_word.to_string(),
                t.label.as_str(),
                &t.start_s.to_string(),
                &t.end_s.to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let file = std::fs::File::create(path)?;
        self.write_tsv(std::io::BufWriter::new(file))
    }
}

fn csv_io(e: csv::Error) -> CorpusError {
    CorpusError::Io(std::io::Error::other(e))
}

fn validate_utterance(u: &Utterance) -> Result<(), CorpusError> {
    let fail = |message: String| CorpusError::Validation {
        utterance: u.id.clone(),
        message,
    };
    if u.tokens.is_empty() {
        return Err(fail("no phone tokens".into()));
    }
    for (i, t) in u.tokens.iter().enumerate() {
        if t.utterance_id != u.id || t.word_form != u.word_form || t.is_pseudoword != u.is_pseudoword {
            return Err(fail(format!("token {i} disagrees with its utterance record")));
        }
        if !(t.start_s.is_finite() && t.end_s.is_finite()) || t.start_s < 0.0 {
            return Err(fail(format!("token {i} ({}) has an invalid time", t.label)));
        }
        if t.end_s <= t.start_s {
            return Err(fail(format!(
                "token {i} ({}) has end {} <= start {}",
                t.label, t.end_s, t.start_s
            )));
        }
        if t.index_in_word != i {
            return Err(fail(format!(
                "phone indices are not contiguous: position {i} carries index {}",
                t.index_in_word
            )));
        }
        if i > 0 && t.start_s < u.tokens[i - 1].end_s {
            return Err(fail(format!("token {i} ({}) overlaps its predecessor", t.label)));
        }
    }
    Ok(())
}

/// Loads an alignment TSV from disk.
pub fn load_alignments(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path)?;
    read_alignments(std::io::BufReader::new(file))
}

/// Parses alignment TSV from any reader. Rows within an utterance are
/// normalized by start time.
pub fn read_alignments<R: Read>(input: R) -> Result<Corpus, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(true)
        .quoting(false)
        .from_reader(input);

    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<PhoneToken>> = HashMap::new();
    let mut dropped = 0usize;

    for record in reader.records() {
        let record = record.map_err(|e| CorpusError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let perr = |message: String| CorpusError::Parse { line, message };
        if record.len() != 7 {
            return Err(perr(format!("expected 7 fields, found {}", record.len())));
        }
        let label = record[4].trim();
        if SILENCE_MARKERS.contains(&label) {
            dropped += 1;
            continue;
        }
        let is_pseudoword = match &record[2] {
            "0" => false,
            "1" => true,
            other => return Err(perr(format!("is_pseudoword must be 0 or 1, got '{other}'"))),
        };
        let index_in_word = record[3]
            .parse::<usize>()
            .map_err(|_| perr(format!("non-integer index_in_word '{}'", &record[3])))?;
        let time = |s: &str, name: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| perr(format!("non-numeric {name} '{s}'")))
        };
        let token = PhoneToken {
            utterance_id: record[0].to_string(),
            word_form: record[1].to_string(),
            is_pseudoword,
            index_in_word,
            label: label.to_string(),
            start_s: time(&record[5], "start_s")?,
            end_s: time(&record[6], "end_s")?,
        };
        if token.utterance_id.is_empty() {
            return Err(perr("empty utterance_id".into()));
        }
        let entry = grouped.entry(token.utterance_id.clone()).or_insert_with(|| {
            order.push(token.utterance_id.clone());
            Vec::new()
        });
        entry.push(token);
    }
    if dropped > 0 {
        log::info!("dropped {dropped} silence/pause intervals");
    }

    let mut utterances = Vec::with_capacity(order.len());
    for id in order {
        let mut tokens = grouped.remove(&id).unwrap_or_default();
        tokens.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        let first = &tokens[0];
        utterances.push(Utterance {
            id: id.clone(),
            word_form: first.word_form.clone(),
            is_pseudoword: first.is_pseudoword,
            tokens,
        });
    }
    Corpus::from_utterances(utterances)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PhoneKind {
    Consonant,
    Vowel,
}

/// Lexical stress marked on a vowel label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stress {
    None,
    Unstressed,
    Primary,
    Secondary,
}

impl Stress {
    pub fn digit(self) -> Option<u8> {
        match self {
            Stress::None => None,
            Stress::Unstressed => Some(0),
            Stress::Primary => Some(1),
            Stress::Secondary => Some(2),
        }
    }

    pub fn from_digit(d: u8) -> Option<Stress> {
        match d {
            0 => Some(Stress::Unstressed),
            1 => Some(Stress::Primary),
            2 => Some(Stress::Secondary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneClass {
    pub base: String,
    pub kind: PhoneKind,
    pub stress: Stress,
}

impl fmt::Display for PhoneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stress.digit() {
            Some(d) => write!(f, "{}{d}", self.base),
            None => f.write_str(&self.base),
        }
    }
}

pub fn is_vowel_base(base: &str) -> bool {
    VOWEL_BASES.contains(&base)
}

/// Classifies a single ARPAbet label.
pub fn classify_label(label: &str) -> Result<PhoneClass, CorpusError> {
    let bad = || CorpusError::Classification(label.to_string());
    let (base, digit) = match label.char_indices().last() {
        Some((i, c)) if c.is_ascii_digit() => (&label[..i], Some(c as u8 - b'0')),
        Some(_) => (label, None),
        None => return Err(bad()),
    };
    if base.is_empty() || base.chars().any(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let vowel = is_vowel_base(base);
    match digit {
        Some(d) => {
            let stress = Stress::from_digit(d).ok_or_else(bad)?;
            if !vowel {
                return Err(bad());
            }
            Ok(PhoneClass {
                base: base.to_string(),
                kind: PhoneKind::Vowel,
                stress,
            })
        }
        None => Ok(PhoneClass {
            base: base.to_string(),
            kind: if vowel { PhoneKind::Vowel } else { PhoneKind::Consonant },
            stress: Stress::None,
        }),
    }
}

/// Classification of every label occurring in a corpus.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Inventory {
    records: BTreeMap<String, PhoneClass>,
}

impl Inventory {
    pub fn get(&self, label: &str) -> Option<&PhoneClass> {
        self.records.get(label)
    }

    pub fn is_vowel(&self, label: &str) -> bool {
        self.get(label).is_some_and(|c| c.kind == PhoneKind::Vowel)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PhoneClass)> {
        self.records.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Adds a label that may not occur in the corpus (e.g. a pattern literal).
    pub fn insert_label(&mut self, label: &str) -> Result<&PhoneClass, CorpusError> {
        if !self.records.contains_key(label) {
            let class = classify_label(label)?;
            self.records.insert(label.to_string(), class);
        }
        Ok(&self.records[label])
    }
}

pub fn build_inventory(corpus: &Corpus) -> Result<Inventory, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut inv = Inventory::default();
    for u in corpus.utterances() {
        for label in u.labels() {
            inv.insert_label(label)?;
        }
    }
    Ok(inv)
}
