//! The stimulus pattern language.
//!
//! ```text
//! pattern  = [ "#" ] slot { slot } ;
//! slot     = "(" atom ")" | atom ;          (* exactly one parenthesized target *)
//! atom     = literal | set | "C" | "V" | "V0" | "V1" | "V2" | "X" ;
//! set      = "{" literal { "," literal } "}" ;
//! literal  = upper { upper } [ "0" | "1" | "2" ] ;
//! ```
//!
//! Slots are separated by whitespace. `#` anchors the first slot at word
//! onset. `C` is any consonant, `V` any vowel, `V0`/`V1`/`V2` a vowel with
//! that exact stress digit, `X` any phone.

use std::fmt;

use thiserror::Error;

use crate::corpus::{PhoneClass, PhoneKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatternError {
    #[error("pattern '{text}' at column {position}: {message}")]
    Syntax {
        text: String,
        position: usize,
        message: String,
    },
    #[error("pattern '{pattern}' literal '{literal}' is not a classifiable phone label")]
    UnclassifiableLiteral { pattern: String, literal: String },
    #[error("label '{0}' is not in the inventory")]
    UnknownLabel(String),
    #[error(
        "contrast '{}': utterance '{}' token {} ({}) matched by two groups ({} and {})",
        .0.contrast, .0.utterance, .0.position, .0.label, .0.first, .0.second
    )]
    Ambiguous(Box<Ambiguity>),
    #[error("contrast '{name}': {message}")]
    InvalidSpec { name: String, message: String },
}

/// A token claimed by patterns from two different groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Ambiguity {
    pub contrast: String,
    pub utterance: String,
    pub position: usize,
    pub label: String,
    pub first: String,
    pub second: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Slot {
    Literal(String),
    Set(Vec<String>),
    AnyConsonant,
    AnyVowel,
    VowelWithStress(u8),
    Wildcard,
}

fn literal_matches(symbol: &str, label: &str, class: &PhoneClass) -> bool {
    if symbol == label {
        return true;
    }
    // A bare vowel base matches the vowel at any stress.
    let has_digit = symbol.ends_with(|c: char| c.is_ascii_digit());
    !has_digit && class.base == symbol
}

impl Slot {
    pub fn matches(&self, label: &str, class: &PhoneClass) -> bool {
        match self {
            Slot::Literal(s) => literal_matches(s, label, class),
            Slot::Set(items) => items.iter().any(|s| literal_matches(s, label, class)),
            Slot::AnyConsonant => class.kind == PhoneKind::Consonant,
            Slot::AnyVowel => class.kind == PhoneKind::Vowel,
            Slot::VowelWithStress(d) => class.kind == PhoneKind::Vowel && class.stress.digit() == Some(*d),
            Slot::Wildcard => true,
        }
    }

    pub fn literals(&self) -> &[String] {
        match self {
            Slot::Literal(s) => std::slice::from_ref(s),
            Slot::Set(items) => items,
            _ => &[],
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Literal(s) => f.write_str(s),
            Slot::Set(items) => write!(f, "{{{}}}", items.join(",")),
            Slot::AnyConsonant => f.write_str("C"),
            Slot::AnyVowel => f.write_str("V"),
            Slot::VowelWithStress(d) => write!(f, "V{d}"),
            Slot::Wildcard => f.write_str("X"),
        }
    }
}

/// A parsed stimulus pattern with exactly one target slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompiledPattern {
    slots: Vec<Slot>,
    anchored: bool,
    target: usize,
}

impl CompiledPattern {
    pub fn new(slots: Vec<Slot>, anchored: bool, target: usize) -> Result<Self, PatternError> {
        let pattern = Self {
            slots,
            anchored,
            target,
        };
        let err = |message: &str| PatternError::Syntax {
            text: pattern.to_string(),
            position: 0,
            message: message.to_string(),
        };
        if pattern.slots.is_empty() {
            return Err(err("pattern has no slots"));
        }
        if pattern.target >= pattern.slots.len() {
            return Err(err("target index out of range"));
        }
        if pattern
            .slots
            .iter()
            .any(|s| matches!(s, Slot::Set(items) if items.is_empty()))
        {
            return Err(err("empty set"));
        }
        Ok(pattern)
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn anchored_at_word_start(&self) -> bool {
        self.anchored
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

impl fmt::Display for CompiledPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.anchored {
            f.write_str("#")?;
        }
        for (i, slot) in self.slots.iter().enumerate() {
            if i > 0 || self.anchored {
                f.write_str(" ")?;
            }
            if i == self.target {
                write!(f, "({slot})")?;
            } else {
                write!(f, "{slot}")?;
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for CompiledPattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        compile(s)
    }
}

struct Parser<'a> {
    text: &'a str,
    chars: Vec<char>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: impl Into<String>) -> PatternError {
        PatternError::Syntax {
            text: self.text.to_string(),
            position: self.pos,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn word(&mut self) -> String {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric()) {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn literal(&mut self) -> Result<String, PatternError> {
        let start = self.pos;
        let w = self.word();
        if !is_literal(&w) || is_reserved(&w) {
            self.pos = start;
            return Err(self.err(format!("'{w}' is not a phone literal")));
        }
        Ok(w)
    }

    fn atom(&mut self) -> Result<Slot, PatternError> {
        match self.peek() {
            Some('{') => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    items.push(self.literal()?);
                    self.skip_ws();
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some('}') => {
                            self.pos += 1;
                            break;
                        }
                        _ => return Err(self.err("expected ',' or '}' in set")),
                    }
                }
                Ok(Slot::Set(items))
            }
            Some(c) if c.is_ascii_alphanumeric() => {
                let start = self.pos;
                let w = self.word();
                match w.as_str() {
                    "C" => Ok(Slot::AnyConsonant),
                    "V" => Ok(Slot::AnyVowel),
                    "V0" => Ok(Slot::VowelWithStress(0)),
                    "V1" => Ok(Slot::VowelWithStress(1)),
                    "V2" => Ok(Slot::VowelWithStress(2)),
                    "X" => Ok(Slot::Wildcard),
                    _ if is_literal(&w) => Ok(Slot::Literal(w)),
                    _ => {
                        self.pos = start;
                        Err(self.err(format!("unknown slot token '{w}'")))
                    }
                }
            }
            Some(c) => Err(self.err(format!("unexpected character '{c}'"))),
            None => Err(self.err("unexpected end of pattern")),
        }
    }
}

fn is_reserved(w: &str) -> bool {
    matches!(w, "C" | "V" | "V0" | "V1" | "V2" | "X")
}

fn is_literal(w: &str) -> bool {
    let body = w.strip_suffix(['0', '1', '2']).unwrap_or(w);
    !body.is_empty() && body.chars().all(|c| c.is_ascii_uppercase())
}

/// Parses pattern text into a [`CompiledPattern`].
pub fn compile(text: &str) -> Result<CompiledPattern, PatternError> {
    let mut p = Parser {
        text,
        chars: text.chars().collect(),
        pos: 0,
    };
    p.skip_ws();
    let anchored = if p.peek() == Some('#') {
        p.pos += 1;
        true
    } else {
        false
    };
    let mut slots = Vec::new();
    let mut target = None;
    loop {
        let before = p.pos;
        p.skip_ws();
        let Some(c) = p.peek() else { break };
        if !slots.is_empty() && p.pos == before {
            return Err(p.err("slots must be separated by whitespace"));
        }
        if c == '(' {
            if target.is_some() {
                return Err(p.err("more than one target slot"));
            }
            p.pos += 1;
            p.skip_ws();
            let slot = p.atom()?;
            p.skip_ws();
            if p.peek() != Some(')') {
                return Err(p.err("expected ')'"));
            }
            p.pos += 1;
            target = Some(slots.len());
            slots.push(slot);
        } else {
            slots.push(p.atom()?);
        }
    }
    if slots.is_empty() {
        return Err(p.err("pattern has no slots"));
    }
    let Some(target) = target else {
        return Err(p.err("no target slot; wrap exactly one slot in '( )'"));
    };
    CompiledPattern::new(slots, anchored, target)
}
