//! Stimulus patterns, contrast specifications, and corpus matching.

mod contrast;
mod matcher;
mod pattern;

pub use contrast::{
    builtin_specs, consonant_vowel, controls, distant_after, distant_before, phonemic, phonetic, stress,
    ConfoundPolicy, ContrastKind, ContrastLabel, ContrastSpec, Place,
};
pub use matcher::{check_literals, match_contrast, matches_at, TargetToken};
pub use pattern::{compile, Ambiguity, CompiledPattern, PatternError, Slot};
