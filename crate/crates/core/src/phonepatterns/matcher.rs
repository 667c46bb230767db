use std::collections::BTreeMap;

use rayon::prelude::*;

use super::contrast::{ContrastLabel, ContrastSpec};
use super::pattern::{Ambiguity, CompiledPattern, PatternError};
use crate::corpus::{classify_label, Corpus, Inventory, PhoneClass, PhoneToken, Utterance};

/// A phone selected by a contrast, with the class it was assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetToken {
    pub token: PhoneToken,
    /// Position of the token within its utterance.
    pub position: usize,
    pub label: ContrastLabel,
    pub contrast: String,
}

impl TargetToken {
    /// Key identifying the underlying phone independently of the contrast.
    pub fn key(&self) -> (String, usize) {
        (self.token.utterance_id.clone(), self.position)
    }
}

/// Rejects literals that do not name an ARPAbet phone.
pub fn check_literals(spec: &ContrastSpec) -> Result<(), PatternError> {
    for (_, pattern) in spec.patterns() {
        for literal in pattern.slots().iter().flat_map(|s| s.literals()) {
            if classify_label(literal).is_err() {
                return Err(PatternError::UnclassifiableLiteral {
                    pattern: pattern.to_string(),
                    literal: literal.clone(),
                });
            }
        }
    }
    Ok(())
}

fn classes<'a>(u: &Utterance, inventory: &'a Inventory) -> Result<Vec<&'a PhoneClass>, PatternError> {
    u.tokens
        .iter()
        .map(|t| {
            inventory
                .get(&t.label)
                .ok_or_else(|| PatternError::UnknownLabel(t.label.clone()))
        })
        .collect()
}

/// Whether `pattern` matches the utterance with its first slot at `start`.
pub fn matches_at(pattern: &CompiledPattern, u: &Utterance, classes: &[&PhoneClass], start: usize) -> bool {
    if pattern.anchored_at_word_start() && (start != 0 || u.tokens[0].index_in_word != 0) {
        return false;
    }
    if start + pattern.len() > u.tokens.len() {
        return false;
    }
    pattern
        .slots()
        .iter()
        .enumerate()
        .all(|(k, slot)| slot.matches(&u.tokens[start + k].label, classes[start + k]))
}

fn match_utterance(
    u: &Utterance,
    inventory: &Inventory,
    spec: &ContrastSpec,
) -> Result<Vec<TargetToken>, PatternError> {
    let classes = classes(u, inventory)?;
    let mut hits: BTreeMap<usize, ContrastLabel> = BTreeMap::new();
    for (label, pattern) in spec.patterns() {
        let last_start = if pattern.anchored_at_word_start() {
            0
        } else {
            u.tokens.len().saturating_sub(pattern.len())
        };
        for start in 0..=last_start {
            if !matches_at(pattern, u, &classes, start) {
                continue;
            }
            let pos = start + pattern.target_index();
            match hits.get(&pos) {
                Some(&prev) if prev != label => {
                    return Err(PatternError::Ambiguous(Box::new(Ambiguity {
                        contrast: spec.id(),
                        utterance: u.id.clone(),
                        position: pos,
                        label: u.tokens[pos].label.clone(),
                        first: prev.to_string(),
                        second: label.to_string(),
                    })));
                }
                _ => {
                    hits.insert(pos, label);
                }
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|(position, label)| TargetToken {
            token: u.tokens[position].clone(),
            position,
            label,
            contrast: spec.id(),
        })
        .collect())
}

/// Finds every target phone selected by `spec`, ordered by
/// (utterance_id, start time).
pub fn match_contrast(
    corpus: &Corpus,
    inventory: &Inventory,
    spec: &ContrastSpec,
) -> Result<Vec<TargetToken>, PatternError> {
    check_literals(spec)?;
    let per_utt = corpus
        .utterances()
        .par_iter()
        .map(|u| match_utterance(u, inventory, spec))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out: Vec<TargetToken> = per_utt.into_iter().flatten().collect();
    out.sort_by(|a, b| {
        a.token
            .utterance_id
            .cmp(&b.token.utterance_id)
            .then(a.token.start_s.total_cmp(&b.token.start_s))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_inventory, Utterance};
    use crate::phonepatterns::compile;
    use crate::phonepatterns::contrast::{phonemic, ConfoundPolicy, Place};

    fn word(id: &str, labels: &[&str]) -> Utterance {
        let tokens = labels
            .iter()
            .enumerate()
            .map(|(i, l)| PhoneToken {
                utterance_id: id.into(),
                word_form: id.into(),
                is_pseudoword: false,
                index_in_word: i,
                label: l.to_string(),
                start_s: i as f64 * 0.1,
                end_s: (i + 1) as f64 * 0.1,
            })
            .collect();
        Utterance {
            id: id.into(),
            word_form: id.into(),
            is_pseudoword: false,
            tokens,
        }
    }

    fn corpus(words: Vec<Utterance>) -> (Corpus, Inventory) {
        let c = Corpus::from_utterances(words).unwrap();
        let inv = build_inventory(&c).unwrap();
        (c, inv)
    }

    #[test]
    fn speak_and_beak() {
        let (c, inv) = corpus(vec![
            word("speak", &["S", "P", "IY1", "K"]),
            word("beak", &["B", "IY1", "K"]),
            word("lapse", &["L", "AE1", "P", "S"]),
        ]);
        let spec = phonemic(Place::Labial, ConfoundPolicy::default());
        let hits = match_contrast(&c, &inv, &spec).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].token.utterance_id, "beak");
        assert_eq!(hits[0].token.label, "B");
        assert_eq!(hits[0].label, ContrastLabel::Group2);
        assert_eq!(hits[1].token.utterance_id, "speak");
        assert_eq!(hits[1].token.label, "P");
        assert_eq!(hits[1].label, ContrastLabel::Group1);
    }

    #[test]
    fn anchor_blocks_medial_matches() {
        let (c, inv) = corpus(vec![word("lapse", &["L", "AE1", "P", "S"])]);
        let spec = crate::phonepatterns::ContrastSpec::new(
            "t",
            crate::phonepatterns::ContrastKind::PositiveControl,
            None,
            vec![compile("# S (P) V").unwrap()],
            vec![compile("(B)").unwrap()],
            None,
        )
        .unwrap();
        assert!(match_contrast(&c, &inv, &spec).unwrap().is_empty());
    }

    #[test]
    fn overlapping_groups_are_ambiguous() {
        let (c, inv) = corpus(vec![word("pat", &["P", "AE1", "T"])]);
        let spec = crate::phonepatterns::ContrastSpec::parse(
            "bad",
            crate::phonepatterns::ContrastKind::PositiveControl,
            None,
            &["(C)"],
            &["# (P) V"],
            None,
        )
        .unwrap();
        match match_contrast(&c, &inv, &spec) {
            Err(PatternError::Ambiguous(a)) => {
                assert_eq!(a.utterance, "pat");
                assert_eq!(a.position, 0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stressed_literal_needs_vowel_base() {
        let (c, inv) = corpus(vec![word("pat", &["P", "AE1", "T"])]);
        let spec = crate::phonepatterns::ContrastSpec::parse(
            "bad",
            crate::phonepatterns::ContrastKind::PositiveControl,
            None,
            &["(P1)"],
            &["(V)"],
            None,
        )
        .unwrap();
        assert!(matches!(
            match_contrast(&c, &inv, &spec),
            Err(PatternError::UnclassifiableLiteral { .. })
        ));
    }

    #[test]
    fn vowel_slots_and_stress() {
        let (c, inv) = corpus(vec![word("about", &["AH0", "B", "AW1", "T"]), word("x", &["AA2", "T"])]);
        let stress = crate::phonepatterns::contrast::stress();
        let hits = match_contrast(&c, &inv, &stress).unwrap();
        let got: Vec<_> = hits.iter().map(|h| (h.token.label.as_str(), h.label)).collect();
        assert_eq!(got, [("AH0", ContrastLabel::Group2), ("AW1", ContrastLabel::Group1)]);
    }
}
