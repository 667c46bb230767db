use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pattern::{compile, CompiledPattern, PatternError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastKind {
    Phonemic,
    Phonetic,
    PositiveControl,
    NegativeControl,
}

impl ContrastKind {
    pub fn has_confound(self) -> bool {
        matches!(self, ContrastKind::Phonemic | ContrastKind::Phonetic)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContrastKind::Phonemic => "phonemic",
            ContrastKind::Phonetic => "phonetic",
            ContrastKind::PositiveControl => "positive_control",
            ContrastKind::NegativeControl => "negative_control",
        }
    }
}

impl fmt::Display for ContrastKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContrastKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "phonemic" => Ok(ContrastKind::Phonemic),
            "phonetic" => Ok(ContrastKind::Phonetic),
            "positive_control" => Ok(ContrastKind::PositiveControl),
            "negative_control" => Ok(ContrastKind::NegativeControl),
            other => Err(format!("unknown contrast kind '{other}'")),
        }
    }
}

/// Class assigned to a matched target phone. The discriminant is the
/// class index used by probes and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContrastLabel {
    Group1 = 0,
    Group2 = 1,
    Confound = 2,
}

impl ContrastLabel {
    pub const ALL: [ContrastLabel; 3] = [Self::Group1, Self::Group2, Self::Confound];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContrastLabel::Group1 => "group1",
            ContrastLabel::Group2 => "group2",
            ContrastLabel::Confound => "confound",
        }
    }
}

impl fmt::Display for ContrastLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Place of articulation of the stop triple a contrast targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Place {
    Labial,
    Alveolar,
    Velar,
}

impl Place {
    pub const ALL: [Place; 3] = [Place::Labial, Place::Alveolar, Place::Velar];

    pub fn voiceless_stop(self) -> &'static str {
        match self {
            Place::Labial => "P",
            Place::Alveolar => "T",
            Place::Velar => "K",
        }
    }

    pub fn voiced_stop(self) -> &'static str {
        match self {
            Place::Labial => "B",
            Place::Alveolar => "D",
            Place::Velar => "G",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Place::Labial => "labial",
            Place::Alveolar => "alveolar",
            Place::Velar => "velar",
        }
    }
}

impl fmt::Display for Place {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Place {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "labial" => Ok(Place::Labial),
            "alveolar" => Ok(Place::Alveolar),
            "velar" => Ok(Place::Velar),
            other => Err(format!("unknown place of articulation '{other}'")),
        }
    }
}

/// How the post-[s] confound set is derived for alveolar and velar rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfoundPolicy {
    /// The labial set {K,T,L,M,N,W} with the row's own stop removed.
    #[default]
    TableMinusOwnStop,
    /// The two other voiceless stops plus {L,M,N,W}.
    OtherStops,
}

const TABLE_CONFOUND: [&str; 6] = ["K", "T", "L", "M", "N", "W"];

impl ConfoundPolicy {
    pub fn confound_set(self, place: Place) -> Vec<&'static str> {
        let own = place.voiceless_stop();
        match self {
            ConfoundPolicy::TableMinusOwnStop => TABLE_CONFOUND.iter().copied().filter(|s| *s != own).collect(),
            ConfoundPolicy::OtherStops => ["K", "T", "P"]
                .into_iter()
                .filter(|s| *s != own)
                .chain(["L", "M", "N", "W"])
                .collect(),
        }
    }
}

/// A named grouping of patterns into probe classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastSpec {
    name: String,
    kind: ContrastKind,
    place: Option<Place>,
    group1: Vec<CompiledPattern>,
    group2: Vec<CompiledPattern>,
    confound: Option<Vec<CompiledPattern>>,
}

impl ContrastSpec {
    pub fn new(
        name: impl Into<String>,
        kind: ContrastKind,
        place: Option<Place>,
        group1: Vec<CompiledPattern>,
        group2: Vec<CompiledPattern>,
        confound: Option<Vec<CompiledPattern>>,
    ) -> Result<Self, PatternError> {
        let name = name.into();
        let invalid = |message: &str| PatternError::InvalidSpec {
            name: name.clone(),
            message: message.to_string(),
        };
        if group1.is_empty() || group2.is_empty() {
            return Err(invalid("group1 and group2 must be nonempty"));
        }
        match (&confound, kind.has_confound()) {
            (Some(c), true) if c.is_empty() => return Err(invalid("confound group is empty")),
            (Some(_), false) => return Err(invalid("control contrasts take no confound group")),
            (None, true) => return Err(invalid("phonemic/phonetic contrasts need a confound group")),
            _ => {}
        }
        Ok(Self {
            name,
            kind,
            place,
            group1,
            group2,
            confound,
        })
    }

    /// Builds a spec from pattern text.
    pub fn parse(
        name: impl Into<String>,
        kind: ContrastKind,
        place: Option<Place>,
        group1: &[&str],
        group2: &[&str],
        confound: Option<&[&str]>,
    ) -> Result<Self, PatternError> {
        let all = |texts: &[&str]| texts.iter().map(|t| compile(t)).collect::<Result<Vec<_>, _>>();
        Self::new(
            name,
            kind,
            place,
            all(group1)?,
            all(group2)?,
            confound.map(all).transpose()?,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Name qualified by place, e.g. `phonemic/labial`.
    pub fn id(&self) -> String {
        match self.place {
            Some(p) => format!("{}/{p}", self.name),
            None => self.name.clone(),
        }
    }

    pub fn kind(&self) -> ContrastKind {
        self.kind
    }

    pub fn place(&self) -> Option<Place> {
        self.place
    }

    pub fn n_classes(&self) -> usize {
        if self.confound.is_some() {
            3
        } else {
            2
        }
    }

    pub fn group(&self, label: ContrastLabel) -> Option<&[CompiledPattern]> {
        match label {
            ContrastLabel::Group1 => Some(&self.group1),
            ContrastLabel::Group2 => Some(&self.group2),
            ContrastLabel::Confound => self.confound.as_deref(),
        }
    }

    /// All (label, pattern) pairs in group order.
    pub fn patterns(&self) -> impl Iterator<Item = (ContrastLabel, &CompiledPattern)> {
        ContrastLabel::ALL
            .into_iter()
            .flat_map(move |l| self.group(l).unwrap_or_default().iter().map(move |p| (l, p)))
    }
}

/// Phonemic stop contrast for one place: {#pV, #spV} vs {#bV} vs confound.
pub fn phonemic(place: Place, policy: ConfoundPolicy) -> ContrastSpec {
    let (p, b) = (place.voiceless_stop(), place.voiced_stop());
    let aspirated = format!("# ({p}) V");
    let after_s = format!("# S ({p}) V");
    let voiced = format!("# ({b}) V");
    let confound = confound_pattern(place, policy);
    ContrastSpec::parse(
        "phonemic",
        ContrastKind::Phonemic,
        Some(place),
        &[&aspirated, &after_s],
        &[&voiced],
        Some(&[&confound]),
    )
    .expect("built-in phonemic patterns are valid")
}

/// Phonetic stop contrast for one place: {#pʰV} vs {#spV, #bV} vs confound.
pub fn phonetic(place: Place, policy: ConfoundPolicy) -> ContrastSpec {
    let (p, b) = (place.voiceless_stop(), place.voiced_stop());
    let aspirated = format!("# ({p}) V");
    let after_s = format!("# S ({p}) V");
    let voiced = format!("# ({b}) V");
    let confound = confound_pattern(place, policy);
    ContrastSpec::parse(
        "phonetic",
        ContrastKind::Phonetic,
        Some(place),
        &[&aspirated],
        &[&after_s, &voiced],
        Some(&[&confound]),
    )
    .expect("built-in phonetic patterns are valid")
}

fn confound_pattern(place: Place, policy: ConfoundPolicy) -> String {
    format!("# S ({{{}}}) V", policy.confound_set(place).join(","))
}

pub fn consonant_vowel() -> ContrastSpec {
    ContrastSpec::parse(
        "consonant_vowel",
        ContrastKind::PositiveControl,
        None,
        &["(C)"],
        &["(V)"],
        None,
    )
    .expect("valid")
}

pub fn stress() -> ContrastSpec {
    ContrastSpec::parse(
        "stress",
        ContrastKind::PositiveControl,
        None,
        &["(V1)"],
        &["(V0)"],
        None,
    )
    .expect("valid")
}

pub fn distant_before() -> ContrastSpec {
    ContrastSpec::parse(
        "distant_before",
        ContrastKind::NegativeControl,
        None,
        &["C X X X (V)"],
        &["V X X X (V)"],
        None,
    )
    .expect("valid")
}

pub fn distant_after() -> ContrastSpec {
    ContrastSpec::parse(
        "distant_after",
        ContrastKind::NegativeControl,
        None,
        &["(V) X X X C"],
        &["(V) X X X V"],
        None,
    )
    .expect("valid")
}

/// The two positive and two negative control contrasts, in (P1, P2, N1, N2) order.
pub fn controls() -> [ContrastSpec; 4] {
    [consonant_vowel(), stress(), distant_before(), distant_after()]
}

/// Every built-in contrast: phonemic and phonetic at each requested place,
/// followed by the four controls.
pub fn builtin_specs(places: &[Place], policy: ConfoundPolicy) -> Vec<ContrastSpec> {
    let mut specs = Vec::new();
    for &place in places {
        specs.push(phonemic(place, policy));
        specs.push(phonetic(place, policy));
    }
    specs.extend(controls());
    specs
}
