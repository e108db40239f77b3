//! Factor and label spaces.
//!
//! Two schema versions exist. `V1` is the original 20-factor schema used to
//! prompt for notes; `V2` drops `older_age` and folds `childhood_abuse` into
//! `abuse`. Class indices are stable: the sentinel is always index 0, then the
//! POSITIVE labels in factor order, then the NEGATIVE labels in the same order.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const NO_ANNOTATION: &str = "NO_ANNOTATION";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FactorDomain {
    Patient,
    Illness,
    Treatment,
}

impl FactorDomain {
    pub const ALL: [FactorDomain; 3] = [FactorDomain::Patient, FactorDomain::Illness, FactorDomain::Treatment];

    pub fn as_str(self) -> &'static str {
        match self {
            FactorDomain::Patient => "PATIENT",
            FactorDomain::Illness => "ILLNESS",
            FactorDomain::Treatment => "TREATMENT",
        }
    }

    fn from_token(s: &str) -> Option<Self> {
        match s {
            "PATIENT" => Some(FactorDomain::Patient),
            "ILLNESS" => Some(FactorDomain::Illness),
            "TREATMENT" => Some(FactorDomain::Treatment),
            _ => None,
        }
    }
}

impl fmt::Display for FactorDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

macro_rules! factors {
    ($($variant:ident => $name:literal, $domain:ident;)*) => {
        /// A prognostic factor. Declaration order is the canonical class order.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Factor {
            $($variant,)*
        }

        impl Factor {
            pub const ALL: [Factor; 20] = [$(Factor::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(Factor::$variant => $name,)*
                }
            }

            pub fn domain(self) -> FactorDomain {
                match self {
                    $(Factor::$variant => FactorDomain::$domain,)*
                }
            }

            pub fn from_name(name: &str) -> Option<Factor> {
                match name {
                    $($name => Some(Factor::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

// Ordered as the POSITIVE rows of the span-count table; domains follow the
// grouping used in the generation prompt.
factors! {
    FamilyMemberMentalDisorder => "family_member_mental_disorder", Patient;
    ChildhoodAbuse => "childhood_abuse", Patient;
    NonAdherence => "non_adherence", Treatment;
    SideEffects => "side_effects", Treatment;
    RecurrentEpisodes => "recurrent_episodes", Illness;
    MultipleAntidepressants => "multiple_antidepressants", Treatment;
    MultiplePsychotherapies => "multiple_psychotherapies", Treatment;
    PhysicalComorbidity => "physical_comorbidity", Illness;
    LongIllnessDuration => "long_illness_duration", Illness;
    SevereIllness => "severe_illness", Illness;
    Anhedonia => "anhedonia", Illness;
    Suicidality => "suicidality", Illness;
    AntidepressantDosageIncrease => "antidepressant_dosage_increase", Treatment;
    MultipleHospitalizations => "multiple_hospitalizations", Illness;
    OlderAge => "older_age", Patient;
    MentalComorbidity => "mental_comorbidity", Illness;
    Improvement => "improvement", Illness;
    SubstanceAbuse => "substance_abuse", Illness;
    IllnessEarlyOnset => "illness_early_onset", Illness;
    Abuse => "abuse", Patient;
}

impl Factor {
    /// Words of the factor name, used for explicit-mention checks and the
    /// default cross-label keyword map.
    pub fn words(self) -> impl Iterator<Item = &'static str> {
        self.name().split('_')
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "POSITIVE",
            Polarity::Negative => "NEGATIVE",
        }
    }

    pub fn flip(self) -> Polarity {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }

    fn from_token(s: &str) -> Option<Self> {
        match s {
            "POSITIVE" => Some(Polarity::Positive),
            "NEGATIVE" => Some(Polarity::Negative),
            _ => None,
        }
    }
}

/// A classification target: a polarised factor or the no-annotation sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NoAnnotation,
    Factor { factor: Factor, polarity: Polarity },
}

impl Label {
    pub fn new(factor: Factor, polarity: Polarity) -> Label {
        Label::Factor { factor, polarity }
    }

    pub fn is_sentinel(self) -> bool {
        matches!(self, Label::NoAnnotation)
    }

    pub fn factor(self) -> Option<Factor> {
        match self {
            Label::NoAnnotation => None,
            Label::Factor { factor, .. } => Some(factor),
        }
    }

    pub fn polarity(self) -> Option<Polarity> {
        match self {
            Label::NoAnnotation => None,
            Label::Factor { polarity, .. } => Some(polarity),
        }
    }

    /// Inline token form, e.g. `[PATIENT_FACTOR(POSITIVE):older_age]`.
    /// The sentinel has no token form.
    pub fn to_token(self) -> Option<String> {
        self.token_body().map(|body| format!("[{body}]"))
    }

    /// Token form without the surrounding brackets.
    pub fn token_body(self) -> Option<String> {
        match self {
            Label::NoAnnotation => None,
            Label::Factor { factor, polarity } => Some(format!(
                "{}_FACTOR({}):{}",
                factor.domain(),
                polarity.as_str(),
                factor.name()
            )),
        }
    }

    /// Human-readable form used in report tables ("suicidality POSITIVE").
    pub fn display_name(self) -> String {
        match self {
            Label::NoAnnotation => "NO ANNOTATION".to_string(),
            Label::Factor { factor, polarity } => {
                format!("{} {}", factor.name().replace('_', " "), polarity.as_str())
            }
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::NoAnnotation => f.write_str(NO_ANNOTATION),
            Label::Factor { factor, polarity } => write!(f, "{}_{}", factor.name(), polarity.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for Label {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == NO_ANNOTATION {
            return Ok(Label::NoAnnotation);
        }
        let (name, pol) = s.rsplit_once('_').ok_or_else(|| UnknownLabel(s.to_string()))?;
        let polarity = Polarity::from_token(pol).ok_or_else(|| UnknownLabel(s.to_string()))?;
        let factor = Factor::from_name(name).ok_or_else(|| UnknownLabel(s.to_string()))?;
        Ok(Label::new(factor, polarity))
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A label with polarity stripped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FactorLabel {
    NoAnnotation,
    Factor(Factor),
}

impl fmt::Display for FactorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactorLabel::NoAnnotation => f.write_str(NO_ANNOTATION),
            FactorLabel::Factor(factor) => f.write_str(factor.name()),
        }
    }
}

impl FactorLabel {
    pub fn display_name(self) -> String {
        match self {
            FactorLabel::NoAnnotation => "NO ANNOTATION".to_string(),
            FactorLabel::Factor(factor) => factor.name().replace('_', " "),
        }
    }
}

pub fn collapse_polarity(label: Label) -> FactorLabel {
    match label {
        Label::NoAnnotation => FactorLabel::NoAnnotation,
        Label::Factor { factor, .. } => FactorLabel::Factor(factor),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SchemaVersion {
    #[default]
    V1,
    V2,
}

impl SchemaVersion {
    pub fn contains(self, factor: Factor) -> bool {
        match self {
            SchemaVersion::V1 => true,
            SchemaVersion::V2 => !matches!(factor, Factor::OlderAge | Factor::ChildhoodAbuse),
        }
    }

    pub fn factors(self) -> Vec<Factor> {
        Factor::ALL.into_iter().filter(|f| self.contains(*f)).collect()
    }
}

impl fmt::Display for SchemaVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaVersion::V1 => f.write_str("v1"),
            SchemaVersion::V2 => f.write_str("v2"),
        }
    }
}

impl FromStr for SchemaVersion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "v1" => Ok(SchemaVersion::V1),
            "v2" => Ok(SchemaVersion::V2),
            other => Err(format!("unknown schema version `{other}`")),
        }
    }
}

/// Ordered label space: sentinel, POSITIVE labels, NEGATIVE labels.
pub fn label_space(version: SchemaVersion) -> Vec<Label> {
    let factors = version.factors();
    let mut labels = Vec::with_capacity(1 + 2 * factors.len());
    labels.push(Label::NoAnnotation);
    for polarity in [Polarity::Positive, Polarity::Negative] {
        labels.extend(factors.iter().map(|&f| Label::new(f, polarity)));
    }
    labels
}

/// Maps a v1 label onto the v2 space. `None` means the label is dropped.
pub fn migrate_label(label: Label, from: SchemaVersion, to: SchemaVersion) -> Option<Label> {
    match (from, to, label) {
        (SchemaVersion::V1, SchemaVersion::V2, Label::Factor { factor: Factor::OlderAge, .. }) => None,
        (SchemaVersion::V1, SchemaVersion::V2, Label::Factor { factor: Factor::ChildhoodAbuse, polarity }) => {
            Some(Label::new(Factor::Abuse, polarity))
        }
        _ => Some(label),
    }
}

/// Why a bracketed token was not accepted as a label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    /// Token does not follow `[DOMAIN_FACTOR(POLARITY):factor]`.
    Malformed,
    UnknownDomain,
    UnknownPolarity,
    /// Factor name not in the schema: a hallucinated factor.
    UnknownFactor,
    /// Factor exists but is filed under a different domain.
    DomainMismatch,
    /// Token has no text in front of it to annotate.
    EmptySpan,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rejection::Malformed => "malformed",
            Rejection::UnknownDomain => "unknown domain",
            Rejection::UnknownPolarity => "unknown polarity",
            Rejection::UnknownFactor => "unknown factor",
            Rejection::DomainMismatch => "domain mismatch",
            Rejection::EmptySpan => "empty span",
        };
        f.write_str(s)
    }
}

/// Parses a single bracketed label token against the v1 grammar.
///
/// ```
/// use factorspan_core::schema::{parse_label_token, Factor, Label, Polarity};
/// let l = parse_label_token("[PATIENT_FACTOR(POSITIVE):older_age]").unwrap();
/// assert_eq!(l, Label::new(Factor::OlderAge, Polarity::Positive));
/// ```
pub fn parse_label_token(text: &str) -> Result<Label, Rejection> {
    let inner = text
        .trim()
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or(Rejection::Malformed)?;
    parse_label_body(inner)
}

/// Parses the body of a label token (no brackets).
pub fn parse_label_body(body: &str) -> Result<Label, Rejection> {
    let body = body.trim();
    let (head, factor_name) = body.split_once(':').ok_or(Rejection::Malformed)?;
    let (domain_part, rest) = head.split_once('(').ok_or(Rejection::Malformed)?;
    let polarity_part = rest.strip_suffix(')').ok_or(Rejection::Malformed)?;
    let domain_name = domain_part.strip_suffix("_FACTOR").ok_or(Rejection::Malformed)?;
    if factor_name.is_empty() || factor_name.contains(|c: char| !(c.is_ascii_lowercase() || c == '_')) {
        return Err(Rejection::Malformed);
    }
    let domain = FactorDomain::from_token(domain_name).ok_or(Rejection::UnknownDomain)?;
    let polarity = Polarity::from_token(polarity_part).ok_or(Rejection::UnknownPolarity)?;
    let factor = Factor::from_name(factor_name).ok_or(Rejection::UnknownFactor)?;
    if factor.domain() != domain {
        return Err(Rejection::DomainMismatch);
    }
    Ok(Label::new(factor, polarity))
}

/// Label space with an index for class lookups.
#[derive(Debug, Clone)]
pub struct Schema {
    version: SchemaVersion,
    labels: Vec<Label>,
    index: HashMap<Label, usize>,
}

impl Schema {
    pub fn new(version: SchemaVersion) -> Schema {
        let labels = label_space(version);
        let index = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        Schema { version, labels, index }
    }

    pub fn version(&self) -> SchemaVersion {
        self.version
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: Label) -> Option<usize> {
        self.index.get(&label).copied()
    }

    pub fn label(&self, index: usize) -> Label {
        self.labels[index]
    }

    pub fn factors(&self) -> Vec<Factor> {
        self.version.factors()
    }

    /// Versioned JSON description stored alongside corpora.
    pub fn document(&self) -> SchemaDocument {
        SchemaDocument {
            schema_version: self.version,
            factors: self
                .factors()
                .into_iter()
                .map(|f| FactorEntry { name: f.name().to_string(), domain: f.domain() })
                .collect(),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorEntry {
    pub name: String,
    pub domain: FactorDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDocument {
    pub schema_version: SchemaVersion,
    pub factors: Vec<FactorEntry>,
    pub labels: Vec<Label>,
}
