//! Domain types for intent memories, windows, and persona sets, plus the
//! candidate parser and validators that turn raw model text into clean,
//! evidence-grounded persona sets.
//!
//! The flow is: a model generation (`raw_text`) is parsed into a
//! [`PersonaSet`] by [`parse_candidate`], then checked against the
//! originating [`Window`] by [`validate_persona_set`] (evidence ids must
//! refer to real memories). The lenient policy salvages candidates by
//! dropping unknown evidence ids; [`lenient_clean`] materializes that
//! salvage as a new set.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// A calendar date, ordered chronologically.
///
/// Hand-rolled rather than pulled from a date crate: the pipeline only needs
/// parsing, formatting, and ordering of `YYYY-MM-DD` strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Day {
    year: i32,
    month: u8,
    day: u8,
}

impl Day {
    /// Construct a date, rejecting out-of-range months and days (leap years
    /// handled).
    pub fn new(year: i32, month: u8, day: u8) -> Result<Self, DomainError> {
        if !(1..=12).contains(&month) || day == 0 || day > days_in_month(year, month) {
            return Err(DomainError::InvalidDate {
                text: format!("{year:04}-{month:02}-{day:02}"),
            });
        }
        Ok(Day { year, month, day })
    }

    /// Parse an ISO `YYYY-MM-DD` string.
    pub fn parse(s: &str) -> Result<Self, DomainError> {
        let bad = || DomainError::InvalidDate { text: s.to_owned() };
        let mut parts = s.splitn(3, '-');
        let year: i32 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let month: u8 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let day: u8 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        Day::new(year, month, day).map_err(|_| bad())
    }

    pub fn year(&self) -> i32 {
        self.year
    }
    pub fn month(&self) -> u8 {
        self.month
    }
    pub fn day(&self) -> u8 {
        self.day
    }
}

fn days_in_month(year: i32, month: u8) -> u8 {
    let leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if leap => 29,
        2 => 28,
        _ => 0,
    }
}

impl core::fmt::Display for Day {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{:04}-{:02}-{:02}", self.year, self.month, self.day)
    }
}

impl core::str::FromStr for Day {
    type Err = DomainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Day::parse(s)
    }
}

impl Serialize for Day {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Day {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct DayVisitor;
        impl serde::de::Visitor<'_> for DayVisitor {
            type Value = Day;
            fn expecting(&self, f: &mut core::fmt::Formatter) -> core::fmt::Result {
                f.write_str("a date string in YYYY-MM-DD form")
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Day, E> {
                Day::parse(v).map_err(E::custom)
            }
        }
        deserializer.deserialize_str(DayVisitor)
    }
}

/// One summarized exploration intent from a day's logs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentMemory {
    /// Unique within a window.
    pub id: u32,
    pub day: Day,
    /// The intent phrase itself.
    pub label: String,
    pub description: String,
}

/// A user's chronologically ordered intent memories over a span of days.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub user_id: String,
    /// Distinct days covered, ascending.
    pub days: Vec<Day>,
    /// Sorted by `(day, id)`.
    pub memories: Vec<IntentMemory>,
}

impl Window {
    /// Build a window from memories in any order. Memories are sorted by
    /// `(day, id)` and the day list is derived; duplicate memory ids and
    /// empty labels are rejected.
    pub fn new(user_id: impl Into<String>, mut memories: Vec<IntentMemory>) -> Result<Self, DomainError> {
        let mut seen = BTreeSet::new();
        for m in &memories {
            if !seen.insert(m.id) {
                return Err(DomainError::DuplicateMemoryId { id: m.id });
            }
            if m.label.trim().is_empty() {
                return Err(DomainError::EmptyMemoryLabel { id: m.id });
            }
        }
        memories.sort_by_key(|m| (m.day, m.id));
        let mut days: Vec<Day> = memories.iter().map(|m| m.day).collect();
        days.dedup();
        Ok(Window {
            user_id: user_id.into(),
            days,
            memories,
        })
    }

    /// The set of memory ids present in this window.
    pub fn memory_ids(&self) -> BTreeSet<u32> {
        self.memories.iter().map(|m| m.id).collect()
    }

    /// Look up a memory by id.
    pub fn memory(&self, id: u32) -> Option<&IntentMemory> {
        self.memories.iter().find(|m| m.id == id)
    }
}

/// One persona: a label, K supporting descriptions, and the evidence set of
/// memory ids it abstracts.
///
/// Serializes to the induction output schema (`persona`, `description`,
/// `evidence_memory_ids`); deserialization also accepts the internal field
/// names as aliases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    #[serde(default)]
    pub persona_id: String,
    #[serde(rename = "persona", alias = "label")]
    pub label: String,
    #[serde(rename = "description", alias = "descriptions")]
    pub descriptions: Vec<String>,
    #[serde(rename = "evidence_memory_ids", alias = "evidence_ids")]
    pub evidence_ids: BTreeSet<u32>,
}

/// A parsed candidate output: the personas of one model generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaSet {
    pub personas: Vec<Persona>,
    /// Index of the generation this set came from within its sampling batch.
    #[serde(skip)]
    pub source_candidate_index: usize,
}

/// Validation issue codes. The set is closed; downstream code matches on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IssueCode {
    #[serde(rename = "MALFORMED")]
    Malformed,
    #[serde(rename = "UNKNOWN_EVIDENCE_ID")]
    UnknownEvidenceId,
    #[serde(rename = "EMPTY_PERSONA_LIST")]
    EmptyPersonaList,
    #[serde(rename = "DUPLICATE_ID")]
    DuplicateId,
}

impl core::fmt::Display for IssueCode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            IssueCode::Malformed => "MALFORMED",
            IssueCode::UnknownEvidenceId => "UNKNOWN_EVIDENCE_ID",
            IssueCode::EmptyPersonaList => "EMPTY_PERSONA_LIST",
            IssueCode::DuplicateId => "DUPLICATE_ID",
        })
    }
}

/// One recorded validation finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub code: IssueCode,
    pub message: String,
}

impl ValidationIssue {
    fn new(code: IssueCode, message: impl Into<String>) -> Self {
        ValidationIssue {
            code,
            message: message.into(),
        }
    }
}

/// Outcome of parsing and/or validating one candidate.
///
/// `errors` break validity; `warnings` record salvage actions (dropped
/// unknown ids, silently deduplicated evidence) that leave the candidate
/// usable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<ValidationIssue>,
    pub warnings: Vec<ValidationIssue>,
    pub dropped_evidence_ids: Vec<u32>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }

    /// Fold another report's findings into this one.
    pub fn merge(&mut self, other: ValidationReport) {
        self.errors.extend(other.errors);
        self.warnings.extend(other.warnings);
        self.dropped_evidence_ids.extend(other.dropped_evidence_ids);
    }
}

/// Why a candidate failed to parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub code: IssueCode,
    pub message: String,
}

/// A raw model generation together with its parse result and validation
/// findings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateOutput {
    pub raw_text: String,
    pub parse_result: Result<PersonaSet, ParseFailure>,
    pub validation: ValidationReport,
}

impl CandidateOutput {
    /// A candidate is valid when it parsed and accumulated no errors.
    pub fn is_valid(&self) -> bool {
        self.parse_result.is_ok() && self.validation.is_clean()
    }

    /// Run window validation on the parsed set (if any) and fold the
    /// findings into this candidate's report.
    pub fn validate_against(&mut self, window: &Window, policy: ValidationPolicy) {
        if let Ok(set) = &self.parse_result {
            let report = validate_persona_set(set, window, policy);
            self.validation.merge(report);
        }
    }
}

/// How to treat evidence ids that do not exist in the window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationPolicy {
    /// Any unknown id invalidates the candidate.
    Strict,
    /// Unknown ids are dropped; only a persona left with no known evidence
    /// is invalid. This is the default: it salvages training signal.
    #[default]
    Lenient,
}

/// Errors for direct construction of domain values.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("invalid date: {text}")]
    InvalidDate { text: String },
    #[error("duplicate memory id {id} in window")]
    DuplicateMemoryId { id: u32 },
    #[error("memory {id} has an empty label")]
    EmptyMemoryLabel { id: u32 },
}

// --- candidate parsing -----------------------------------------------------

/// Loosely-typed persona entry as it appears in model output. Field name
/// variants are tolerated; `description` may be a single string.
#[derive(Deserialize)]
struct RawPersona {
    #[serde(default)]
    persona_id: Option<String>,
    #[serde(alias = "label")]
    persona: Option<String>,
    #[serde(alias = "descriptions")]
    description: Option<OneOrMany>,
    #[serde(alias = "evidence_ids", alias = "evidence")]
    evidence_memory_ids: Option<Vec<i64>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
struct RawCandidate {
    personas: Vec<RawPersona>,
}

/// Parse a raw model generation into a persona set.
///
/// Code fences are stripped, then the text is scanned for the first balanced
/// JSON object that conforms to the persona output schema; surrounding prose
/// is ignored. Returns `MALFORMED` when no conforming object exists and
/// `EMPTY_PERSONA_LIST` when the object's persona list is empty. Duplicate
/// evidence ids within a persona are deduplicated silently and recorded as a
/// `DUPLICATE_ID` warning.
pub fn parse_candidate(raw_text: &str) -> CandidateOutput {
    let stripped = strip_code_fences(raw_text);
    let mut validation = ValidationReport::default();

    for start in object_starts(&stripped) {
        let Some(slice) = balanced_object(&stripped[start..]) else {
            continue;
        };
        let Ok(raw) = serde_json::from_str::<RawCandidate>(slice) else {
            continue;
        };
        if raw.personas.is_empty() {
            let failure = ParseFailure {
                code: IssueCode::EmptyPersonaList,
                message: "candidate contains an empty persona list".to_owned(),
            };
            validation
                .errors
                .push(ValidationIssue::new(failure.code, failure.message.clone()));
            return CandidateOutput {
                raw_text: raw_text.to_owned(),
                parse_result: Err(failure),
                validation,
            };
        }
        if let Some(personas) = convert_personas(raw.personas, &mut validation) {
            return CandidateOutput {
                raw_text: raw_text.to_owned(),
                parse_result: Ok(PersonaSet {
                    personas,
                    source_candidate_index: 0,
                }),
                validation,
            };
        }
        // Object parsed as JSON but an entry was missing required fields;
        // keep scanning in case a conforming object follows. Discard any
        // warnings noted against the rejected object.
        validation = ValidationReport::default();
    }

    let failure = ParseFailure {
        code: IssueCode::Malformed,
        message: "no schema-conforming persona object found".to_owned(),
    };
    validation
        .errors
        .push(ValidationIssue::new(failure.code, failure.message.clone()));
    CandidateOutput {
        raw_text: raw_text.to_owned(),
        parse_result: Err(failure),
        validation,
    }
}

/// Drop markdown fence marker lines (``` or ```lang), keeping their content.
fn strip_code_fences(text: &str) -> String {
    if !text.contains("```") {
        return text.to_owned();
    }
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            continue;
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Byte offsets of every `{` outside the scan loop's responsibility to
/// validate; each is a potential object start.
fn object_starts(text: &str) -> impl Iterator<Item = usize> + '_ {
    text.char_indices().filter(|(_, c)| *c == '{').map(|(i, _)| i)
}

/// Return the shortest prefix of `text` (which begins with `{`) that forms a
/// balanced JSON object, honoring string literals and escapes.
fn balanced_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some(&text[..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Convert raw persona entries, enforcing the structural invariants
/// (nonempty label, descriptions, evidence; ids are nonnegative integers).
/// Returns `None` if any entry is nonconforming, which disqualifies the
/// whole object.
fn convert_personas(
    raw: Vec<RawPersona>,
    validation: &mut ValidationReport,
) -> Option<Vec<Persona>> {
    let mut personas = Vec::with_capacity(raw.len());
    for (i, rp) in raw.into_iter().enumerate() {
        let label = rp.persona?.trim().to_owned();
        if label.is_empty() {
            return None;
        }
        let descriptions: Vec<String> = match rp.description? {
            OneOrMany::One(d) => alloc::vec![d],
            OneOrMany::Many(ds) => ds,
        }
        .into_iter()
        .map(|d| d.trim().to_owned())
        .filter(|d| !d.is_empty())
        .collect();
        if descriptions.is_empty() {
            return None;
        }
        let ids = rp.evidence_memory_ids?;
        if ids.is_empty() {
            return None;
        }
        let mut evidence_ids = BTreeSet::new();
        let mut dup = false;
        for id in &ids {
            let id = u32::try_from(*id).ok()?;
            if !evidence_ids.insert(id) {
                dup = true;
            }
        }
        let persona_id = match rp.persona_id {
            Some(pid) if !pid.trim().is_empty() => pid,
            _ => format!("P{}", i + 1),
        };
        if dup {
            validation.warnings.push(ValidationIssue::new(
                IssueCode::DuplicateId,
                format!("persona '{persona_id}' listed duplicate evidence ids; deduplicated"),
            ));
        }
        personas.push(Persona {
            persona_id,
            label,
            descriptions,
            evidence_ids,
        });
    }
    Some(personas)
}

// --- validation -------------------------------------------------------------

/// Check a persona set's evidence ids against the window.
///
/// Strict policy: any unknown id is an error. Lenient policy: unknown ids
/// are recorded as warnings (with `dropped_evidence_ids` listing them) and
/// only a persona whose entire evidence set is unknown produces an error.
/// Duplicate persona ids within the set are always an error. The window is
/// never mutated.
pub fn validate_persona_set(
    set: &PersonaSet,
    window: &Window,
    policy: ValidationPolicy,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    if set.personas.is_empty() {
        report.errors.push(ValidationIssue::new(
            IssueCode::EmptyPersonaList,
            "persona set contains no personas",
        ));
        return report;
    }

    let mut seen_ids = BTreeSet::new();
    for p in &set.personas {
        if !seen_ids.insert(p.persona_id.as_str()) {
            report.errors.push(ValidationIssue::new(
                IssueCode::DuplicateId,
                format!("duplicate persona id '{}'", p.persona_id),
            ));
        }
    }

    let known = window.memory_ids();
    for p in &set.personas {
        let unknown: Vec<u32> = p.evidence_ids.difference(&known).copied().collect();
        if unknown.is_empty() {
            continue;
        }
        match policy {
            ValidationPolicy::Strict => {
                report.errors.push(ValidationIssue::new(
                    IssueCode::UnknownEvidenceId,
                    format!(
                        "persona '{}' references unknown memory ids {:?}",
                        p.persona_id, unknown
                    ),
                ));
            }
            ValidationPolicy::Lenient => {
                report.warnings.push(ValidationIssue::new(
                    IssueCode::UnknownEvidenceId,
                    format!(
                        "persona '{}': dropped unknown memory ids {:?}",
                        p.persona_id, unknown
                    ),
                ));
                report.dropped_evidence_ids.extend(unknown.iter().copied());
                if unknown.len() == p.evidence_ids.len() {
                    report.errors.push(ValidationIssue::new(
                        IssueCode::UnknownEvidenceId,
                        format!(
                            "persona '{}' has no in-window evidence after dropping unknown ids",
                            p.persona_id
                        ),
                    ));
                }
            }
        }
    }
    report
}

/// Apply the lenient salvage: drop unknown evidence ids, remove personas
/// left without evidence, and drop later duplicates of a repeated persona
/// id. Returns the cleaned set and the report describing what was done;
/// re-validating the cleaned set (when nonempty) yields an empty report.
pub fn lenient_clean(set: &PersonaSet, window: &Window) -> (PersonaSet, ValidationReport) {
    let report = validate_persona_set(set, window, ValidationPolicy::Lenient);
    let known = window.memory_ids();
    let mut seen_ids = BTreeSet::new();
    let mut personas = Vec::with_capacity(set.personas.len());
    for p in &set.personas {
        if !seen_ids.insert(p.persona_id.clone()) {
            continue;
        }
        let evidence_ids: BTreeSet<u32> =
            p.evidence_ids.intersection(&known).copied().collect();
        if evidence_ids.is_empty() {
            continue;
        }
        personas.push(Persona {
            persona_id: p.persona_id.clone(),
            label: p.label.clone(),
            descriptions: p.descriptions.clone(),
            evidence_ids,
        });
    }
    (
        PersonaSet {
            personas,
            source_candidate_index: set.source_candidate_index,
        },
        report,
    )
}
