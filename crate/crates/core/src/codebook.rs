//! Survey codebook: the machine-readable schema raters answer against.
//!
//! A codebook is an ordered list of variables. Order is significant: it is the
//! order in which the survey form renders its widgets, and it survives a
//! parse/serialize round trip unchanged.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The bundled Quito survey codebook.
pub const QUITO_CODEBOOK: &str = include_str!("../fixtures/quito_codebook.json");

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    /// Structural problem. `key` names the offending variable when there is one.
    #[error("schema error{}: {message}", key.as_deref().map(|k| format!(" in variable `{k}`")).unwrap_or_default())]
    Schema { key: Option<String>, message: String },
}

impl CodebookError {
    fn schema(key: impl Into<String>, message: impl Into<String>) -> Self {
        CodebookError::Schema {
            key: Some(key.into()),
            message: message.into(),
        }
    }

    /// Variable key named by a schema error, if any.
    pub fn variable_key(&self) -> Option<&str> {
        match self {
            CodebookError::Schema { key, .. } => key.as_deref(),
            CodebookError::Syntax { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    SingleChoice,
    MultiChoice,
    Count,
    FreeText,
}

impl VariableKind {
    pub fn is_choice(self) -> bool {
        matches!(self, VariableKind::SingleChoice | VariableKind::MultiChoice)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VariableKind::SingleChoice => "single_choice",
            VariableKind::MultiChoice => "multi_choice",
            VariableKind::Count => "count",
            VariableKind::FreeText => "free_text",
        }
    }
}

impl fmt::Display for VariableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One category of a choice variable, with its written definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionDef {
    pub code: String,
    pub label: String,
    #[serde(default)]
    pub definition: String,
    #[serde(default)]
    pub reference_image_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableDef {
    pub key: String,
    pub label: String,
    pub kind: VariableKind,
    pub required: bool,
    /// Non-empty only for choice kinds.
    pub options: Vec<OptionDef>,
    /// Inclusive bounds, present only for the count kind.
    pub count_range: Option<(i64, i64)>,
}

impl VariableDef {
    pub fn option(&self, code: &str) -> Option<&OptionDef> {
        self.options.iter().find(|o| o.code == code)
    }

    /// Position of `code` in the option list.
    pub fn option_index(&self, code: &str) -> Option<usize> {
        self.options.iter().position(|o| o.code == code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    pub schema_id: String,
    pub version: String,
    /// Draft codebooks may carry options with empty definitions.
    pub draft: bool,
    pub variables: Vec<VariableDef>,
}

// Wire representation, kept separate so that kind-specific fields can be
// checked against the declared kind after deserialization.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCodebook {
    schema_id: String,
    version: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    draft: bool,
    variables: Vec<RawVariable>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVariable {
    key: String,
    label: String,
    kind: VariableKind,
    required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    options: Option<Vec<OptionDef>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_count: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_count: Option<i64>,
}

/// Parses a codebook document and checks every schema invariant.
pub fn parse_codebook(document: &[u8]) -> Result<Codebook, CodebookError> {
    let raw: RawCodebook = serde_json::from_slice(document).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Syntax | Category::Eof | Category::Io => CodebookError::Syntax {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            },
            Category::Data => CodebookError::Schema {
                key: None,
                message: e.to_string(),
            },
        }
    })?;
    Codebook::from_raw(raw)
}

impl Codebook {
    /// The bundled Quito survey codebook.
    pub fn quito() -> Codebook {
        parse_codebook(QUITO_CODEBOOK.as_bytes()).expect("bundled codebook is valid")
    }

    fn from_raw(raw: RawCodebook) -> Result<Codebook, CodebookError> {
        if raw.variables.is_empty() {
            return Err(CodebookError::Schema {
                key: None,
                message: "codebook declares no variables".into(),
            });
        }
        if raw.version.trim().is_empty() {
            return Err(CodebookError::Schema {
                key: None,
                message: "version is empty".into(),
            });
        }
        let mut seen = HashSet::new();
        let mut variables = Vec::with_capacity(raw.variables.len());
        for v in raw.variables {
            if v.key.is_empty() || v.key.chars().any(char::is_whitespace) {
                return Err(CodebookError::schema(
                    v.key.clone(),
                    "variable key must be non-empty without whitespace",
                ));
            }
            if !seen.insert(v.key.clone()) {
                return Err(CodebookError::schema(v.key, "duplicate variable key"));
            }
            variables.push(build_variable(v, raw.draft)?);
        }
        Ok(Codebook {
            schema_id: raw.schema_id,
            version: raw.version,
            draft: raw.draft,
            variables,
        })
    }

    fn to_raw(&self) -> RawCodebook {
        RawCodebook {
            schema_id: self.schema_id.clone(),
            version: self.version.clone(),
            draft: self.draft,
            variables: self
                .variables
                .iter()
                .map(|v| RawVariable {
                    key: v.key.clone(),
                    label: v.label.clone(),
                    kind: v.kind,
                    required: v.required,
                    options: v.kind.is_choice().then(|| v.options.clone()),
                    min_count: v.count_range.map(|r| r.0),
                    max_count: v.count_range.map(|r| r.1),
                })
                .collect(),
        }
    }

    /// Serializes back to the codebook file format (pretty-printed).
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.to_raw()).expect("codebook serializes");
        out.push('\n');
        out
    }

    pub fn variable(&self, key: &str) -> Option<&VariableDef> {
        self.variables.iter().find(|v| v.key == key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.variables.iter().map(|v| v.key.as_str())
    }
}

fn build_variable(v: RawVariable, draft: bool) -> Result<VariableDef, CodebookError> {
    let key = v.key;
    let (options, count_range) = match v.kind {
        VariableKind::SingleChoice | VariableKind::MultiChoice => {
            if v.min_count.is_some() || v.max_count.is_some() {
                return Err(CodebookError::schema(
                    key,
                    "min_count/max_count are only allowed on count variables",
                ));
            }
            let options = v.options.unwrap_or_default();
            if options.len() < 2 {
                return Err(CodebookError::schema(key, "choice variable needs at least two options"));
            }
            let mut codes = HashSet::new();
            for o in &options {
                if o.code.is_empty() || o.code.chars().any(char::is_whitespace) {
                    return Err(CodebookError::schema(
                        key,
                        format!("option code {:?} must be non-empty without whitespace", o.code),
                    ));
                }
                if !codes.insert(o.code.as_str()) {
                    return Err(CodebookError::schema(
                        key,
                        format!("duplicate option code {:?}", o.code),
                    ));
                }
                if o.definition.trim().is_empty() && !draft {
                    return Err(CodebookError::schema(
                        key,
                        format!(
                            "option {:?} has no definition (allowed only in draft codebooks)",
                            o.code
                        ),
                    ));
                }
                if let Some(url) = &o.reference_image_url {
                    if !(url.starts_with("http://") || url.starts_with("https://"))
                        || url.chars().any(char::is_whitespace)
                    {
                        return Err(CodebookError::schema(
                            key,
                            format!("option {:?} has a malformed reference_image_url", o.code),
                        ));
                    }
                }
            }
            (options, None)
        }
        VariableKind::Count => {
            if v.options.as_ref().is_some_and(|o| !o.is_empty()) {
                return Err(CodebookError::schema(key, "count variable cannot have options"));
            }
            let (Some(min), Some(max)) = (v.min_count, v.max_count) else {
                return Err(CodebookError::schema(
                    key,
                    "count variable needs min_count and max_count",
                ));
            };
            if min < 0 || min > max {
                return Err(CodebookError::schema(
                    key,
                    format!("count bounds must satisfy 0 <= min_count <= max_count, got [{min}, {max}]"),
                ));
            }
            (Vec::new(), Some((min, max)))
        }
        VariableKind::FreeText => {
            if v.options.as_ref().is_some_and(|o| !o.is_empty()) {
                return Err(CodebookError::schema(key, "free_text variable cannot have options"));
            }
            if v.min_count.is_some() || v.max_count.is_some() {
                return Err(CodebookError::schema(
                    key,
                    "min_count/max_count are only allowed on count variables",
                ));
            }
            (Vec::new(), None)
        }
    };
    Ok(VariableDef {
        key,
        label: v.label,
        kind: v.kind,
        required: v.required,
        options,
        count_range,
    })
}

/// A rater's answer to one variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Choice(String),
    Choices(Vec<String>),
    Count(i64),
    Text(String),
}

impl Answer {
    pub fn kind(&self) -> VariableKind {
        match self {
            Answer::Choice(_) => VariableKind::SingleChoice,
            Answer::Choices(_) => VariableKind::MultiChoice,
            Answer::Count(_) => VariableKind::Count,
            Answer::Text(_) => VariableKind::FreeText,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum ViolationReason {
    MissingRequired,
    KindMismatch {
        expected: VariableKind,
        found: VariableKind,
    },
    UnknownCode {
        code: String,
    },
    EmptySelection,
    DuplicateCode {
        code: String,
    },
    OutOfRange {
        value: i64,
        min: i64,
        max: i64,
    },
    UnknownVariable,
    /// Not about a codebook variable: a field of the submission itself.
    InvalidField {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub key: String,
    #[serde(flatten)]
    pub reason: ViolationReason,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.reason {
            ViolationReason::MissingRequired => write!(f, "{}: required answer missing", self.key),
            ViolationReason::KindMismatch { expected, found } => {
                write!(f, "{}: expected {expected} answer, got {found}", self.key)
            }
            ViolationReason::UnknownCode { code } => write!(f, "{}: unknown option {code:?}", self.key),
            ViolationReason::EmptySelection => write!(f, "{}: empty selection", self.key),
            ViolationReason::DuplicateCode { code } => {
                write!(f, "{}: option {code:?} selected twice", self.key)
            }
            ViolationReason::OutOfRange { value, min, max } => {
                write!(f, "{}: {value} outside [{min}, {max}]", self.key)
            }
            ViolationReason::UnknownVariable => write!(f, "{}: not a codebook variable", self.key),
            ViolationReason::InvalidField { message } => write!(f, "{}: {message}", self.key),
        }
    }
}

/// Checks an answer set against the codebook. An empty result means the
/// answers are acceptable. Violations come out in codebook order, followed by
/// answers to unknown variables in key order.
pub fn validate_response_shape(cb: &Codebook, answers: &BTreeMap<String, Answer>) -> Vec<Violation> {
    let mut out = Vec::new();
    for var in &cb.variables {
        let Some(answer) = answers.get(&var.key) else {
            if var.required {
                out.push(Violation {
                    key: var.key.clone(),
                    reason: ViolationReason::MissingRequired,
                });
            }
            continue;
        };
        let mut push = |reason| {
            out.push(Violation {
                key: var.key.clone(),
                reason,
            })
        };
        match (var.kind, answer) {
            (VariableKind::SingleChoice, Answer::Choice(code)) => {
                if var.option(code).is_none() {
                    push(ViolationReason::UnknownCode { code: code.clone() });
                }
            }
            (VariableKind::MultiChoice, Answer::Choices(codes)) => {
                if codes.is_empty() {
                    push(ViolationReason::EmptySelection);
                }
                let mut seen = BTreeSet::new();
                for code in codes {
                    if var.option(code).is_none() {
                        push(ViolationReason::UnknownCode { code: code.clone() });
                    } else if !seen.insert(code.as_str()) {
                        push(ViolationReason::DuplicateCode { code: code.clone() });
                    }
                }
            }
            (VariableKind::Count, Answer::Count(value)) => {
                let (min, max) = var.count_range.expect("count variables carry bounds");
                if *value < min || *value > max {
                    push(ViolationReason::OutOfRange {
                        value: *value,
                        min,
                        max,
                    });
                }
            }
            (VariableKind::FreeText, Answer::Text(_)) => {}
            (expected, found) => push(ViolationReason::KindMismatch {
                expected,
                found: found.kind(),
            }),
        }
    }
    for key in answers.keys() {
        if cb.variable(key).is_none() {
            out.push(Violation {
                key: key.clone(),
                reason: ViolationReason::UnknownVariable,
            });
        }
    }
    out
}
