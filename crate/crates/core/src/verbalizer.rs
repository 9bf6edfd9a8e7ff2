//! Premises from examples, hypotheses from templates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{RelationEntry, Template, TemplateId, OBJ_PLACEHOLDER, SUBJ_PLACEHOLDER};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExampleError {
    #[error("example `{id}`: {which} span ({start}, {end}) is empty or outside 0..{len}")]
    SpanOutOfRange {
        id: String,
        which: Argument,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("example `{id}`: subject and object spans overlap")]
    OverlappingSpans { id: String },
    #[error("example `{id}`: {which} type tag is empty")]
    EmptyType { id: String, which: Argument },
}

/// Which of the two ordered arguments of a relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Argument {
    Subject,
    Object,
}

impl std::fmt::Display for Argument {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Argument::Subject => "subject",
            Argument::Object => "object",
        })
    }
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

/// One tokenized sentence with an ordered, typed (subject, object) pair.
///
/// The pair order matters: swapping subject and object describes a
/// different example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawExample")]
pub struct RelationExample {
    id: String,
    tokens: Vec<String>,
    subj_span: Span,
    obj_span: Span,
    subj_type: String,
    obj_type: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    gold: Option<String>,
}

#[derive(Deserialize)]
struct RawExample {
    id: String,
    tokens: Vec<String>,
    subj_span: Span,
    obj_span: Span,
    subj_type: String,
    obj_type: String,
    #[serde(default)]
    gold: Option<String>,
}

impl TryFrom<RawExample> for RelationExample {
    type Error = ExampleError;

    fn try_from(r: RawExample) -> Result<Self, Self::Error> {
        RelationExample::new(r.id, r.tokens, r.subj_span, r.obj_span, r.subj_type, r.obj_type, r.gold)
    }
}

impl RelationExample {
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        subj_span: Span,
        obj_span: Span,
        subj_type: impl Into<String>,
        obj_type: impl Into<String>,
        gold: Option<String>,
    ) -> Result<Self, ExampleError> {
        let id = id.into();
        let len = tokens.len();
        for (which, span) in [(Argument::Subject, subj_span), (Argument::Object, obj_span)] {
            if span.start >= span.end || span.end > len {
                return Err(ExampleError::SpanOutOfRange {
                    id,
                    which,
                    start: span.start,
                    end: span.end,
                    len,
                });
            }
        }
        if subj_span.overlaps(&obj_span) {
            return Err(ExampleError::OverlappingSpans { id });
        }
        let subj_type = subj_type.into();
        let obj_type = obj_type.into();
        if subj_type.is_empty() {
            return Err(ExampleError::EmptyType { id, which: Argument::Subject });
        }
        if obj_type.is_empty() {
            return Err(ExampleError::EmptyType { id, which: Argument::Object });
        }
        Ok(RelationExample {
            id,
            tokens,
            subj_span,
            obj_span,
            subj_type,
            obj_type,
            gold,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn subj_span(&self) -> Span {
        self.subj_span
    }

    pub fn obj_span(&self) -> Span {
        self.obj_span
    }

    pub fn subj_type(&self) -> &str {
        &self.subj_type
    }

    pub fn obj_type(&self) -> &str {
        &self.obj_type
    }

    pub fn gold(&self) -> Option<&str> {
        self.gold.as_deref()
    }

    pub fn with_gold(mut self, gold: Option<String>) -> Self {
        self.gold = gold;
        self
    }
}

/// A verbalized relation hypothesis and where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypothesis {
    pub text: String,
    pub relation: String,
    pub template_id: TemplateId,
}

/// Substitutes the mentions into the template's placeholders.
///
/// Substitution is a single pass over the pattern, so mention text that
/// itself looks like a placeholder is copied through untouched.
pub fn verbalize(template: &Template, subj_text: &str, obj_text: &str) -> String {
    let pattern = template.pattern();
    let subj_at = pattern.find(SUBJ_PLACEHOLDER).expect("template has {subj}");
    let obj_at = pattern.find(OBJ_PLACEHOLDER).expect("template has {obj}");
    let mut out = String::with_capacity(pattern.len() + subj_text.len() + obj_text.len());
    let (first_at, first_len, first_text, second_at, second_len, second_text) = if subj_at < obj_at {
        (subj_at, SUBJ_PLACEHOLDER.len(), subj_text, obj_at, OBJ_PLACEHOLDER.len(), obj_text)
    } else {
        (obj_at, OBJ_PLACEHOLDER.len(), obj_text, subj_at, SUBJ_PLACEHOLDER.len(), subj_text)
    };
    out.push_str(&pattern[..first_at]);
    out.push_str(first_text);
    out.push_str(&pattern[first_at + first_len..second_at]);
    out.push_str(second_text);
    out.push_str(&pattern[second_at + second_len..]);
    out
}

/// The premise text: tokens joined by single spaces.
pub fn premise_of(example: &RelationExample) -> String {
    example.tokens.join(" ")
}

pub fn mention_text(example: &RelationExample, which: Argument) -> String {
    let span = match which {
        Argument::Subject => example.subj_span,
        Argument::Object => example.obj_span,
    };
    example.tokens[span.start..span.end].join(" ")
}

/// All hypotheses for one relation, in template order.
pub fn hypotheses_for(example: &RelationExample, entry: &RelationEntry) -> Vec<Hypothesis> {
    let subj = mention_text(example, Argument::Subject);
    let obj = mention_text(example, Argument::Object);
    entry
        .templates()
        .iter()
        .map(|t| Hypothesis {
            text: verbalize(t, &subj, &obj),
            relation: entry.label().to_string(),
            template_id: t.id(),
        })
        .collect()
}
