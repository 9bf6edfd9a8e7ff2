//! Relation schema: label templates, argument type constraints and the type gate.
//!
//! A schema is loaded from a TOML document of the form
//!
//! ```toml
//! negative_label = "no_relation"
//! norel_template = "{subj} and {obj} are not related"
//!
//! [relations."per:date_of_birth"]
//! templates = ["{subj}'s birthday is on {obj}", "{subj} was born on {obj}"]
//! subj_types = ["PERSON"]
//! obj_types = ["DATE"]
//! ```
//!
//! Once built, a [`RelationSchema`] is immutable. Editing (for instance from the
//! template-authoring service) goes through [`RelationSchema::with_templates`],
//! which returns a new schema.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder replaced by the subject mention.
pub const SUBJ_PLACEHOLDER: &str = "{subj}";
/// Placeholder replaced by the object mention.
pub const OBJ_PLACEHOLDER: &str = "{obj}";
/// Upper bound on the number of templates a single relation may carry.
pub const MAX_TEMPLATES_PER_RELATION: usize = 8;

/// The TACRED schema shipped with the repository.
pub const TACRED_SCHEMA: &str = include_str!("../../../schemas/tacred.schema");

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot read schema file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema parse error: {0}")]
    Parse(String),
    #[error("{}duplicate relation label `{label}`", line_prefix(.line))]
    DuplicateRelation { label: String, line: Option<usize> },
    #[error("{}relation `{relation}`: template `{pattern}` {problem}", line_prefix(.line))]
    InvalidTemplate {
        relation: String,
        pattern: String,
        problem: TemplateProblem,
        line: Option<usize>,
    },
    #[error("{}relation `{relation}` has no templates", line_prefix(.line))]
    NoTemplates { relation: String, line: Option<usize> },
    #[error(
        "{}relation `{relation}` has {count} templates (at most {MAX_TEMPLATES_PER_RELATION} allowed)",
        line_prefix(.line)
    )]
    TooManyTemplates {
        relation: String,
        count: usize,
        line: Option<usize>,
    },
    #[error("{}relation `{relation}` has an empty {side} type set", line_prefix(.line))]
    EmptyTypeSet {
        relation: String,
        side: &'static str,
        line: Option<usize>,
    },
    #[error("negative label `{0}` is also declared as a positive relation")]
    NegativeLabelIsRelation(String),
    #[error("negative label must be non-empty")]
    EmptyNegativeLabel,
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
}

fn line_prefix(line: &Option<usize>) -> String {
    match line {
        Some(l) => format!("line {l}: "),
        None => String::new(),
    }
}

/// What is wrong with a template pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateProblem {
    MissingSubject,
    MissingObject,
    RepeatedSubject,
    RepeatedObject,
    NoLiteralText,
}

impl fmt::Display for TemplateProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateProblem::MissingSubject => "is missing the {subj} placeholder",
            TemplateProblem::MissingObject => "is missing the {obj} placeholder",
            TemplateProblem::RepeatedSubject => "uses the {subj} placeholder more than once",
            TemplateProblem::RepeatedObject => "uses the {obj} placeholder more than once",
            TemplateProblem::NoLiteralText => "has no text besides its placeholders",
        })
    }
}

/// Position of a template within its relation's template list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateId(pub usize);

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A verbalization pattern with exactly one `{subj}` and one `{obj}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Template {
    id: TemplateId,
    pattern: String,
}

impl Template {
    pub fn new(id: TemplateId, pattern: impl Into<String>) -> Result<Self, TemplateProblem> {
        let pattern = pattern.into();
        check_pattern(&pattern)?;
        Ok(Template { id, pattern })
    }

    pub fn id(&self) -> TemplateId {
        self.id
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }
}

/// Validates a template pattern without building a [`Template`].
pub fn check_pattern(pattern: &str) -> Result<(), TemplateProblem> {
    match pattern.matches(SUBJ_PLACEHOLDER).count() {
        0 => return Err(TemplateProblem::MissingSubject),
        1 => {}
        _ => return Err(TemplateProblem::RepeatedSubject),
    }
    match pattern.matches(OBJ_PLACEHOLDER).count() {
        0 => return Err(TemplateProblem::MissingObject),
        1 => {}
        _ => return Err(TemplateProblem::RepeatedObject),
    }
    let literal_len = pattern.len() - SUBJ_PLACEHOLDER.len() - OBJ_PLACEHOLDER.len();
    if literal_len == 0 {
        return Err(TemplateProblem::NoLiteralText);
    }
    Ok(())
}

/// Templates and argument type constraints of one positive relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationEntry {
    label: String,
    templates: Vec<Template>,
    subj_types: BTreeSet<String>,
    obj_types: BTreeSet<String>,
}

impl RelationEntry {
    pub fn new<P, S, O>(
        label: impl Into<String>,
        patterns: impl IntoIterator<Item = P>,
        subj_types: impl IntoIterator<Item = S>,
        obj_types: impl IntoIterator<Item = O>,
    ) -> Result<Self, SchemaError>
    where
        P: Into<String>,
        S: Into<String>,
        O: Into<String>,
    {
        let label = label.into();
        let patterns: Vec<String> = patterns.into_iter().map(Into::into).collect();
        let subj_types: BTreeSet<String> = subj_types.into_iter().map(Into::into).collect();
        let obj_types: BTreeSet<String> = obj_types.into_iter().map(Into::into).collect();
        build_entry(label, patterns, subj_types, obj_types, None)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn subj_types(&self) -> &BTreeSet<String> {
        &self.subj_types
    }

    pub fn obj_types(&self) -> &BTreeSet<String> {
        &self.obj_types
    }

    /// The type gate for this relation.
    pub fn admits(&self, subj_type: &str, obj_type: &str) -> bool {
        self.subj_types.contains(subj_type) && self.obj_types.contains(obj_type)
    }
}

fn build_entry(
    label: String,
    patterns: Vec<String>,
    subj_types: BTreeSet<String>,
    obj_types: BTreeSet<String>,
    line: Option<usize>,
) -> Result<RelationEntry, SchemaError> {
    if patterns.is_empty() {
        return Err(SchemaError::NoTemplates { relation: label, line });
    }
    if patterns.len() > MAX_TEMPLATES_PER_RELATION {
        return Err(SchemaError::TooManyTemplates {
            relation: label,
            count: patterns.len(),
            line,
        });
    }
    let mut templates = Vec::with_capacity(patterns.len());
    for (i, pattern) in patterns.into_iter().enumerate() {
        if let Err(problem) = check_pattern(&pattern) {
            return Err(SchemaError::InvalidTemplate {
                relation: label,
                pattern,
                problem,
                line,
            });
        }
        templates.push(Template {
            id: TemplateId(i),
            pattern,
        });
    }
    if subj_types.is_empty() {
        return Err(SchemaError::EmptyTypeSet { relation: label, side: "subject", line });
    }
    if obj_types.is_empty() {
        return Err(SchemaError::EmptyTypeSet { relation: label, side: "object", line });
    }
    Ok(RelationEntry {
        label,
        templates,
        subj_types,
        obj_types,
    })
}

/// The full set of positive relations plus the no-relation configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSchema {
    relations: BTreeMap<String, RelationEntry>,
    negative_label: String,
    norel_template: Option<Template>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    negative_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    norel_template: Option<String>,
    #[serde(default)]
    relations: BTreeMap<String, EntryDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryDoc {
    templates: Vec<String>,
    subj_types: Vec<String>,
    obj_types: Vec<String>,
}

impl RelationSchema {
    pub fn new(
        entries: impl IntoIterator<Item = RelationEntry>,
        negative_label: impl Into<String>,
        norel_template: Option<&str>,
    ) -> Result<Self, SchemaError> {
        let negative_label = negative_label.into();
        if negative_label.is_empty() {
            return Err(SchemaError::EmptyNegativeLabel);
        }
        let mut relations = BTreeMap::new();
        for entry in entries {
            if relations.contains_key(&entry.label) {
                return Err(SchemaError::DuplicateRelation { label: entry.label, line: None });
            }
            relations.insert(entry.label.clone(), entry);
        }
        if relations.contains_key(&negative_label) {
            return Err(SchemaError::NegativeLabelIsRelation(negative_label));
        }
        let norel_template = norel_template
            .map(|p| {
                Template::new(TemplateId(0), p).map_err(|problem| SchemaError::InvalidTemplate {
                    relation: negative_label.clone(),
                    pattern: p.to_string(),
                    problem,
                    line: None,
                })
            })
            .transpose()?;
        Ok(RelationSchema {
            relations,
            negative_label,
            norel_template,
        })
    }

    /// Loads the schema shipped for TACRED.
    pub fn tacred() -> Self {
        Self::from_toml_str(TACRED_SCHEMA).expect("shipped TACRED schema is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SchemaError> {
        if let Some(dup) = find_duplicate_table(text) {
            return Err(dup);
        }
        let doc: SchemaDoc = toml::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
        if doc.negative_label.is_empty() {
            return Err(SchemaError::EmptyNegativeLabel);
        }
        if doc.relations.contains_key(&doc.negative_label) {
            return Err(SchemaError::NegativeLabelIsRelation(doc.negative_label));
        }
        let mut relations = BTreeMap::new();
        for (label, entry) in doc.relations {
            let line = relation_line(text, &label);
            let built = build_entry(
                label.clone(),
                entry.templates,
                entry.subj_types.into_iter().collect(),
                entry.obj_types.into_iter().collect(),
                line,
            )?;
            relations.insert(label, built);
        }
        let norel_template = match doc.norel_template {
            Some(p) => Some(Template::new(TemplateId(0), p.clone()).map_err(|problem| {
                SchemaError::InvalidTemplate {
                    relation: doc.negative_label.clone(),
                    pattern: p,
                    problem,
                    line: key_line(text, "norel_template"),
                }
            })?),
            None => None,
        };
        Ok(RelationSchema {
            relations,
            negative_label: doc.negative_label,
            norel_template,
        })
    }

    /// Serializes back into the schema file format.
    pub fn to_toml_string(&self) -> String {
        let doc = SchemaDoc {
            negative_label: self.negative_label.clone(),
            norel_template: self.norel_template.as_ref().map(|t| t.pattern.clone()),
            relations: self
                .relations
                .values()
                .map(|e| {
                    (
                        e.label.clone(),
                        EntryDoc {
                            templates: e.templates.iter().map(|t| t.pattern.clone()).collect(),
                            subj_types: e.subj_types.iter().cloned().collect(),
                            obj_types: e.obj_types.iter().cloned().collect(),
                        },
                    )
                })
                .collect(),
        };
        toml::to_string(&doc).expect("schema document always serializes")
    }

    pub fn negative_label(&self) -> &str {
        &self.negative_label
    }

    pub fn norel_template(&self) -> Option<&Template> {
        self.norel_template.as_ref()
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    /// Positive relations in lexicographic label order.
    pub fn relations(&self) -> impl Iterator<Item = &RelationEntry> {
        self.relations.values()
    }

    pub fn relation(&self, label: &str) -> Option<&RelationEntry> {
        self.relations.get(label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.relations.contains_key(label)
    }

    /// The type gate: whether `relation` accepts the given argument types.
    pub fn delta(&self, relation: &str, subj_type: &str, obj_type: &str) -> Result<bool, SchemaError> {
        self.relations
            .get(relation)
            .map(|e| e.admits(subj_type, obj_type))
            .ok_or_else(|| SchemaError::UnknownRelation(relation.to_string()))
    }

    /// Labels whose type gate admits the pair, lexicographically ordered.
    pub fn candidate_relations(&self, subj_type: &str, obj_type: &str) -> Vec<&str> {
        self.relations
            .values()
            .filter(|e| e.admits(subj_type, obj_type))
            .map(|e| e.label.as_str())
            .collect()
    }

    /// Returns a copy of this schema with `relation`'s templates replaced.
    pub fn with_templates<P: Into<String>>(
        &self,
        relation: &str,
        patterns: impl IntoIterator<Item = P>,
    ) -> Result<Self, SchemaError> {
        let current = self
            .relations
            .get(relation)
            .ok_or_else(|| SchemaError::UnknownRelation(relation.to_string()))?;
        let entry = build_entry(
            current.label.clone(),
            patterns.into_iter().map(Into::into).collect(),
            current.subj_types.clone(),
            current.obj_types.clone(),
            None,
        )?;
        let mut next = self.clone();
        next.relations.insert(entry.label.clone(), entry);
        Ok(next)
    }
}

// The toml parser reports duplicate tables, but without naming the relation in
// a way that survives its error formatting; scan the headers ourselves first.
fn find_duplicate_table(text: &str) -> Option<SchemaError> {
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(label) = relation_header(line) {
            if !seen.insert(label.clone()) {
                return Some(SchemaError::DuplicateRelation { label, line: Some(i + 1) });
            }
        }
    }
    None
}

fn relation_header(line: &str) -> Option<String> {
    let inner = line.trim().strip_prefix("[relations.")?.strip_suffix(']')?.trim();
    let label = if let Some(quoted) = inner.strip_prefix('"') {
        quoted.strip_suffix('"')?
    } else if let Some(quoted) = inner.strip_prefix('\'') {
        quoted.strip_suffix('\'')?
    } else {
        inner
    };
    Some(label.to_string())
}

fn relation_line(text: &str, label: &str) -> Option<usize> {
    text.lines()
        .position(|l| relation_header(l).as_deref() == Some(label))
        .map(|i| i + 1)
}

fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            l.trim_start()
                .strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}
