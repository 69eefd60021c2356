//! Domain types shared by every stage of the pipeline: documents, the
//! extraction schema and extraction records.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// One corpus text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub body: String,
    #[serde(default, rename = "meta", skip_serializing_if = "BTreeMap::is_empty")]
    pub source_meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Numeric,
    Money,
    Duration,
    Categorical,
    FreeText,
    LabelSet,
}

impl FieldKind {
    /// Kinds whose normalized values can be read as numbers.
    pub fn is_quantitative(self) -> bool {
        matches!(self, FieldKind::Numeric | FieldKind::Money | FieldKind::Duration)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    #[serde(default)]
    pub multi_valued: bool,
    #[serde(default)]
    pub description: String,
}

impl FieldSpec {
    pub fn new(name: &str, kind: FieldKind) -> Self {
        FieldSpec {
            name: name.to_string(),
            kind,
            multi_valued: false,
            description: String::new(),
        }
    }

    pub fn multi(mut self) -> Self {
        self.multi_valued = true;
        self
    }

    pub fn describe(mut self, text: &str) -> Self {
        self.description = text.to_string();
        self
    }
}

/// Prompt language of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    En,
    Ko,
}

/// A versioned extraction schema. Field order is significant: prompts and
/// canonical parse JSON list fields in this order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    #[serde(default)]
    pub ontology_id: String,
    #[serde(default = "first_version")]
    pub version: u32,
    #[serde(default)]
    pub task_description: String,
    pub fields: Vec<FieldSpec>,
    #[serde(default)]
    pub language: Language,
}

fn first_version() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("ontology must define at least one field")]
    NoFields,
    #[error("duplicate field name {0:?}")]
    DuplicateField(String),
    #[error("invalid field name {0:?}: expected [A-Za-z0-9_-]+")]
    InvalidFieldName(String),
    #[error("unknown field {0:?}")]
    UnknownField(String),
    #[error("field {field:?} is single-valued but has {count} values")]
    TooManyValues { field: String, count: usize },
}

/// Trims a field name and joins internal whitespace with underscores.
pub fn canonical_field_name(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join("_")
}

fn valid_field_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl Ontology {
    pub fn new(task_description: &str, fields: Vec<FieldSpec>) -> Result<Self, SchemaError> {
        let mut onto = Ontology {
            ontology_id: String::new(),
            version: 1,
            task_description: task_description.to_string(),
            fields,
            language: Language::En,
        };
        onto.canonicalize()?;
        Ok(onto)
    }

    /// Canonicalizes field names in place and checks the schema invariants.
    pub fn canonicalize(&mut self) -> Result<(), SchemaError> {
        for f in &mut self.fields {
            f.name = canonical_field_name(&f.name);
        }
        self.check()
    }

    pub fn check(&self) -> Result<(), SchemaError> {
        if self.fields.is_empty() {
            return Err(SchemaError::NoFields);
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.fields {
            if !valid_field_name(&f.name) {
                return Err(SchemaError::InvalidFieldName(f.name.clone()));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(SchemaError::DuplicateField(f.name.clone()));
            }
        }
        Ok(())
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }

    /// Checks that every key of `parse` is a field of this ontology and that
    /// single-valued fields hold at most one value.
    pub fn validate(&self, parse: &Parse) -> Result<(), SchemaError> {
        for (name, values) in parse.iter() {
            let spec = self
                .field(name)
                .ok_or_else(|| SchemaError::UnknownField(name.to_string()))?;
            if !spec.multi_valued && values.len() > 1 {
                return Err(SchemaError::TooManyValues {
                    field: name.to_string(),
                    count: values.len(),
                });
            }
        }
        Ok(())
    }
}

/// One extraction record: field name to an ordered list of values.
///
/// A missing key and a key holding an empty list mean the same thing;
/// equality and serialization both ignore empty entries.
#[derive(Debug, Clone, Default)]
pub struct Parse {
    values: BTreeMap<String, Vec<String>>,
}

impl Parse {
    pub fn new() -> Self {
        Parse::default()
    }

    pub fn with(mut self, field: &str, values: &[&str]) -> Self {
        self.set(field, values.iter().map(|v| v.to_string()).collect());
        self
    }

    pub fn set(&mut self, field: &str, values: Vec<String>) {
        self.values.insert(field.to_string(), values);
    }

    pub fn push(&mut self, field: &str, value: String) {
        self.values.entry(field.to_string()).or_default().push(value);
    }

    pub fn remove(&mut self, field: &str) -> Option<Vec<String>> {
        self.values.remove(field)
    }

    pub fn get(&self, field: &str) -> &[String] {
        self.values.get(field).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Non-empty entries in field-name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.values
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.iter().next().is_none()
    }

    pub fn contains_field(&self, field: &str) -> bool {
        !self.get(field).is_empty()
    }

    /// Inserts an empty list for every ontology field that is absent.
    pub fn fill_absent(&mut self, ontology: &Ontology) {
        for name in ontology.field_names() {
            self.values.entry(name.to_string()).or_default();
        }
    }

    /// True when every ontology field carries at least one value.
    pub fn covers(&self, ontology: &Ontology) -> bool {
        ontology.field_names().all(|f| self.contains_field(f))
    }

    /// Field names with values that the ontology does not define.
    pub fn fields_outside<'a>(&'a self, ontology: &'a Ontology) -> Vec<&'a str> {
        self.iter()
            .map(|(k, _)| k)
            .filter(|k| ontology.field(k).is_none())
            .collect()
    }

    /// Canonical JSON text: fields in ontology order, empty fields omitted,
    /// fields unknown to the ontology appended in name order.
    pub fn to_canonical_json(&self, ontology: &Ontology) -> String {
        let mut map = serde_json::Map::new();
        for name in ontology.field_names() {
            let vals = self.get(name);
            if !vals.is_empty() {
                map.insert(name.to_string(), serde_json::json!(vals));
            }
        }
        for (name, vals) in self.iter() {
            if ontology.field(name).is_none() {
                map.insert(name.to_string(), serde_json::json!(vals));
            }
        }
        serde_json::Value::Object(map).to_string()
    }
}

impl PartialEq for Parse {
    fn eq(&self, other: &Self) -> bool {
        self.iter().eq(other.iter())
    }
}

impl Eq for Parse {}

impl Serialize for Parse {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_map(self.iter())
    }
}

impl<'de> Deserialize<'de> for Parse {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = BTreeMap::<String, Vec<String>>::deserialize(deserializer)?;
        Ok(Parse { values })
    }
}

impl fmt::Display for Parse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_json::to_string(self).map_err(|_| fmt::Error)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Human,
    Llm,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Human => "human",
            Provenance::Llm => "llm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub doc_id: String,
    pub parse: Parse,
    pub provenance: Provenance,
    #[serde(default)]
    pub labeler_meta: String,
    pub created_at: DateTime<Utc>,
    /// Ontology version the parse was validated against.
    #[serde(default)]
    pub ontology_version: u32,
    #[serde(default)]
    pub version: u32,
    #[serde(default)]
    pub stale: bool,
}

/// A row of the labels export format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub doc_id: String,
    #[serde(default = "human")]
    pub provenance: Provenance,
    pub parse: Parse,
}

fn human() -> Provenance {
    Provenance::Human
}

impl From<&LabeledExample> for LabelRecord {
    fn from(ex: &LabeledExample) -> Self {
        LabelRecord {
            doc_id: ex.doc_id.clone(),
            provenance: ex.provenance,
            parse: ex.parse.clone(),
        }
    }
}
