use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const DEFAULT_SEPARATOR: &str = "[SEP]";

/// Identity verbalization: the label split on non-letters, lowercased.
/// `"GET_WEATHER"` becomes `["get", "weather"]`.
pub fn default_verbalization(label: &str) -> Vec<String> {
    let words: Vec<String> = label
        .split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    if words.is_empty() {
        vec![label.to_lowercase()]
    } else {
        words
    }
}

/// On-disk schema document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaDocument {
    pub condition_types: Vec<String>,
    pub relation_labels: Vec<String>,
    #[serde(default)]
    pub verbalizer: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub condition_verbalizer: BTreeMap<String, Vec<String>>,
    #[serde(default = "default_separator")]
    pub separator: String,
}

fn default_separator() -> String {
    DEFAULT_SEPARATOR.to_string()
}

/// Condition types, the relation label set, and the tables that turn labels
/// into priming words. Every label has a verbalization after construction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaDocument", into = "SchemaDocument")]
pub struct RelationSchema {
    condition_types: Vec<String>,
    relation_labels: Vec<String>,
    verbalizer: BTreeMap<String, Vec<String>>,
    condition_verbalizer: BTreeMap<String, Vec<String>>,
    separator: String,
    condition_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
}

impl RelationSchema {
    pub fn new(
        condition_types: Vec<String>,
        relation_labels: Vec<String>,
        verbalizer: BTreeMap<String, Vec<String>>,
        condition_verbalizer: BTreeMap<String, Vec<String>>,
    ) -> Result<Self> {
        Self::from_document(SchemaDocument {
            condition_types,
            relation_labels,
            verbalizer,
            condition_verbalizer,
            separator: default_separator(),
        })
    }

    pub fn from_document(doc: SchemaDocument) -> Result<Self> {
        if doc.relation_labels.is_empty() {
            return Err(Error::InvalidSchema("relation label set is empty".into()));
        }
        if doc.condition_types.is_empty() {
            return Err(Error::InvalidSchema("condition type set is empty".into()));
        }
        if doc.separator.is_empty() {
            return Err(Error::InvalidSchema("empty separator".into()));
        }
        let condition_index = index_of(&doc.condition_types, "condition type")?;
        let relation_index = index_of(&doc.relation_labels, "relation label")?;
        let verbalizer = complete_table(
            doc.verbalizer,
            &doc.relation_labels,
            &relation_index,
            &doc.separator,
            "verbalizer",
        )?;
        let condition_verbalizer = complete_table(
            doc.condition_verbalizer,
            &doc.condition_types,
            &condition_index,
            &doc.separator,
            "condition_verbalizer",
        )?;
        Ok(Self {
            condition_types: doc.condition_types,
            relation_labels: doc.relation_labels,
            verbalizer,
            condition_verbalizer,
            separator: doc.separator,
            condition_index,
            relation_index,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: SchemaDocument = serde_json::from_str(&text).map_err(|e| Error::Json {
            context: path.display().to_string(),
            source: e,
        })?;
        Self::from_document(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_document()).expect("schema serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn to_document(&self) -> SchemaDocument {
        SchemaDocument {
            condition_types: self.condition_types.clone(),
            relation_labels: self.relation_labels.clone(),
            verbalizer: self.verbalizer.clone(),
            condition_verbalizer: self.condition_verbalizer.clone(),
            separator: self.separator.clone(),
        }
    }

    pub fn condition_types(&self) -> &[String] {
        &self.condition_types
    }

    pub fn relation_labels(&self) -> &[String] {
        &self.relation_labels
    }

    pub fn separator(&self) -> &str {
        &self.separator
    }

    pub fn condition_type_index(&self, label: &str) -> Option<usize> {
        self.condition_index.get(label).copied()
    }

    pub fn relation_index(&self, label: &str) -> Option<usize> {
        self.relation_index.get(label).copied()
    }

    pub fn verbalize_relation(&self, label: &str) -> Result<&[String]> {
        self.verbalizer
            .get(label)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingVerbalization(label.to_string()))
    }

    pub fn verbalize_condition(&self, label: &str) -> Result<&[String]> {
        self.condition_verbalizer
            .get(label)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingVerbalization(label.to_string()))
    }

    /// Stable content hash (hex, 16 chars) used to pair checkpoints with schemas.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.to_document()).expect("schema serializes");
        let digest = Sha256::digest(&canonical);
        hex::encode(&digest[..8])
    }
}

impl TryFrom<SchemaDocument> for RelationSchema {
    type Error = Error;

    fn try_from(doc: SchemaDocument) -> Result<Self> {
        Self::from_document(doc)
    }
}

impl From<RelationSchema> for SchemaDocument {
    fn from(schema: RelationSchema) -> Self {
        schema.to_document()
    }
}

fn index_of(labels: &[String], what: &str) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(labels.len());
    for (i, label) in labels.iter().enumerate() {
        if label.is_empty() {
            return Err(Error::InvalidSchema(format!("empty {what}")));
        }
        if index.insert(label.clone(), i).is_some() {
            return Err(Error::InvalidSchema(format!("duplicate {what} {label:?}")));
        }
    }
    Ok(index)
}

fn complete_table(
    mut table: BTreeMap<String, Vec<String>>,
    labels: &[String],
    index: &HashMap<String, usize>,
    separator: &str,
    what: &str,
) -> Result<BTreeMap<String, Vec<String>>> {
    let known: BTreeSet<&String> = index.keys().collect();
    if let Some(extra) = table.keys().find(|k| !known.contains(k)) {
        return Err(Error::InvalidSchema(format!(
            "{what} entry for unknown label {extra:?}"
        )));
    }
    for label in labels {
        table
            .entry(label.clone())
            .or_insert_with(|| default_verbalization(label));
    }
    for (label, words) in &table {
        if words.is_empty() || words.iter().any(|w| w.is_empty()) {
            return Err(Error::InvalidSchema(format!(
                "{what} entry for {label:?} has empty words"
            )));
        }
        if words.iter().any(|w| w.contains(separator)) {
            return Err(Error::InvalidSchema(format!(
                "{what} entry for {label:?} contains the separator"
            )));
        }
    }
    Ok(table)
}
