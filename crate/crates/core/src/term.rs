//! Terms, term collections, specification sets and their file formats.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single metadata string, optionally with a definition and a ground-truth label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub id: String,
    #[serde(rename = "term")]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub definition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Term {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let term = Term {
            id: id.into(),
            text: text.into(),
            definition: None,
            label: None,
        };
        term.validate()?;
        Ok(term)
    }

    pub fn with_definition(mut self, definition: impl Into<String>) -> Self {
        self.definition = Some(definition.into());
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::validation(format!(
                "term {:?} has empty text",
                self.id
            )));
        }
        Ok(())
    }

    /// Definition, treating an empty or whitespace-only string as absent.
    pub fn definition(&self) -> Option<&str> {
        self.definition
            .as_deref()
            .map(str::trim)
            .filter(|d| !d.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    Csv,
    Json,
    PlainLines,
}

impl InputFormat {
    /// Guess from a file extension: `.csv`, `.json`, anything else is plain lines.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("csv") => InputFormat::Csv,
            Some("json") => InputFormat::Json,
            _ => InputFormat::PlainLines,
        }
    }
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(InputFormat::Csv),
            "json" => Ok(InputFormat::Json),
            "plain" | "plain-lines" | "txt" => Ok(InputFormat::PlainLines),
            other => Err(Error::validation(format!("unknown input format {other:?}"))),
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputFormat::Csv => "csv",
            InputFormat::Json => "json",
            InputFormat::PlainLines => "plain-lines",
        })
    }
}

/// An ordered, non-empty list of terms with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermCollection {
    terms: Vec<Term>,
}

impl TermCollection {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut seen = HashSet::with_capacity(terms.len());
        for (i, term) in terms.iter().enumerate() {
            term.validate()?;
            if !seen.insert(term.id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate term id {:?} at record {}",
                    term.id,
                    i + 1
                )));
            }
        }
        Ok(TermCollection { terms })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Term> {
        self.terms.iter()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn into_terms(self) -> Vec<Term> {
        self.terms
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.terms)?)
    }
}

impl<'a> IntoIterator for &'a TermCollection {
    type Item = &'a Term;
    type IntoIter = std::slice::Iter<'a, Term>;

    fn into_iter(self) -> Self::IntoIter {
        self.terms.iter()
    }
}

/// The permissible vocabulary a metadata value is checked against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecificationSet {
    pub name: String,
    terms: Vec<Term>,
}

fn fold(text: &str) -> String {
    text.trim().to_lowercase()
}

impl SpecificationSet {
    pub fn new(name: impl Into<String>, terms: Vec<Term>) -> Result<Self> {
        let collection = TermCollection::new(terms)?;
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, term) in collection.iter().enumerate() {
            if let Some(prev) = seen.insert(fold(&term.text), i) {
                return Err(Error::validation(format!(
                    "duplicate specification term: record {} {:?} and record {} {:?} differ only by case or whitespace",
                    prev + 1,
                    collection.terms[prev].text,
                    i + 1,
                    term.text
                )));
            }
        }
        Ok(SpecificationSet {
            name: name.into(),
            terms: collection.into_terms(),
        })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.id == id)
    }

    /// Finds a term by id, then by exact trimmed text, then by case-folded text.
    pub fn resolve(&self, key: &str) -> Option<&Term> {
        let key = key.trim();
        self.get(key)
            .or_else(|| self.terms.iter().find(|t| t.text.trim() == key))
            .or_else(|| {
                let folded = fold(key);
                self.terms.iter().find(|t| fold(&t.text) == folded)
            })
    }

    pub fn as_collection(&self) -> TermCollection {
        TermCollection {
            terms: self.terms.clone(),
        }
    }
}

/// Expected outcome per term id: a specification term id for compliance, or a
/// group label for clustering.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    expected: BTreeMap<String, String>,
}

impl GroundTruth {
    pub fn new(expected: BTreeMap<String, String>) -> Self {
        GroundTruth { expected }
    }

    pub fn insert(&mut self, id: impl Into<String>, expected: impl Into<String>) {
        self.expected.insert(id.into(), expected.into());
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.expected.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.expected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expected.is_empty()
    }

    /// Group labels taken from the terms themselves; `None` unless every term
    /// carries a label.
    pub fn from_labels(terms: &TermCollection) -> Option<Self> {
        let mut expected = BTreeMap::new();
        for term in terms {
            let label = term.label.as_deref()?.trim();
            if label.is_empty() {
                return None;
            }
            expected.insert(term.id.clone(), label.to_string());
        }
        Some(GroundTruth { expected })
    }

    /// Maps each query's label (a specification term id or text) onto the
    /// specification term id it names.
    pub fn for_compliance(queries: &TermCollection, spec: &SpecificationSet) -> Result<Self> {
        let mut expected = BTreeMap::new();
        for query in queries {
            let label = query.label.as_deref().ok_or_else(|| {
                Error::validation(format!("query {:?} has no expected label", query.id))
            })?;
            let target = spec.resolve(label).ok_or_else(|| {
                Error::validation(format!(
                    "query {:?} expects {:?}, which is not in specification {:?}",
                    query.id, label, spec.name
                ))
            })?;
            expected.insert(query.id.clone(), target.id.clone());
        }
        Ok(GroundTruth { expected })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    #[serde(default)]
    id: Option<String>,
    term: String,
    #[serde(default)]
    definition: Option<String>,
    #[serde(default)]
    label: Option<String>,
}

fn parse_json(content: &str) -> Result<Vec<Term>> {
    let records: Vec<JsonRecord> = serde_json::from_str(content).map_err(|e| Error::Parse {
        record: 0,
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.term.trim().is_empty() {
                return Err(Error::Parse {
                    record: i + 1,
                    line: 0,
                    message: "empty term text".into(),
                });
            }
            Ok(Term {
                id: r.id.unwrap_or_else(|| i.to_string()),
                text: r.term,
                definition: r.definition,
                label: r.label,
            })
        })
        .collect()
}

fn parse_plain(content: &str) -> Vec<Term> {
    content
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| Term {
            id: i.to_string(),
            text: l.to_string(),
            definition: None,
            label: None,
        })
        .collect()
}

#[derive(Default)]
struct CsvColumns {
    id: Option<usize>,
    term: Option<usize>,
    definition: Option<usize>,
    label: Option<usize>,
}

fn parse_csv(content: &str) -> Result<Vec<Term>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(content.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse {
        record: 0,
        line: 1,
        message: e.to_string(),
    })?;
    let mut cols = CsvColumns::default();
    for (i, h) in headers.iter().enumerate() {
        match h.trim().to_ascii_lowercase().as_str() {
            "id" => cols.id = Some(i),
            "term" | "query" => cols.term = Some(i),
            "definition" => cols.definition = Some(i),
            "label" | "expected" => cols.label = Some(i),
            _ => {}
        }
    }
    let term_col = cols.term.ok_or_else(|| Error::Parse {
        record: 0,
        line: 1,
        message: "header has no `term` column".into(),
    })?;

    let mut terms = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let record_no = i + 1;
        let row = row.map_err(|e| Error::Parse {
            record: record_no,
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |c: Option<usize>| {
            c.and_then(|c| row.get(c))
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        let text = match row.get(term_col) {
            Some(t) if !t.trim().is_empty() => t.to_string(),
            _ => {
                return Err(Error::Parse {
                    record: record_no,
                    line,
                    message: "missing or empty term field".into(),
                })
            }
        };
        terms.push(Term {
            id: field(cols.id).unwrap_or_else(|| i.to_string()),
            text,
            definition: field(cols.definition),
            label: field(cols.label),
        });
    }
    Ok(terms)
}

fn parse_records(bytes: &[u8], format: InputFormat) -> Result<Vec<Term>> {
    let content = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        record: 0,
        line: 0,
        message: format!("invalid UTF-8: {e}"),
    })?;
    let content = content.strip_prefix('\u{feff}').unwrap_or(content);
    if content.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let terms = match format {
        InputFormat::Csv => parse_csv(content)?,
        InputFormat::Json => parse_json(content)?,
        InputFormat::PlainLines => parse_plain(content),
    };
    if terms.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(terms)
}

/// Parses a term file. Ids missing from the input become the zero-based record
/// index.
pub fn parse_terms(bytes: &[u8], format: InputFormat) -> Result<TermCollection> {
    TermCollection::new(parse_records(bytes, format)?)
}

/// Parses a specification file, rejecting texts that collide after trimming and
/// case-folding.
pub fn parse_specification(bytes: &[u8], format: InputFormat) -> Result<SpecificationSet> {
    SpecificationSet::new("specification", parse_records(bytes, format)?)
}
