//! Annotated corpora in sentence-level JSON-lines form, plus the label
//! vocabularies for entity and relation types.
//!
//! One sentence per line:
//!
//! ```text
//! {"id": "s1", "tokens": ["John", "lives", "in", "Ohio"],
//!  "entities": [{"start": 0, "end": 0, "type": "Per"}, {"start": 3, "end": 3, "type": "Loc"}],
//!  "relations": [{"head": 0, "tail": 1, "type": "Live"}]}
//! ```
//!
//! `end` is inclusive. `head`/`tail` index the `entities` array. Entities may
//! carry an optional `head_start`/`head_end` head region.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polarity label of negative spans. Never a member of the entity vocabulary.
pub const NOT_ENTITY: &str = "Not-Entity";
/// Polarity label of negative span pairs. Never a member of the relation vocabulary.
pub const NOT_RELATION: &str = "Not-Relation";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    #[serde(rename = "type")]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_end: Option<usize>,
}

impl EntityMention {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        EntityMention {
            start,
            end,
            label: label.into(),
            head_start: None,
            head_end: None,
        }
    }

    pub fn with_head(mut self, head_start: usize, head_end: usize) -> Self {
        self.head_start = Some(head_start);
        self.head_end = Some(head_end);
        self
    }

    /// Head region if both bounds are present.
    pub fn head(&self) -> Option<(usize, usize)> {
        match (self.head_start, self.head_end) {
            (Some(s), Some(e)) => Some((s, e)),
            _ => None,
        }
    }

    pub fn width(&self) -> usize {
        self.end + 1 - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationMention {
    pub head: usize,
    pub tail: usize,
    #[serde(rename = "type")]
    pub label: String,
}

impl RelationMention {
    pub fn new(head: usize, tail: usize, label: impl Into<String>) -> Self {
        RelationMention {
            head,
            tail,
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub entities: Vec<EntityMention>,
    #[serde(default)]
    pub relations: Vec<RelationMention>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks span bounds and relation endpoints. Labels are checked by
    /// [`LabelVocab`].
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Validation {
            id: self.id.clone(),
            message,
        };
        let n = self.tokens.len();
        if n == 0 {
            return Err(fail("empty token sequence".into()));
        }
        for (i, e) in self.entities.iter().enumerate() {
            if e.start > e.end {
                return Err(fail(format!(
                    "entity {i}: inverted span start={} end={}",
                    e.start, e.end
                )));
            }
            if e.end >= n {
                return Err(fail(format!(
                    "entity {i}: span [{}, {}] outside sentence of {n} tokens",
                    e.start, e.end
                )));
            }
            match (e.head_start, e.head_end) {
                (None, None) => {}
                (Some(hs), Some(he)) => {
                    if !(e.start <= hs && hs <= he && he <= e.end) {
                        return Err(fail(format!(
                            "entity {i}: head region [{hs}, {he}] not inside span [{}, {}]",
                            e.start, e.end
                        )));
                    }
                }
                _ => {
                    return Err(fail(format!(
                        "entity {i}: head_start and head_end must be given together"
                    )))
                }
            }
        }
        let m = self.entities.len();
        for (i, r) in self.relations.iter().enumerate() {
            if r.head >= m || r.tail >= m {
                return Err(fail(format!(
                    "relation {i}: endpoint ({}, {}) outside {m} entities",
                    r.head, r.tail
                )));
            }
            if r.head == r.tail {
                return Err(fail(format!("relation {i}: head equals tail ({})", r.head)));
            }
        }
        Ok(())
    }
}

/// Ordered entity and relation label sets with dense 0-based ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelVocab {
    entity_types: Vec<String>,
    relation_types: Vec<String>,
    entity_ids: HashMap<String, usize>,
    relation_ids: HashMap<String, usize>,
}

impl LabelVocab {
    pub fn new<E, R>(entity_types: E, relation_types: R) -> Result<Self>
    where
        E: IntoIterator,
        E::Item: Into<String>,
        R: IntoIterator,
        R::Item: Into<String>,
    {
        let mut vocab = LabelVocab::default();
        for label in entity_types {
            let label = label.into();
            if vocab.entity_id(&label).is_some() {
                return Err(Error::Config(format!("duplicate entity label `{label}`")));
            }
            vocab.push_entity(label)?;
        }
        for label in relation_types {
            let label = label.into();
            if vocab.relation_id(&label).is_some() {
                return Err(Error::Config(format!("duplicate relation label `{label}`")));
            }
            vocab.push_relation(label)?;
        }
        Ok(vocab)
    }

    fn push_entity(&mut self, label: String) -> Result<usize> {
        if label == NOT_ENTITY {
            return Err(Error::Config(format!("`{NOT_ENTITY}` is reserved")));
        }
        if let Some(&id) = self.entity_ids.get(&label) {
            return Ok(id);
        }
        let id = self.entity_types.len();
        self.entity_ids.insert(label.clone(), id);
        self.entity_types.push(label);
        Ok(id)
    }

    fn push_relation(&mut self, label: String) -> Result<usize> {
        if label == NOT_RELATION {
            return Err(Error::Config(format!("`{NOT_RELATION}` is reserved")));
        }
        if let Some(&id) = self.relation_ids.get(&label) {
            return Ok(id);
        }
        let id = self.relation_types.len();
        self.relation_ids.insert(label.clone(), id);
        self.relation_types.push(label);
        Ok(id)
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn relation_types(&self) -> &[String] {
        &self.relation_types
    }

    pub fn num_entity_types(&self) -> usize {
        self.entity_types.len()
    }

    pub fn num_relation_types(&self) -> usize {
        self.relation_types.len()
    }

    pub fn entity_id(&self, label: &str) -> Option<usize> {
        self.entity_ids.get(label).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<usize> {
        self.relation_ids.get(label).copied()
    }

    pub fn entity_label(&self, id: usize) -> Option<&str> {
        self.entity_types.get(id).map(String::as_str)
    }

    pub fn relation_label(&self, id: usize) -> Option<&str> {
        self.relation_types.get(id).map(String::as_str)
    }

    /// Builds a vocabulary from the labels in `sentences`, in first-seen order.
    pub fn from_sentences(sentences: &[Sentence]) -> Result<Self> {
        let mut vocab = LabelVocab::default();
        for s in sentences {
            vocab.absorb(s)?;
        }
        Ok(vocab)
    }

    fn absorb(&mut self, s: &Sentence) -> Result<()> {
        for e in &s.entities {
            self.push_entity(e.label.clone()).map_err(|_| Error::Validation {
                id: s.id.clone(),
                message: format!("entity label `{}` is reserved", e.label),
            })?;
        }
        for r in &s.relations {
            self.push_relation(r.label.clone()).map_err(|_| Error::Validation {
                id: s.id.clone(),
                message: format!("relation label `{}` is reserved", r.label),
            })?;
        }
        Ok(())
    }

    /// Fails with [`Error::Vocab`] on the first label not in this vocabulary.
    pub fn check(&self, s: &Sentence) -> Result<()> {
        for e in &s.entities {
            if self.entity_id(&e.label).is_none() {
                return Err(Error::Vocab {
                    id: s.id.clone(),
                    kind: "entity",
                    label: e.label.clone(),
                });
            }
        }
        for r in &s.relations {
            if self.relation_id(&r.label).is_none() {
                return Err(Error::Vocab {
                    id: s.id.clone(),
                    kind: "relation",
                    label: r.label.clone(),
                });
            }
        }
        Ok(())
    }

    /// Sidecar format: entity labels one per line, a blank line, then
    /// relation labels one per line.
    pub fn to_sidecar(&self) -> String {
        let mut out = String::new();
        for l in &self.entity_types {
            out.push_str(l);
            out.push('\n');
        }
        out.push('\n');
        for l in &self.relation_types {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    pub fn from_sidecar(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim_end);
        let mut entities = Vec::new();
        for line in lines.by_ref() {
            if line.is_empty() {
                break;
            }
            entities.push(line.to_string());
        }
        let relations: Vec<String> = lines
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        LabelVocab::new(entities, relations)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_sidecar(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_sidecar()).map_err(|e| Error::io(path, e))
    }
}

/// Parses one JSON-lines record. With `strict`, the `entities` and
/// `relations` keys must be present.
pub fn parse_sentence(line: &str, line_no: usize, strict: bool) -> Result<Sentence> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        id: "<unknown>".into(),
        message: e.to_string(),
    })?;
    let id = value
        .get("id")
        .and_then(|v| v.as_str())
        .unwrap_or("<unknown>")
        .to_string();
    if strict {
        for key in ["id", "tokens", "entities", "relations"] {
            if value.get(key).is_none() {
                return Err(Error::Parse {
                    line: line_no,
                    id,
                    message: format!("missing field `{key}`"),
                });
            }
        }
    }
    let sentence: Sentence = serde_json::from_value(value).map_err(|e| Error::Parse {
        line: line_no,
        id: id.clone(),
        message: e.to_string(),
    })?;
    sentence.validate()?;
    Ok(sentence)
}

/// Parses a JSON-lines corpus. With a supplied vocabulary, every label must be
/// in it; otherwise the vocabulary is built from the data.
pub fn parse_corpus(text: &str, vocab: Option<&LabelVocab>) -> Result<(Vec<Sentence>, LabelVocab)> {
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        sentences.push(parse_sentence(line, i + 1, true)?);
    }
    let vocab = match vocab {
        Some(v) => {
            for s in &sentences {
                v.check(s)?;
            }
            v.clone()
        }
        None => LabelVocab::from_sentences(&sentences)?,
    };
    Ok((sentences, vocab))
}

pub fn load_corpus(
    path: impl AsRef<Path>,
    vocab: Option<&LabelVocab>,
) -> Result<(Vec<Sentence>, LabelVocab)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, vocab)
}

pub fn to_jsonl(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&serde_json::to_string(s).expect("sentence serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(sentences)).map_err(|e| Error::io(path, e))
}

/// Per-label annotation counts, in vocabulary order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub entities: Vec<(String, u64)>,
    pub relations: Vec<(String, u64)>,
}

impl LabelCounts {
    pub fn entity(&self, label: &str) -> u64 {
        lookup(&self.entities, label)
    }

    pub fn relation(&self, label: &str) -> u64 {
        lookup(&self.relations, label)
    }

    pub fn total_entities(&self) -> u64 {
        self.entities.iter().map(|(_, c)| c).sum()
    }

    pub fn total_relations(&self) -> u64 {
        self.relations.iter().map(|(_, c)| c).sum()
    }

    /// Appends (or adds to) a count, e.g. for sampled negatives.
    pub fn add_entity(&mut self, label: &str, count: u64) {
        bump(&mut self.entities, label, count);
    }

    pub fn add_relation(&mut self, label: &str, count: u64) {
        bump(&mut self.relations, label, count);
    }
}

fn lookup(rows: &[(String, u64)], label: &str) -> u64 {
    rows.iter().find(|(l, _)| l == label).map_or(0, |(_, c)| *c)
}

fn bump(rows: &mut Vec<(String, u64)>, label: &str, count: u64) {
    match rows.iter_mut().find(|(l, _)| l == label) {
        Some((_, c)) => *c += count,
        None => rows.push((label.to_string(), count)),
    }
}

/// Counts gold annotations per label. Labels of `vocab` with no annotations
/// are reported as 0.
pub fn corpus_split_counts(sentences: &[Sentence], vocab: &LabelVocab) -> LabelCounts {
    let mut counts = LabelCounts {
        entities: vocab.entity_types().iter().map(|l| (l.clone(), 0)).collect(),
        relations: vocab.relation_types().iter().map(|l| (l.clone(), 0)).collect(),
    };
    for s in sentences {
        for e in &s.entities {
            counts.add_entity(&e.label, 1);
        }
        for r in &s.relations {
            counts.add_relation(&r.label, 1);
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"{"id":"s1","tokens":["John","Smith","lives","in","Ohio"],"entities":[{"start":0,"end":1,"type":"Per"},{"start":4,"end":4,"type":"Loc"}],"relations":[{"head":0,"tail":1,"type":"Live"}]}"#;

    #[test]
    fn loads_single_sentence() {
        let (sents, vocab) = parse_corpus(ONE, None).unwrap();
        assert_eq!(sents.len(), 1);
        assert_eq!(sents[0].len(), 5);
        assert_eq!(sents[0].entities.len(), 2);
        assert_eq!(sents[0].relations.len(), 1);
        assert_eq!(vocab.entity_types(), ["Per", "Loc"]);
        assert_eq!(vocab.relation_types(), ["Live"]);
    }

    #[test]
    fn conll04_style_labels() {
        let text = r#"{"id":"a","tokens":["a","b","c","d"],"entities":[{"start":0,"end":0,"type":"Loc"},{"start":1,"end":1,"type":"Org"},{"start":2,"end":2,"type":"Per"},{"start":3,"end":3,"type":"Other"}],"relations":[{"head":2,"tail":1,"type":"Kill"},{"head":2,"tail":0,"type":"Live"},{"head":0,"tail":3,"type":"LocIn"},{"head":1,"tail":0,"type":"OrgBI"},{"head":2,"tail":1,"type":"Work"}]}"#;
        let (_, vocab) = parse_corpus(text, None).unwrap();
        assert_eq!(vocab.entity_types(), ["Loc", "Org", "Per", "Other"]);
        assert_eq!(vocab.relation_types(), ["Kill", "Live", "LocIn", "OrgBI", "Work"]);
        assert_eq!(vocab.entity_id("Per"), Some(2));
    }

    #[test]
    fn self_relation_is_rejected() {
        let text = r#"{"id":"a","tokens":["a","b"],"entities":[{"start":0,"end":0,"type":"Per"}],"relations":[{"head":0,"tail":0,"type":"Kill"}]}"#;
        assert!(matches!(parse_corpus(text, None), Err(Error::Validation { .. })));
    }

    #[test]
    fn inverted_span_is_rejected() {
        let text = r#"{"id":"bad","tokens":["a","b","c","d","e","f"],"entities":[{"start":5,"end":3,"type":"X"}],"relations":[]}"#;
        match parse_corpus(text, None) {
            Err(Error::Validation { id, message }) => {
                assert_eq!(id, "bad");
                assert!(message.contains("inverted"));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_span_is_rejected() {
        let text = r#"{"id":"bad","tokens":["a"],"entities":[{"start":0,"end":1,"type":"X"}],"relations":[]}"#;
        assert!(matches!(parse_corpus(text, None), Err(Error::Validation { .. })));
    }

    #[test]
    fn schema_violation_names_sentence_and_field() {
        let text = r#"{"id":"s9","tokens":["a"],"entities":[{"start":0,"type":"X"}],"relations":[]}"#;
        match parse_corpus(text, None) {
            Err(Error::Parse { id, message, line }) => {
                assert_eq!(id, "s9");
                assert_eq!(line, 1);
                assert!(message.contains("end"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let missing = r#"{"id":"s2","tokens":["a"],"entities":[]}"#;
        match parse_corpus(missing, None) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("relations")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_with_fixed_vocab() {
        let vocab = LabelVocab::new(["Per"], ["Live"]).unwrap();
        match parse_corpus(ONE, Some(&vocab)) {
            Err(Error::Vocab { kind, label, .. }) => {
                assert_eq!(kind, "entity");
                assert_eq!(label, "Loc");
            }
            other => panic!("expected vocab error, got {other:?}"),
        }
    }

    #[test]
    fn head_region_must_nest() {
        let text = r#"{"id":"h","tokens":["a","b","c"],"entities":[{"start":0,"end":1,"type":"X","head_start":1,"head_end":2}],"relations":[]}"#;
        assert!(parse_corpus(text, None).is_err());
        let text = r#"{"id":"h","tokens":["a","b","c"],"entities":[{"start":0,"end":2,"type":"X","head_start":1,"head_end":1}],"relations":[]}"#;
        let (s, _) = parse_corpus(text, None).unwrap();
        assert_eq!(s[0].entities[0].head(), Some((1, 1)));
    }

    #[test]
    fn reserved_labels_are_not_vocab_members() {
        assert!(LabelVocab::new([NOT_ENTITY], Vec::<String>::new()).is_err());
        assert!(LabelVocab::new(Vec::<String>::new(), [NOT_RELATION]).is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let vocab = LabelVocab::new(["Loc", "Org", "Per", "Other"], ["Kill", "Live"]).unwrap();
        let text = vocab.to_sidecar();
        assert_eq!(text, "Loc\nOrg\nPer\nOther\n\nKill\nLive\n");
        assert_eq!(LabelVocab::from_sidecar(&text).unwrap(), vocab);
    }

    #[test]
    fn counts_empty_corpus() {
        let vocab = LabelVocab::new(["A", "B"], ["R"]).unwrap();
        let counts = corpus_split_counts(&[], &vocab);
        assert_eq!(counts.total_entities(), 0);
        assert_eq!(counts.entity("A"), 0);
        assert_eq!(counts.relation("R"), 0);
    }

    #[test]
    fn counts_match_hand_enumeration() {
        let text = [
            r#"{"id":"1","tokens":["a","b","c"],"entities":[{"start":0,"end":0,"type":"A"},{"start":2,"end":2,"type":"B"}],"relations":[{"head":0,"tail":1,"type":"R"}]}"#,
            r#"{"id":"2","tokens":["a","b"],"entities":[{"start":0,"end":1,"type":"A"}],"relations":[]}"#,
            r#"{"id":"3","tokens":["a","b","c","d"],"entities":[{"start":0,"end":0,"type":"B"},{"start":1,"end":1,"type":"B"},{"start":3,"end":3,"type":"A"}],"relations":[{"head":0,"tail":1,"type":"S"},{"head":1,"tail":2,"type":"R"}]}"#,
        ]
        .join("\n");
        let (sents, vocab) = parse_corpus(&text, None).unwrap();
        let c = corpus_split_counts(&sents, &vocab);
        // A: s1, s2, s3 = 3; B: s1, s3 x2 = 3; R: 2; S: 1.
        assert_eq!(c.entity("A"), 3);
        assert_eq!(c.entity("B"), 3);
        assert_eq!(c.relation("R"), 2);
        assert_eq!(c.relation("S"), 1);
        assert_eq!(c.total_entities(), 6);
        assert_eq!(c.total_relations(), 3);
    }
}
