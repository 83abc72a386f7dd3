use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::marker::PhantomData;
use std::path::Path;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use super::{DialogueLabel, DialogueLog, KnowledgeBase, KnowledgeKey, KnowledgeSnippet, Turn};
use crate::error::{Error, Result};

/// JSON object that keeps every entry in file order, duplicates included.
struct Entries<V>(Vec<(String, V)>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for Entries<V> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor<V>(PhantomData<V>);

        impl<'de, V: Deserialize<'de>> Visitor<'de> for EntriesVisitor<V> {
            type Value = Entries<V>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, V>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }

        deserializer.deserialize_map(EntriesVisitor(PhantomData))
    }
}

#[derive(Deserialize)]
struct EntityIn {
    #[serde(default)]
    name: Option<String>,
    docs: Entries<DocIn>,
}

#[derive(Deserialize)]
struct DocIn {
    title: String,
    body: String,
}

#[derive(Serialize)]
struct EntityOut<'a> {
    name: Option<&'a str>,
    docs: BTreeMap<&'a str, DocOut<'a>>,
}

#[derive(Serialize)]
struct DocOut<'a> {
    title: &'a str,
    body: &'a str,
}

/// Identifiers may be JSON strings or integers; both become strings.
pub(crate) fn id_string<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Str(String),
        Int(i64),
    }
    Ok(match Id::deserialize(d)? {
        Id::Str(s) => s,
        Id::Int(i) => i.to_string(),
    })
}

#[derive(Deserialize)]
struct KeyIn {
    domain: String,
    #[serde(deserialize_with = "id_string")]
    entity_id: String,
    #[serde(deserialize_with = "id_string")]
    doc_id: String,
}

#[derive(Deserialize)]
struct LabelIn {
    target: bool,
    #[serde(default)]
    knowledge: Option<Vec<KeyIn>>,
    #[serde(default)]
    response: Option<String>,
}

#[derive(Serialize)]
struct LabelOut<'a> {
    target: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    knowledge: Option<[&'a KnowledgeKey; 1]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a str>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_knowledge_base(text: &str, origin: &Path) -> Result<KnowledgeBase> {
    let raw: Entries<Entries<EntityIn>> =
        serde_json::from_str(text).map_err(|e| Error::parse(origin, &e))?;
    let mut seen = std::collections::HashSet::new();
    let mut snippets = Vec::new();
    for (domain, entities) in raw.0 {
        for (entity_id, entity) in entities.0 {
            // The challenge files name domain-wide entities "*".
            let entity_name = entity.name.filter(|n| n != "*" && !n.is_empty());
            for (doc_id, doc) in entity.docs.0 {
                let key = KnowledgeKey::new(&domain, &entity_id, &doc_id);
                if !seen.insert(key.clone()) {
                    return Err(Error::DuplicateSnippet(key));
                }
                snippets.push(KnowledgeSnippet {
                    domain: domain.clone(),
                    entity_id: entity_id.clone(),
                    entity_name: entity_name.clone(),
                    doc_id,
                    question: doc.title,
                    answer: doc.body,
                });
            }
        }
    }
    KnowledgeBase::new(snippets)
}

pub fn load_knowledge_base(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    parse_knowledge_base(&read(path)?, path)
}

pub fn parse_logs(
    logs_text: &str,
    logs_origin: &Path,
    labels: Option<(&str, &Path)>,
) -> Result<Vec<DialogueLog>> {
    let turns: Vec<Vec<Turn>> =
        serde_json::from_str(logs_text).map_err(|e| Error::parse(logs_origin, &e))?;
    let labels: Option<Vec<LabelIn>> = labels
        .map(|(text, origin)| serde_json::from_str(text).map_err(|e| Error::parse(origin, &e)))
        .transpose()?;

    if let Some(labels) = &labels {
        if labels.len() != turns.len() {
            return Err(Error::Alignment {
                logs: turns.len(),
                labels: labels.len(),
            });
        }
    }

    let mut labels = labels.map(Vec::into_iter);
    turns
        .into_iter()
        .map(|t| {
            let label = labels.as_mut().and_then(Iterator::next).map(|l| DialogueLabel {
                target: l.target,
                knowledge: l
                    .knowledge
                    .and_then(|ks| ks.into_iter().next())
                    .map(|k| KnowledgeKey::new(&k.domain, &k.entity_id, &k.doc_id)),
                response: l.response,
            });
            DialogueLog::new(t, label)
        })
        .collect()
}

pub fn load_logs(
    path: impl AsRef<Path>,
    labels_path: Option<&Path>,
) -> Result<Vec<DialogueLog>> {
    let path = path.as_ref();
    let logs = read(path)?;
    let labels = labels_path.map(|p| read(p).map(|t| (t, p))).transpose()?;
    parse_logs(&logs, path, labels.as_ref().map(|(t, p)| (t.as_str(), *p)))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory serialization");
    s.push('\n');
    s
}

/// knowledge.json with sorted keys.
pub fn canonical_knowledge_json(kb: &KnowledgeBase) -> String {
    let mut out: BTreeMap<&str, BTreeMap<&str, EntityOut>> = BTreeMap::new();
    for s in kb.snippets() {
        out.entry(&s.domain)
            .or_default()
            .entry(&s.entity_id)
            .or_insert_with(|| EntityOut {
                name: s.entity_name.as_deref(),
                docs: BTreeMap::new(),
            })
            .docs
            .insert(
                &s.doc_id,
                DocOut {
                    title: &s.question,
                    body: &s.answer,
                },
            );
    }
    pretty(&out)
}

pub fn canonical_logs_json(dialogues: &[DialogueLog]) -> String {
    let turns: Vec<&Vec<Turn>> = dialogues.iter().map(|d| &d.turns).collect();
    pretty(&turns)
}

/// labels.json; dialogues without a label are written as `target: false`.
pub fn canonical_labels_json(dialogues: &[DialogueLog]) -> String {
    let labels: Vec<LabelOut> = dialogues
        .iter()
        .map(|d| match &d.label {
            Some(l) => LabelOut {
                target: l.target,
                knowledge: l.knowledge.as_ref().map(|k| [k]),
                response: l.response.as_deref(),
            },
            None => LabelOut {
                target: false,
                knowledge: None,
                response: None,
            },
        })
        .collect();
    pretty(&labels)
}

/// Writes knowledge.json, logs.json and labels.json into `dir`.
pub fn write_corpus(dir: &Path, kb: &KnowledgeBase, dialogues: &[DialogueLog]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in [
        ("knowledge.json", canonical_knowledge_json(kb)),
        ("logs.json", canonical_logs_json(dialogues)),
        ("labels.json", canonical_labels_json(dialogues)),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const KB: &str = r#"{
      "hotel": {"1": {"name": "Avalon Hotel", "docs": {
          "0": {"title": "Is parking free?", "body": "Yes, parking is free."},
          "1": {"title": "Do you allow pets?", "body": "Pets are not allowed."}}}},
      "taxi": {"*": {"name": null, "docs": {
          "0": {"title": "How do I pay?", "body": "Cash or card."}}}}
    }"#;

    fn origin() -> &'static Path {
        Path::new("knowledge.json")
    }

    #[test]
    fn loads_knowledge() {
        let kb = parse_knowledge_base(KB, origin()).unwrap();
        assert_eq!(kb.total(), 3);
        assert_eq!(kb.count_in_domain("hotel"), 2);
        let taxi = kb.get(&KnowledgeKey::new("taxi", "*", "0")).unwrap();
        assert_eq!(taxi.entity_name, None);
        assert_eq!(taxi.question, "How do I pay?");
    }

    #[test]
    fn duplicate_doc_is_integrity_error() {
        let text = r#"{"hotel": {"1": {"name": "A", "docs": {
            "0": {"title": "q", "body": "a"}, "0": {"title": "q2", "body": "a2"}}}}}"#;
        let err = parse_knowledge_base(text, origin()).unwrap_err();
        assert!(matches!(err, Error::DuplicateSnippet(k) if k == KnowledgeKey::new("hotel", "1", "0")));
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = parse_knowledge_base("{\n  \"hotel\": [\n", origin()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert!(line >= 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn knowledge_round_trip_is_canonical() {
        let kb = parse_knowledge_base(KB, origin()).unwrap();
        let canon = canonical_knowledge_json(&kb);
        let again = parse_knowledge_base(&canon, origin()).unwrap();
        assert_eq!(kb, again);
        assert_eq!(canon, canonical_knowledge_json(&again));
    }

    #[test]
    fn logs_with_labels() {
        let logs = r#"[[{"speaker":"U","text":"a"}],
                       [{"speaker":"U","text":"b"},{"speaker":"S","text":"c"},{"speaker":"U","text":"d"}],
                       [{"speaker":"U","text":"e"}]]"#;
        let labels = r#"[{"target": false},
                         {"target": true, "knowledge": [{"domain":"hotel","entity_id":1,"doc_id":0}], "response": "r"},
                         {"target": false}]"#;
        let out = parse_logs(logs, Path::new("logs.json"), Some((labels, Path::new("labels.json")))).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].gold_knowledge(), Some(&KnowledgeKey::new("hotel", "1", "0")));
        assert_eq!(out[1].gold_response(), Some("r"));

        let again = parse_logs(
            &canonical_logs_json(&out),
            Path::new("logs.json"),
            Some((&canonical_labels_json(&out), Path::new("labels.json"))),
        )
        .unwrap();
        assert_eq!(again, out);

        let two = r#"[{"target": false}, {"target": false}]"#;
        let err = parse_logs(logs, Path::new("logs.json"), Some((two, Path::new("labels.json")))).unwrap_err();
        assert!(matches!(err, Error::Alignment { logs: 3, labels: 2 }));
    }

    #[test]
    fn files_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let kb = parse_knowledge_base(KB, origin()).unwrap();
        let logs = vec![DialogueLog::new(vec![Turn::user("hello")], Some(DialogueLabel::negative())).unwrap()];
        write_corpus(dir.path(), &kb, &logs).unwrap();
        assert_eq!(load_knowledge_base(dir.path().join("knowledge.json")).unwrap(), kb);
        let labels = dir.path().join("labels.json");
        assert_eq!(load_logs(dir.path().join("logs.json"), Some(&labels)).unwrap(), logs);
        assert!(matches!(load_knowledge_base(dir.path().join("missing.json")), Err(Error::Io { .. })));
    }
}
