//! One-document-per-line JSON tree format.
//!
//! ```text
//! {"doc_id": "d1", "label": 1, "root": NODE}
//! NODE = {"relation": "Elaboration", "hierarchy": "nucleus", "children": [NODE, ...]}
//!      | {"hierarchy": "satellite", "text": "...", "features": [..]}
//! ```
//!
//! `hierarchy` is absent on the root, `features` is optional, and an optional
//! integer `id` may tag any node; tagged ids must be unique within a tree.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DiscourseTree, HierarchyType, NodeId, NodeSpec, RelationType};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hierarchy: Option<HierarchyType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    children: Option<Vec<NodeRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeRecord {
    doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    root: NodeRecord,
}

struct Converter<'a> {
    doc_id: &'a str,
    position: usize,
    seen_ids: HashSet<u64>,
}

impl Converter<'_> {
    fn err(&self, node: String, message: impl Into<String>) -> Error {
        Error::Parse {
            doc_id: self.doc_id.to_string(),
            node,
            message: message.into(),
        }
    }

    fn convert(&mut self, record: NodeRecord) -> Result<NodeSpec> {
        let name = match record.id {
            Some(id) => id.to_string(),
            None => format!("#{}", self.position),
        };
        self.position += 1;
        if let Some(id) = record.id {
            if !self.seen_ids.insert(id) {
                return Err(self.err(name, "duplicate node id"));
            }
        }
        let children = record.children.unwrap_or_default();
        if children.is_empty() {
            if let Some(rel) = &record.relation {
                let parsed: RelationType = rel.parse().map_err(|e| self.err(name.clone(), format!("{e}")))?;
                if !parsed.is_leaf_unit() {
                    return Err(self.err(name, format!("leaf carries relation {rel:?}")));
                }
            }
            let has_text = record.text.as_deref().is_some_and(|t| !t.is_empty());
            let has_features = record.features.as_ref().is_some_and(|f| !f.is_empty());
            if !has_text && !has_features {
                return Err(self.err(name, "leaf has neither text nor features"));
            }
            return Ok(NodeSpec::Leaf {
                hierarchy: record.hierarchy,
                text: record.text,
                features: record.features,
            });
        }
        if record.text.is_some() {
            return Err(self.err(name, "inner node carries text"));
        }
        if record.features.is_some() {
            return Err(self.err(name, "inner node carries features"));
        }
        if children.len() == 1 {
            return Err(self.err(name, "inner node with a single child"));
        }
        let relation = match &record.relation {
            None => return Err(self.err(name, "inner node lacks a relation")),
            Some(rel) => rel
                .parse::<RelationType>()
                .map_err(|e| self.err(name.clone(), format!("{e}")))?,
        };
        if relation.is_leaf_unit() {
            return Err(self.err(name, "inner node carries the leaf-unit relation"));
        }
        let children = children
            .into_iter()
            .map(|c| self.convert(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(NodeSpec::Inner {
            relation,
            hierarchy: record.hierarchy,
            children,
        })
    }
}

/// Parses and validates one JSON tree record. Node ids are assigned in
/// preorder, so leaf order follows the document.
pub fn parse_tree(line: &str) -> Result<DiscourseTree> {
    let record: TreeRecord = serde_json::from_str(line).map_err(|e| Error::json("tree record", e))?;
    let mut conv = Converter {
        doc_id: &record.doc_id,
        position: 0,
        seen_ids: HashSet::new(),
    };
    let spec = conv.convert(record.root)?;
    let tree = DiscourseTree::from_spec(record.doc_id.clone(), record.label, spec)?;
    for node in tree.nucleus_warnings() {
        log::warn!("tree {}: relation at node {node} has no nucleus child", tree.doc_id);
    }
    Ok(tree)
}

fn to_record(tree: &DiscourseTree, id: NodeId) -> NodeRecord {
    let node = tree.node(id);
    if node.is_leaf() {
        NodeRecord {
            id: None,
            relation: None,
            hierarchy: node.hierarchy,
            children: None,
            text: node.text.clone(),
            features: node.features.clone(),
        }
    } else {
        NodeRecord {
            id: None,
            relation: Some(node.relation.name().to_string()),
            hierarchy: node.hierarchy,
            children: Some(node.children.iter().map(|c| to_record(tree, *c)).collect()),
            text: None,
            features: None,
        }
    }
}

/// Single-line JSON rendering of `tree`.
pub fn format_tree(tree: &DiscourseTree) -> String {
    let record = TreeRecord {
        doc_id: tree.doc_id.clone(),
        label: tree.label,
        root: to_record(tree, tree.root()),
    };
    serde_json::to_string(&record).expect("tree records always serialize")
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<DiscourseTree>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut trees = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tree = parse_tree(&line).map_err(|e| match e {
            Error::Json { source, .. } => Error::json(format!("{}:{}", path.display(), lineno + 1), source),
            other => other,
        })?;
        trees.push(tree);
    }
    Ok(trees)
}

pub fn write_corpus(path: impl AsRef<Path>, trees: &[DiscourseTree]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for tree in trees {
        writeln!(out, "{}", format_tree(tree)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
