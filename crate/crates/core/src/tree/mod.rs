//! RST discourse trees: data model, validation, traversal and corpus
//! statistics.
//!
//! A relation is stored on the parent node and names the relation among that
//! node's children. Every non-root node carries a nucleus/satellite label;
//! leaves carry [`RelationType::LeafUnit`] so that every node maps onto a
//! relation slice of the Discourse-LSTM tensors.

mod json;
mod relation;

pub use json::{format_tree, parse_tree, read_corpus, write_corpus};
pub use relation::{HierarchyType, RelationType, UnknownRelation, DISCOURSE_RELATION_COUNT, RELATION_COUNT};

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscourseNode {
    pub id: NodeId,
    pub relation: RelationType,
    /// Absent only on the root.
    pub hierarchy: Option<HierarchyType>,
    pub children: Vec<NodeId>,
    /// EDU text, leaves only.
    pub text: Option<String>,
    /// Leaf feature vector.
    pub features: Option<Vec<f64>>,
}

impl DiscourseNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Recursive description of a tree, used to build one without managing ids.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeSpec {
    Leaf {
        hierarchy: Option<HierarchyType>,
        text: Option<String>,
        features: Option<Vec<f64>>,
    },
    Inner {
        relation: RelationType,
        hierarchy: Option<HierarchyType>,
        children: Vec<NodeSpec>,
    },
}

impl NodeSpec {
    pub fn leaf(hierarchy: Option<HierarchyType>, text: &str) -> Self {
        NodeSpec::Leaf {
            hierarchy,
            text: Some(text.to_string()),
            features: None,
        }
    }

    pub fn featured(hierarchy: Option<HierarchyType>, text: &str, features: Vec<f64>) -> Self {
        NodeSpec::Leaf {
            hierarchy,
            text: Some(text.to_string()),
            features: Some(features),
        }
    }

    pub fn inner(relation: RelationType, hierarchy: Option<HierarchyType>, children: Vec<NodeSpec>) -> Self {
        NodeSpec::Inner {
            relation,
            hierarchy,
            children,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscourseTree {
    nodes: Vec<DiscourseNode>,
    root: NodeId,
    pub label: Option<usize>,
    pub doc_id: String,
}

impl DiscourseTree {
    /// Builds a tree from an id-indexed node store, enforcing every structural
    /// invariant: dense unique ids, a single root, no node reached twice, no
    /// unreachable nodes, leaf/inner attribute rules and hierarchy placement.
    pub fn from_nodes(
        doc_id: impl Into<String>,
        label: Option<usize>,
        nodes: Vec<DiscourseNode>,
        root: NodeId,
    ) -> Result<Self> {
        let doc_id = doc_id.into();
        let invalid = |node: usize, message: String| Error::Parse {
            doc_id: doc_id.clone(),
            node: node.to_string(),
            message,
        };
        if nodes.is_empty() {
            return Err(Error::InvalidTree {
                doc_id,
                message: "tree has no nodes".into(),
            });
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id.0 != i {
                return Err(invalid(
                    node.id.0,
                    format!("duplicate or out-of-place id (stored at position {i})"),
                ));
            }
        }
        if root.0 >= nodes.len() {
            return Err(invalid(root.0, "root id out of range".into()));
        }

        let mut parent: Vec<Option<usize>> = vec![None; nodes.len()];
        for node in &nodes {
            for child in &node.children {
                if child.0 >= nodes.len() {
                    return Err(invalid(node.id.0, format!("child {child} does not exist")));
                }
                if *child == root {
                    return Err(invalid(node.id.0, "root listed as a child (cycle)".into()));
                }
                if let Some(p) = parent[child.0] {
                    return Err(invalid(
                        child.0,
                        format!("listed as a child more than once (by {p} and {})", node.id),
                    ));
                }
                parent[child.0] = Some(node.id.0);
            }
        }

        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![root.0];
        while let Some(id) = stack.pop() {
            if seen[id] {
                return Err(invalid(id, "cycle detected".into()));
            }
            seen[id] = true;
            stack.extend(nodes[id].children.iter().map(|c| c.0));
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(invalid(orphan, "not reachable from the root".into()));
        }

        let mut feature_dim = None;
        for node in &nodes {
            let id = node.id.0;
            let is_root = node.id == root;
            match (is_root, node.hierarchy) {
                (true, Some(_)) => return Err(invalid(id, "root must not carry a hierarchy label".into())),
                (false, None) => return Err(invalid(id, "non-root node lacks a hierarchy label".into())),
                _ => {}
            }
            if node.is_leaf() {
                if node.relation != RelationType::LeafUnit {
                    return Err(invalid(id, "leaf must carry the leaf-unit relation".into()));
                }
                let has_text = node.text.as_deref().is_some_and(|t| !t.is_empty());
                let has_features = node.features.as_ref().is_some_and(|f| !f.is_empty());
                if !has_text && !has_features {
                    return Err(invalid(id, "leaf has neither text nor features".into()));
                }
                if let Some(f) = &node.features {
                    if f.iter().any(|v| !v.is_finite()) {
                        return Err(invalid(id, "non-finite leaf feature".into()));
                    }
                    match feature_dim {
                        None => feature_dim = Some(f.len()),
                        Some(d) if d != f.len() => {
                            return Err(invalid(id, format!("feature dimension {} differs from {d}", f.len())))
                        }
                        _ => {}
                    }
                }
            } else {
                if node.children.len() < 2 {
                    return Err(invalid(id, "inner node with a single child".into()));
                }
                if node.relation == RelationType::LeafUnit {
                    return Err(invalid(id, "inner node carries the leaf-unit relation".into()));
                }
                if node.text.is_some() {
                    return Err(invalid(id, "inner node carries text".into()));
                }
                if node.features.is_some() {
                    return Err(invalid(id, "inner node carries features".into()));
                }
            }
        }

        Ok(DiscourseTree {
            nodes,
            root,
            label,
            doc_id,
        })
    }

    /// Builds a tree from a nested description, numbering nodes in preorder.
    pub fn from_spec(doc_id: impl Into<String>, label: Option<usize>, spec: NodeSpec) -> Result<Self> {
        let mut nodes = Vec::new();
        push_spec(&mut nodes, spec);
        DiscourseTree::from_nodes(doc_id, label, nodes, NodeId(0))
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn nodes(&self) -> &[DiscourseNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &DiscourseNode {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn into_nodes(self) -> Vec<DiscourseNode> {
        self.nodes
    }

    /// Node ids with every child before its parent and siblings left to right.
    pub fn postorder(&self) -> Vec<NodeId> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        while let Some((id, expanded)) = stack.pop() {
            if expanded {
                order.push(id);
            } else {
                stack.push((id, true));
                for child in self.nodes[id.0].children.iter().rev() {
                    stack.push((*child, false));
                }
            }
        }
        order
    }

    /// Leaves in document order.
    pub fn leaves(&self) -> Vec<NodeId> {
        self.postorder()
            .into_iter()
            .filter(|id| self.node(*id).is_leaf())
            .collect()
    }

    pub fn inner_nodes(&self) -> Vec<NodeId> {
        self.postorder()
            .into_iter()
            .filter(|id| !self.node(*id).is_leaf())
            .collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Parent of each node, indexed by id.
    pub fn parents(&self) -> Vec<Option<NodeId>> {
        let mut parent = vec![None; self.nodes.len()];
        for node in &self.nodes {
            for child in &node.children {
                parent[child.0] = Some(node.id);
            }
        }
        parent
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            for child in &self.nodes[id.0].children {
                depth[child.0] = depth[id.0] + 1;
                max = max.max(depth[child.0]);
                stack.push(*child);
            }
        }
        max
    }

    pub fn is_binary(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.children.is_empty() || n.children.len() == 2)
    }

    /// Dimension shared by all leaf features, if every leaf is featurized.
    pub fn feature_dim(&self) -> Option<usize> {
        let mut dim = None;
        for node in self.nodes.iter().filter(|n| n.is_leaf()) {
            let len = node.features.as_ref()?.len();
            dim = Some(len);
        }
        dim
    }

    pub fn is_featurized(&self) -> bool {
        self.feature_dim().is_some()
    }

    /// Inner nodes none of whose children is a nucleus. RST expects at least
    /// one nucleus per relation, but parser output does not always comply.
    pub fn nucleus_warnings(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| !n.is_leaf())
            .filter(|n| {
                !n.children
                    .iter()
                    .any(|c| self.node(*c).hierarchy == Some(HierarchyType::Nucleus))
            })
            .map(|n| n.id)
            .collect()
    }

    /// Same tree renumbered in preorder, the numbering the JSON reader uses.
    pub fn canonical(&self) -> DiscourseTree {
        let spec = self.to_spec(self.root);
        DiscourseTree::from_spec(self.doc_id.clone(), self.label, spec)
            .expect("renumbering a valid tree keeps it valid")
    }

    pub fn to_spec(&self, id: NodeId) -> NodeSpec {
        let node = self.node(id);
        if node.is_leaf() {
            NodeSpec::Leaf {
                hierarchy: node.hierarchy,
                text: node.text.clone(),
                features: node.features.clone(),
            }
        } else {
            NodeSpec::Inner {
                relation: node.relation,
                hierarchy: node.hierarchy,
                children: node.children.iter().map(|c| self.to_spec(*c)).collect(),
            }
        }
    }
}

fn push_spec(nodes: &mut Vec<DiscourseNode>, spec: NodeSpec) -> NodeId {
    let id = NodeId(nodes.len());
    match spec {
        NodeSpec::Leaf {
            hierarchy,
            text,
            features,
        } => nodes.push(DiscourseNode {
            id,
            relation: RelationType::LeafUnit,
            hierarchy,
            children: Vec::new(),
            text,
            features,
        }),
        NodeSpec::Inner {
            relation,
            hierarchy,
            children,
        } => {
            nodes.push(DiscourseNode {
                id,
                relation,
                hierarchy,
                children: Vec::new(),
                text: None,
                features: None,
            });
            let ids: Vec<NodeId> = children.into_iter().map(|c| push_spec(nodes, c)).collect();
            nodes[id.0].children = ids;
        }
    }
    id
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationShare {
    pub relation: RelationType,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeStats {
    pub trees: usize,
    pub relations: Vec<RelationShare>,
    pub total_relations: usize,
    pub mean_edus: f64,
    pub max_edus: usize,
    pub max_depth: usize,
}

/// Relation histogram over inner nodes plus EDU-count and depth summaries.
pub fn tree_stats(corpus: &[DiscourseTree]) -> Result<TreeStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("tree_stats needs at least one tree".into()));
    }
    let mut counts: BTreeMap<RelationType, usize> = BTreeMap::new();
    let mut edus = 0usize;
    let mut max_edus = 0usize;
    let mut max_depth = 0usize;
    for tree in corpus {
        for node in tree.nodes().iter().filter(|n| !n.is_leaf()) {
            *counts.entry(node.relation).or_default() += 1;
        }
        let leaves = tree.leaf_count();
        edus += leaves;
        max_edus = max_edus.max(leaves);
        max_depth = max_depth.max(tree.depth());
    }
    let total: usize = counts.values().sum();
    let mut relations: Vec<RelationShare> = counts
        .into_iter()
        .map(|(relation, count)| RelationShare {
            relation,
            count,
            percent: 100.0 * count as f64 / total as f64,
        })
        .collect();
    relations.sort_by(|a, b| b.count.cmp(&a.count).then(a.relation.cmp(&b.relation)));
    Ok(TreeStats {
        trees: corpus.len(),
        relations,
        total_relations: total,
        mean_edus: edus as f64 / corpus.len() as f64,
        max_edus,
        max_depth,
    })
}
