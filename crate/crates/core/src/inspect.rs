//! Read-only views of a trained discourse model: how strongly each relation
//! slice of the update-gate tensor is weighted, how nucleus and satellite
//! transforms compare, and a per-EDU salience derived from those weights.

use std::fmt::Write as _;

use serde::Serialize;

use crate::cells::Params;
use crate::error::{Error, Result};
use crate::tree::{DiscourseTree, HierarchyType, NodeId, RelationType, DISCOURSE_RELATION_COUNT};

pub const SALIENCE_METHOD: &str = "salience = mean normalized Frobenius norm of the update-gate \
recurrent relation slice over the inner ancestors of each EDU, min-max rescaled within the document \
(all EDUs get 1.0 when the document has a single distinct value)";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationWeight {
    pub relation: RelationType,
    pub norm: f64,
    /// `norm` divided by the largest norm over the 18 relations.
    pub normalized: f64,
    /// 1 for the heaviest relation.
    pub rank: usize,
    /// The slice is entirely zero.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationWeightReport {
    pub tensors: Vec<String>,
    /// In relation index order.
    pub weights: Vec<RelationWeight>,
}

impl RelationWeightReport {
    pub fn normalized(&self, relation: RelationType) -> Option<f64> {
        self.weights
            .iter()
            .find(|w| w.relation == relation)
            .map(|w| w.normalized)
    }
}

fn require_discourse(params: &Params, what: &str) -> Result<()> {
    if !params.variant().is_discourse() {
        return Err(Error::UnsupportedVariant(format!(
            "{what} ({} has no relation tensors)",
            params.variant()
        )));
    }
    Ok(())
}

/// Frobenius norms of the update-gate recurrent slices, one per relation
/// (the leaf slice is left out). N-ary models combine their two positional
/// tensors as sqrt(‖U₁[r]‖² + ‖U₂[r]‖²).
pub fn relation_weights(params: &Params) -> Result<RelationWeightReport> {
    require_discourse(params, "relation weights")?;
    let names: Vec<&str> = if params.variant().is_nary() {
        vec!["U_u_1", "U_u_2"]
    } else {
        vec!["U_u"]
    };
    let mut norms = vec![0.0; DISCOURSE_RELATION_COUNT];
    for name in &names {
        let t = params.get(name).expect("discourse layouts hold the update tensors");
        for (r, norm) in norms.iter_mut().enumerate() {
            *norm += t.slice_data(r)?.iter().map(|v| v * v).sum::<f64>();
        }
    }
    for norm in &mut norms {
        *norm = norm.sqrt();
    }
    let max = norms.iter().copied().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|a, b| norms[*b].total_cmp(&norms[*a]).then(a.cmp(b)));
    let mut rank = vec![0; norms.len()];
    for (pos, r) in order.into_iter().enumerate() {
        rank[r] = pos + 1;
    }
    let weights = norms
        .iter()
        .enumerate()
        .map(|(r, norm)| RelationWeight {
            relation: RelationType::ALL[r],
            norm: *norm,
            normalized: if max > 0.0 { norm / max } else { 0.0 },
            rank: rank[r],
            degenerate: *norm == 0.0,
        })
        .collect();
    Ok(RelationWeightReport {
        tensors: names.into_iter().map(String::from).collect(),
        weights,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HierarchyPair {
    pub nucleus: f64,
    pub satellite: f64,
    pub normalized_nucleus: f64,
    pub normalized_satellite: f64,
    /// nucleus / satellite; infinite when the satellite slice is zero.
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HierarchyWeightReport {
    /// W^(h), applied to child hidden states.
    pub hidden: HierarchyPair,
    /// W^(c), applied to child memory cells.
    pub cell: HierarchyPair,
}

fn pair(params: &Params, name: &str) -> Result<HierarchyPair> {
    let t = params.get(name).expect("discourse layouts hold hierarchy tensors");
    let norm =
        |k: HierarchyType| -> Result<f64> { Ok(t.slice_data(k.index())?.iter().map(|v| v * v).sum::<f64>().sqrt()) };
    let (nucleus, satellite) = (norm(HierarchyType::Nucleus)?, norm(HierarchyType::Satellite)?);
    let max = nucleus.max(satellite);
    let scale = |v: f64| if max > 0.0 { v / max } else { 0.0 };
    Ok(HierarchyPair {
        nucleus,
        satellite,
        normalized_nucleus: scale(nucleus),
        normalized_satellite: scale(satellite),
        ratio: nucleus / satellite,
    })
}

pub fn hierarchy_weights(params: &Params) -> Result<HierarchyWeightReport> {
    require_discourse(params, "hierarchy weights")?;
    Ok(HierarchyWeightReport {
        hidden: pair(params, "W_h")?,
        cell: pair(params, "W_c")?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PathStep {
    /// Relation of the ancestor.
    pub relation: RelationType,
    /// Label of the ancestor's child on the path.
    pub hierarchy: Option<HierarchyType>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SalienceRecord {
    pub leaf: NodeId,
    pub edu_text: String,
    pub salience: f64,
    /// Path average before rescaling.
    pub raw: f64,
    /// From the leaf's parent up to the root.
    pub path: Vec<PathStep>,
}

/// One record per leaf, in document order.
pub fn salience(tree: &DiscourseTree, params: &Params) -> Result<Vec<SalienceRecord>> {
    let weights = relation_weights(params)?;
    salience_from_weights(tree, &weights)
}

pub fn salience_from_weights(tree: &DiscourseTree, weights: &RelationWeightReport) -> Result<Vec<SalienceRecord>> {
    let parents = tree.parents();
    let mut records = Vec::new();
    for leaf in tree.leaves() {
        let node = tree.node(leaf);
        let text = node
            .text
            .clone()
            .ok_or_else(|| Error::Data(format!("leaf {leaf} of tree {} has no text to export", tree.doc_id)))?;
        let mut path = Vec::new();
        let mut child = leaf;
        while let Some(p) = parents[child.0] {
            path.push(PathStep {
                relation: tree.node(p).relation,
                hierarchy: tree.node(child).hierarchy,
            });
            child = p;
        }
        let raw = if path.is_empty() {
            0.0
        } else {
            let total: f64 = path.iter().map(|s| weights.normalized(s.relation).unwrap_or(0.0)).sum();
            total / path.len() as f64
        };
        records.push(SalienceRecord {
            leaf,
            edu_text: text,
            salience: 0.0,
            raw,
            path,
        });
    }
    let min = records.iter().map(|r| r.raw).fold(f64::INFINITY, f64::min);
    let max = records.iter().map(|r| r.raw).fold(f64::NEG_INFINITY, f64::max);
    for r in &mut records {
        r.salience = if max > min { (r.raw - min) / (max - min) } else { 1.0 };
    }
    Ok(records)
}

/// Blue at salience 0, red at 1.
pub fn salience_color(s: f64) -> (u8, u8, u8) {
    let s = s.clamp(0.0, 1.0);
    ((255.0 * s).round() as u8, 0, (255.0 * (1.0 - s)).round() as u8)
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocumentSalience {
    pub doc_id: String,
    pub records: Vec<SalienceRecord>,
}

/// Standalone page with every EDU colored by its salience.
pub fn salience_html(docs: &[DocumentSalience]) -> String {
    let mut html = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>EDU salience</title></head>\n\
         <body style=\"font-family: sans-serif; max-width: 50em; margin: 2em auto; line-height: 1.6\">\n",
    );
    let _ = writeln!(html, "<p style=\"color: #555\">{}</p>", escape(SALIENCE_METHOD));
    for doc in docs {
        let _ = writeln!(html, "<h2>{}</h2>\n<p>", escape(&doc.doc_id));
        for r in &doc.records {
            let (red, green, blue) = salience_color(r.salience);
            let _ = writeln!(
                html,
                "<span title=\"salience {:.3}\" style=\"color: rgb({red}, {green}, {blue})\">{}</span>",
                r.salience,
                escape(&r.edu_text)
            );
        }
        html.push_str("</p>\n");
    }
    html.push_str("</body></html>\n");
    html
}
