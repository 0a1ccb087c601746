//! Training-set augmentation (node reordering, artificial leaf insertion)
//! and relation noise for sensitivity runs. Every operation returns a new
//! tree; inputs are never modified.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::exact_sum;
use crate::tree::{DiscourseNode, DiscourseTree, HierarchyType, NodeId, RelationType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub reorder: bool,
    pub insert: bool,
    /// Share of inner nodes whose relation is redrawn in each training tree.
    pub corruption_fraction: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            reorder: false,
            insert: false,
            corruption_fraction: 0.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        check_fraction(self.corruption_fraction)
    }

    pub fn is_identity(&self) -> bool {
        !self.reorder && !self.insert && self.corruption_fraction == 0.0
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::Config(format!("fraction {f} outside [0, 1]")));
    }
    Ok(())
}

fn rebuild(tree: &DiscourseTree, nodes: Vec<DiscourseNode>) -> Result<DiscourseTree> {
    DiscourseTree::from_nodes(tree.doc_id.clone(), tree.label, nodes, tree.root())
}

/// Inner, non-root nodes with exactly two children whose parent also has
/// exactly two children.
pub fn reorder_candidates(tree: &DiscourseTree) -> Vec<NodeId> {
    let parents = tree.parents();
    tree.inner_nodes()
        .into_iter()
        .filter(|id| tree.node(*id).children.len() == 2)
        .filter(|id| parents[id.0].is_some_and(|p| tree.node(p).children.len() == 2))
        .collect()
}

/// Featurized leaves.
pub fn insert_candidates(tree: &DiscourseTree) -> Vec<NodeId> {
    tree.leaves()
        .into_iter()
        .filter(|id| tree.node(*id).features.is_some())
        .collect()
}

/// Rotates `n` into its sibling's position. With parent P and sibling m:
/// P(n(l, r), m) becomes P(l, n(r, m)) and P(m, n(l, r)) becomes
/// P(n(m, l), r). Leaf order is unchanged and every node keeps its own
/// relation and hierarchy label.
pub fn reorder_node(tree: &DiscourseTree, n: NodeId) -> Result<DiscourseTree> {
    let not_applicable = |why: &str| Error::NotApplicable(format!("reorder node {n} of {}: {why}", tree.doc_id));
    if n.0 >= tree.len() {
        return Err(not_applicable("no such node"));
    }
    let node = tree.node(n);
    if node.is_leaf() {
        return Err(not_applicable("node is a leaf"));
    }
    let [l, r] = node.children[..] else {
        return Err(not_applicable("node does not have exactly two children"));
    };
    let Some(p) = tree.parents()[n.0] else {
        return Err(not_applicable("node is the root"));
    };
    let [first, second] = tree.node(p).children[..] else {
        return Err(not_applicable("parent does not have exactly two children"));
    };

    let mut nodes = tree.nodes().to_vec();
    if first == n {
        let m = second;
        nodes[p.0].children = vec![l, n];
        nodes[n.0].children = vec![r, m];
    } else {
        let m = first;
        nodes[p.0].children = vec![n, r];
        nodes[n.0].children = vec![m, l];
    }
    rebuild(tree, nodes)
}

/// Splits `x` into `(ω·x, (1−ω)·x)` so that the two parts add up to `x`
/// exactly. The smaller share is rounded first and the larger one is its
/// exact complement, so no mass is created or lost.
pub fn split_mass(x: f64, omega: f64) -> (f64, f64) {
    let small_share = omega.min(1.0 - omega);
    let small = small_share * x;
    let big = x - small;
    // |small| ≤ |x|/2 puts big within a factor two of x, so this is exact.
    let small = x - big;
    if omega <= 0.5 {
        (small, big)
    } else {
        (big, small)
    }
}

/// Turns leaf `n` into an inner node with two new leaf children that share
/// its features elementwise. The new inner node gets a uniformly drawn
/// relation; the children get uniform hierarchy labels. The text moves to
/// the left child; the right child gets an empty text.
pub fn insert_leaf<R: Rng + ?Sized>(tree: &DiscourseTree, n: NodeId, rng: &mut R) -> Result<DiscourseTree> {
    let not_applicable = |why: &str| Error::NotApplicable(format!("insert at node {n} of {}: {why}", tree.doc_id));
    if n.0 >= tree.len() {
        return Err(not_applicable("no such node"));
    }
    let node = tree.node(n);
    if !node.is_leaf() {
        return Err(not_applicable("node is not a leaf"));
    }
    let Some(features) = &node.features else {
        return Err(not_applicable("leaf is not featurized"));
    };

    let relation = *RelationType::discourse()
        .choose(rng)
        .expect("the relation set is not empty");
    let (mut left, mut right) = (Vec::with_capacity(features.len()), Vec::with_capacity(features.len()));
    for x in features {
        let omega: f64 = rng.gen();
        let (a, b) = split_mass(*x, omega);
        left.push(a);
        right.push(b);
    }
    let mut label = || *HierarchyType::ALL.choose(rng).expect("two labels");
    let (l_hier, r_hier) = (label(), label());

    let mut nodes = tree.nodes().to_vec();
    let (l, r) = (NodeId(nodes.len()), NodeId(nodes.len() + 1));
    let text = nodes[n.0].text.take();
    let right_text = text.as_ref().map(|_| String::new());
    nodes[n.0].relation = relation;
    nodes[n.0].features = None;
    nodes[n.0].children = vec![l, r];
    nodes.push(DiscourseNode {
        id: l,
        relation: RelationType::LeafUnit,
        hierarchy: Some(l_hier),
        children: Vec::new(),
        text,
        features: Some(left),
    });
    nodes.push(DiscourseNode {
        id: r,
        relation: RelationType::LeafUnit,
        hierarchy: Some(r_hier),
        children: Vec::new(),
        text: right_text,
        features: Some(right),
    });
    rebuild(tree, nodes)
}

/// Exactly rounded per-dimension sum of all leaf features.
pub fn leaf_feature_mass(tree: &DiscourseTree) -> Option<Vec<f64>> {
    let dim = tree.feature_dim()?;
    let leaves = tree.leaves();
    Some(
        (0..dim)
            .map(|k| {
                exact_sum(
                    leaves
                        .iter()
                        .map(|id| tree.node(*id).features.as_ref().expect("featurized")[k]),
                )
            })
            .collect(),
    )
}

/// Redraws the relation of ⌈fraction · k⌉ of the k inner nodes, uniformly
/// over the 18 relation types (a redraw may repeat the old relation).
///
/// Nodes are taken from the front of one shuffled order, so with the same
/// rng state a smaller fraction corrupts a subset of the nodes a larger one
/// does, with the same replacements.
pub fn corrupt_relations<R: Rng + ?Sized>(tree: &DiscourseTree, fraction: f64, rng: &mut R) -> Result<DiscourseTree> {
    check_fraction(fraction)?;
    let mut inner = tree.inner_nodes();
    let count = corrupted_count(inner.len(), fraction);
    if count == 0 {
        return Ok(tree.clone());
    }
    inner.shuffle(rng);
    let mut nodes = tree.nodes().to_vec();
    for id in &inner[..count] {
        nodes[id.0].relation = *RelationType::discourse().choose(rng).expect("non-empty");
    }
    rebuild(tree, nodes)
}

/// ⌈fraction · inner⌉, ignoring representation error just above an integer.
pub fn corrupted_count(inner: usize, fraction: f64) -> usize {
    (((fraction * inner as f64) - 1e-9).ceil().max(0.0) as usize).min(inner)
}

/// Generator for tree `index` within a pass seeded by `seed`.
pub(crate) fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// One epoch's training set: each original tree followed by a reordered
/// copy and an inserted copy when enabled and applicable. Relation noise, if
/// configured, is then applied once to every output tree.
pub fn augment_epoch<R: Rng + ?Sized>(
    trainset: &[DiscourseTree],
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<DiscourseTree>> {
    config.validate()?;
    if config.is_identity() {
        return Ok(trainset.to_vec());
    }
    let seed: u64 = rng.gen();
    let per_tree: Vec<Vec<DiscourseTree>> = trainset
        .par_iter()
        .enumerate()
        .map(|(i, tree)| {
            let mut rng = tree_rng(seed, i);
            let mut out = vec![tree.clone()];
            if config.reorder {
                if let Some(n) = reorder_candidates(tree).choose(&mut rng) {
                    out.push(reorder_node(tree, *n)?);
                }
            }
            if config.insert {
                if let Some(n) = insert_candidates(tree).choose(&mut rng).copied() {
                    out.push(insert_leaf(tree, n, &mut rng)?);
                }
            }
            if config.corruption_fraction > 0.0 {
                out = out
                    .iter()
                    .map(|t| corrupt_relations(t, config.corruption_fraction, &mut rng))
                    .collect::<Result<_>>()?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_tree.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::NodeSpec;
    use proptest::prelude::*;

    fn leaf(h: HierarchyType, text: &str, v: f64) -> NodeSpec {
        NodeSpec::featured(Some(h), text, vec![v])
    }

    /// P(n(l, r), m) with P the root.
    fn left_case() -> DiscourseTree {
        use HierarchyType::*;
        DiscourseTree::from_spec(
            "left",
            Some(1),
            NodeSpec::inner(
                RelationType::Elaboration,
                None,
                vec![
                    NodeSpec::inner(
                        RelationType::Contrast,
                        Some(Nucleus),
                        vec![leaf(Satellite, "l", 0.1), leaf(Nucleus, "r", 0.2)],
                    ),
                    leaf(Satellite, "m", 0.3),
                ],
            ),
        )
        .unwrap()
    }

    fn texts(tree: &DiscourseTree) -> Vec<String> {
        tree.leaves()
            .iter()
            .map(|id| tree.node(*id).text.clone().unwrap_or_default())
            .collect()
    }

    #[test]
    fn reorder_left_orientation() {
        let t = left_case();
        // Preorder ids: P=0, n=1, l=2, r=3, m=4.
        let out = reorder_node(&t, NodeId(1)).unwrap();
        assert_eq!(out.node(NodeId(0)).children, vec![NodeId(2), NodeId(1)]);
        assert_eq!(out.node(NodeId(1)).children, vec![NodeId(3), NodeId(4)]);
        assert_eq!(texts(&out), texts(&t));
        assert_eq!(out.len(), t.len());
        assert_eq!(out.node(NodeId(1)).relation, RelationType::Contrast);
        assert_eq!(out.node(NodeId(2)).hierarchy, Some(HierarchyType::Satellite));
        assert_eq!(t, left_case());
    }

    #[test]
    fn reorder_right_orientation() {
        use HierarchyType::*;
        let t = DiscourseTree::from_spec(
            "right",
            None,
            NodeSpec::inner(
                RelationType::Joint,
                None,
                vec![
                    leaf(Nucleus, "m", 0.3),
                    NodeSpec::inner(
                        RelationType::Cause,
                        Some(Nucleus),
                        vec![leaf(Nucleus, "l", 0.1), leaf(Satellite, "r", 0.2)],
                    ),
                ],
            ),
        )
        .unwrap();
        // Preorder ids: P=0, m=1, n=2, l=3, r=4.
        let out = reorder_node(&t, NodeId(2)).unwrap();
        assert_eq!(out.node(NodeId(0)).children, vec![NodeId(2), NodeId(4)]);
        assert_eq!(out.node(NodeId(2)).children, vec![NodeId(1), NodeId(3)]);
        assert_eq!(texts(&out), vec!["m", "l", "r"]);
    }

    #[test]
    fn reorder_rejects_ineligible_nodes() {
        let t = left_case();
        for id in [0, 2, 4, 99] {
            assert!(
                matches!(reorder_node(&t, NodeId(id)), Err(Error::NotApplicable(_))),
                "{id}"
            );
        }
        assert_eq!(reorder_candidates(&t), vec![NodeId(1)]);
    }

    #[test]
    fn split_mass_examples() {
        let (l, r) = split_mass(0.6, 0.25);
        assert!((l - 0.15).abs() < 1e-15 && (r - 0.45).abs() < 1e-15);
        assert_eq!(l + r, 0.6);
        assert_eq!(split_mass(2.0, 0.0), (0.0, 2.0));
        assert_eq!(split_mass(2.0, 1.0), (2.0, 0.0));
    }

    #[test]
    fn insert_grows_tree_and_keeps_mass() {
        let t = left_case();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = insert_leaf(&t, NodeId(4), &mut rng).unwrap();
        assert_eq!(out.len(), t.len() + 2);
        assert_eq!(out.leaf_count(), t.leaf_count() + 1);
        assert_eq!(leaf_feature_mass(&out), leaf_feature_mass(&t));
        let n = out.node(NodeId(4));
        assert!(!n.relation.is_leaf_unit());
        assert_eq!(n.hierarchy, Some(HierarchyType::Satellite));
        assert_eq!(texts(&out), vec!["l", "r", "m", ""]);
        assert!(matches!(
            insert_leaf(&t, NodeId(1), &mut rng),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn corruption_counts() {
        assert_eq!(corrupted_count(40, 0.1), 4);
        assert_eq!(corrupted_count(40, 0.0), 0);
        assert_eq!(corrupted_count(7, 0.2), 2);
        assert_eq!(corrupted_count(3, 1.0), 3);
        let t = left_case();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(corrupt_relations(&t, 0.0, &mut rng).unwrap(), t);
        assert!(corrupt_relations(&t, 1.5, &mut rng).is_err());
    }

    #[test]
    fn corruption_touches_only_relations() {
        let t = left_case();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = corrupt_relations(&t, 1.0, &mut rng).unwrap();
        for (a, b) in t.nodes().iter().zip(out.nodes()) {
            assert_eq!(
                (&a.children, &a.hierarchy, &a.features, &a.text),
                (&b.children, &b.hierarchy, &b.features, &b.text)
            );
            assert_eq!(a.relation.is_leaf_unit(), b.relation.is_leaf_unit());
        }
    }

    #[test]
    fn identity_config_passes_trees_through() {
        let trees = vec![left_case(); 3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            augment_epoch(&trees, &AugmentConfig::default(), &mut rng).unwrap(),
            trees
        );

        let single = DiscourseTree::from_spec("s", None, NodeSpec::featured(None, "x", vec![1.0])).unwrap();
        let cfg = AugmentConfig {
            reorder: true,
            ..AugmentConfig::default()
        };
        assert_eq!(
            augment_epoch(std::slice::from_ref(&single), &cfg, &mut rng).unwrap(),
            vec![single]
        );
    }

    #[test]
    fn augment_epoch_is_deterministic() {
        let trees = vec![left_case(); 5];
        let cfg = AugmentConfig {
            reorder: true,
            insert: true,
            corruption_fraction: 0.5,
            seed: 0,
        };
        let a = augment_epoch(&trees, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = augment_epoch(&trees, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 15);
    }

    fn arb_binary(depth: u32) -> impl Strategy<Value = NodeSpec> {
        let leaf = (-1.0f64..1.0, any::<bool>()).prop_map(|(v, nuc)| {
            let h = if nuc {
                HierarchyType::Nucleus
            } else {
                HierarchyType::Satellite
            };
            NodeSpec::featured(Some(h), &format!("{v}"), vec![v])
        });
        leaf.prop_recursive(depth, 32, 2, |inner| {
            (inner.clone(), inner, 0usize..18, any::<bool>()).prop_map(|(a, b, r, nuc)| {
                let h = if nuc {
                    HierarchyType::Nucleus
                } else {
                    HierarchyType::Satellite
                };
                NodeSpec::inner(RelationType::ALL[r], Some(h), vec![a, b])
            })
        })
    }

    fn as_tree(mut spec: NodeSpec) -> DiscourseTree {
        match &mut spec {
            NodeSpec::Leaf { hierarchy, .. } | NodeSpec::Inner { hierarchy, .. } => *hierarchy = None,
        }
        DiscourseTree::from_spec("p", Some(0), spec).unwrap()
    }

    proptest! {
        #[test]
        fn reorder_preserves_leaves_and_arity(spec in arb_binary(5), pick in any::<prop::sample::Index>()) {
            let t = as_tree(spec);
            let candidates = reorder_candidates(&t);
            prop_assume!(!candidates.is_empty());
            let out = reorder_node(&t, *pick.get(&candidates)).unwrap();
            prop_assert_eq!(texts(&out), texts(&t));
            prop_assert_eq!(out.len(), t.len());
            prop_assert!(out.is_binary());
        }

        #[test]
        fn insert_preserves_mass(spec in arb_binary(5), seed in any::<u64>()) {
            let t = as_tree(spec);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let leaves = insert_candidates(&t);
            let n = *leaves.choose(&mut rng).unwrap();
            let before = t.clone();
            let out = insert_leaf(&t, n, &mut rng).unwrap();
            prop_assert_eq!(&t, &before);
            prop_assert_eq!(leaf_feature_mass(&out), leaf_feature_mass(&t));
            prop_assert_eq!(out.len(), t.len() + 2);
        }

        #[test]
        fn smaller_fractions_corrupt_subsets(spec in arb_binary(5), seed in any::<u64>()) {
            let t = as_tree(spec);
            let small = corrupt_relations(&t, 0.2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let large = corrupt_relations(&t, 0.6, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for ((a, s), l) in t.nodes().iter().zip(small.nodes()).zip(large.nodes()) {
                if a.relation != s.relation {
                    prop_assert_eq!(s.relation, l.relation);
                }
            }
        }
    }
}
