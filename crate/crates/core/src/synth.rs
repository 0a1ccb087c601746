//! Labeled random binary discourse trees for desk-scale experiments.
//!
//! Leaf scores lie on a 1/64 grid in [-1, 1], so every sum below is exact.
//! Each EDU is one lexicon word (`pos12` scores +12/64, `neg5` scores -5/64,
//! `neutral` scores 0), so featurizing the text with [`synth_lexicon`]
//! reproduces the stored features.
//!
//! * `nucleus-top-split`: the root joins a nucleus subtree and a satellite
//!   subtree whose sums cancel exactly; the label is the sign of the nucleus
//!   sum. The flat sum of every tree is 0.
//! * `bag-equivalent`: the label is the sign of the flat sum.
//! * `relation-dependent`: the root is Contrast or Elaboration; the label is
//!   the sign of the flat sum, flipped under Contrast. Contrast never occurs
//!   below the root.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::tree_rng;
use crate::error::{Error, Result};
use crate::features::Lexicon;
use crate::tree::{DiscourseTree, HierarchyType, NodeSpec, RelationType};

/// Leaf scores are multiples of 1/UNIT.
pub const UNIT: i32 = 64;

/// Relations used below the root.
const INNER_RELATIONS: [RelationType; 4] = [
    RelationType::Elaboration,
    RelationType::Joint,
    RelationType::Attribution,
    RelationType::SameUnit,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthTask {
    #[serde(rename = "nucleus-top-split")]
    NucleusTopSplit,
    #[serde(rename = "relation-dependent")]
    RelationDependent,
    #[serde(rename = "bag-equivalent")]
    BagEquivalent,
}

impl SynthTask {
    pub const ALL: [SynthTask; 3] = [
        SynthTask::NucleusTopSplit,
        SynthTask::RelationDependent,
        SynthTask::BagEquivalent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthTask::NucleusTopSplit => "nucleus-top-split",
            SynthTask::RelationDependent => "relation-dependent",
            SynthTask::BagEquivalent => "bag-equivalent",
        }
    }
}

impl fmt::Display for SynthTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthTask::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown synthetic task {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub task: SynthTask,
    pub n_trees: usize,
    /// Maximum number of edges from the root to a leaf.
    pub depth: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 2 {
            return Err(Error::Config("at least 2 trees are needed".into()));
        }
        if self.depth < 2 {
            return Err(Error::Config("depth must be at least 2".into()));
        }
        Ok(())
    }
}

enum Shape {
    Leaf,
    Inner(Box<Shape>, Box<Shape>),
}

impl Shape {
    fn leaves(&self) -> usize {
        match self {
            Shape::Leaf => 1,
            Shape::Inner(a, b) => a.leaves() + b.leaves(),
        }
    }
}

/// Random binary shape at most `depth` edges deep; splits with probability
/// 0.6 while depth remains.
fn random_shape<R: Rng>(rng: &mut R, depth: usize) -> Shape {
    if depth == 0 || !rng.gen_bool(0.6) {
        Shape::Leaf
    } else {
        Shape::Inner(
            Box::new(random_shape(rng, depth - 1)),
            Box::new(random_shape(rng, depth - 1)),
        )
    }
}

/// `count` leaf scores in grid units, each within ±UNIT, summing to `target`.
fn leaf_units<R: Rng>(rng: &mut R, count: usize, target: i32) -> Vec<i32> {
    loop {
        let mut units: Vec<i32> = (0..count).map(|_| rng.gen_range(-UNIT / 2..=UNIT / 2)).collect();
        let delta = target - units.iter().sum::<i32>();
        let (q, r) = (delta.div_euclid(count as i32), delta.rem_euclid(count as i32) as usize);
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(rng);
        for (pos, i) in order.into_iter().enumerate() {
            units[i] += q + i32::from(pos < r);
        }
        if units.iter().all(|u| u.abs() <= UNIT) {
            return units;
        }
    }
}

/// Lexicon word carrying a score of `units`/64.
pub fn unit_word(units: i32) -> String {
    match units {
        0 => "neutral".to_string(),
        u if u > 0 => format!("pos{u}"),
        u => format!("neg{}", -u),
    }
}

/// Lexicon matching [`unit_word`].
pub fn synth_lexicon() -> Lexicon {
    let mut entries = vec![("neutral".to_string(), 0.0, 0.0)];
    for u in 1..=UNIT {
        let score = f64::from(u) / f64::from(UNIT);
        entries.push((format!("pos{u}"), score, 0.0));
        entries.push((format!("neg{u}"), 0.0, score));
    }
    Lexicon::from_entries(entries).expect("scores lie in [0, 1]")
}

/// The lexicon as `word<TAB>pos<TAB>neg` lines with a header.
pub fn synth_lexicon_tsv() -> String {
    let mut out = String::from("word\tpos\tneg\n");
    out.push_str("neutral\t0\t0\n");
    for u in 1..=UNIT {
        let score = f64::from(u) / f64::from(UNIT);
        out.push_str(&format!("pos{u}\t{score}\t0\nneg{u}\t0\t{score}\n"));
    }
    out
}

fn random_pattern<R: Rng>(rng: &mut R) -> [HierarchyType; 2] {
    use HierarchyType::*;
    *[[Nucleus, Satellite], [Satellite, Nucleus], [Nucleus, Nucleus]]
        .choose(rng)
        .expect("non-empty")
}

/// Turns a shape into a node spec, consuming leaf scores left to right.
fn build<R: Rng>(
    rng: &mut R,
    shape: &Shape,
    hierarchy: Option<HierarchyType>,
    units: &mut std::slice::Iter<'_, i32>,
) -> NodeSpec {
    match shape {
        Shape::Leaf => {
            let u = *units.next().expect("one score per leaf");
            NodeSpec::featured(hierarchy, &unit_word(u), vec![f64::from(u) / f64::from(UNIT)])
        }
        Shape::Inner(a, b) => {
            let [ha, hb] = random_pattern(rng);
            let relation = *INNER_RELATIONS.choose(rng).expect("non-empty");
            NodeSpec::inner(
                relation,
                hierarchy,
                vec![build(rng, a, Some(ha), units), build(rng, b, Some(hb), units)],
            )
        }
    }
}

/// Magnitude of a labeled sum, in grid units: between 0.25 and 0.75.
fn margin<R: Rng>(rng: &mut R) -> i32 {
    rng.gen_range(UNIT / 4..=3 * UNIT / 4)
}

fn subtree<R: Rng>(rng: &mut R, depth: usize, hierarchy: HierarchyType, target: i32) -> NodeSpec {
    let shape = random_shape(rng, depth);
    let units = leaf_units(rng, shape.leaves(), target);
    build(rng, &shape, Some(hierarchy), &mut units.iter())
}

fn generate_one<R: Rng>(rng: &mut R, task: SynthTask, depth: usize, doc_id: String) -> Result<DiscourseTree> {
    let positive = rng.gen_bool(0.5);
    let sign = if positive { 1 } else { -1 };
    let m = margin(rng);
    let (root, label) = match task {
        SynthTask::NucleusTopSplit => {
            let nucleus = subtree(rng, depth - 1, HierarchyType::Nucleus, sign * m);
            let satellite = subtree(rng, depth - 1, HierarchyType::Satellite, -sign * m);
            let children = if rng.gen_bool(0.5) {
                vec![nucleus, satellite]
            } else {
                vec![satellite, nucleus]
            };
            let relation = *INNER_RELATIONS.choose(rng).expect("non-empty");
            (NodeSpec::inner(relation, None, children), positive)
        }
        SynthTask::BagEquivalent | SynthTask::RelationDependent => {
            let shape = Shape::Inner(
                Box::new(random_shape(rng, depth - 1)),
                Box::new(random_shape(rng, depth - 1)),
            );
            let units = leaf_units(rng, shape.leaves(), sign * m);
            let mut root = build(rng, &shape, None, &mut units.iter());
            let mut label = positive;
            if task == SynthTask::RelationDependent {
                let contrast = rng.gen_bool(0.5);
                if let NodeSpec::Inner { relation, .. } = &mut root {
                    *relation = if contrast {
                        RelationType::Contrast
                    } else {
                        RelationType::Elaboration
                    };
                }
                label ^= contrast;
            }
            (root, label)
        }
    };
    DiscourseTree::from_spec(doc_id, Some(usize::from(label)), root)
}

pub fn generate(config: &SynthConfig) -> Result<Vec<DiscourseTree>> {
    config.validate()?;
    (0..config.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = tree_rng(config.seed, i);
            generate_one(&mut rng, config.task, config.depth, format!("{}-{i:05}", config.task))
        })
        .collect()
}
