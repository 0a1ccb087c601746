use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Rhetorical relation carried by an inner node, naming how its children
/// relate. Leaves use the reserved [`RelationType::LeafUnit`].
///
/// Indices are stable: the 18 discourse relations occupy 0..18 in the order
/// below and `LeafUnit` is 18.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationType {
    Elaboration,
    Joint,
    SameUnit,
    Background,
    Attribution,
    Comparison,
    Temporal,
    Enablement,
    Contrast,
    Summary,
    Condition,
    MannerMeans,
    Cause,
    Explanation,
    Evaluation,
    TextualOrganization,
    TopicChange,
    TopicComment,
    LeafUnit,
}

/// Size of the relation index space, including `LeafUnit`.
pub const RELATION_COUNT: usize = 19;

/// Number of real discourse relations.
pub const DISCOURSE_RELATION_COUNT: usize = 18;

impl RelationType {
    pub const ALL: [RelationType; RELATION_COUNT] = [
        RelationType::Elaboration,
        RelationType::Joint,
        RelationType::SameUnit,
        RelationType::Background,
        RelationType::Attribution,
        RelationType::Comparison,
        RelationType::Temporal,
        RelationType::Enablement,
        RelationType::Contrast,
        RelationType::Summary,
        RelationType::Condition,
        RelationType::MannerMeans,
        RelationType::Cause,
        RelationType::Explanation,
        RelationType::Evaluation,
        RelationType::TextualOrganization,
        RelationType::TopicChange,
        RelationType::TopicComment,
        RelationType::LeafUnit,
    ];

    /// The 18 relations an inner node may carry.
    pub fn discourse() -> &'static [RelationType] {
        &Self::ALL[..DISCOURSE_RELATION_COUNT]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationType::Elaboration => "Elaboration",
            RelationType::Joint => "Joint",
            RelationType::SameUnit => "Same-unit",
            RelationType::Background => "Background",
            RelationType::Attribution => "Attribution",
            RelationType::Comparison => "Comparison",
            RelationType::Temporal => "Temporal",
            RelationType::Enablement => "Enablement",
            RelationType::Contrast => "Contrast",
            RelationType::Summary => "Summary",
            RelationType::Condition => "Condition",
            RelationType::MannerMeans => "Manner-means",
            RelationType::Cause => "Cause",
            RelationType::Explanation => "Explanation",
            RelationType::Evaluation => "Evaluation",
            RelationType::TextualOrganization => "Textual-organization",
            RelationType::TopicChange => "Topic-change",
            RelationType::TopicComment => "Topic-comment",
            RelationType::LeafUnit => "Leaf-unit",
        }
    }

    pub fn is_leaf_unit(self) -> bool {
        self == RelationType::LeafUnit
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown relation type {0:?}")]
pub struct UnknownRelation(pub String);

impl FromStr for RelationType {
    type Err = UnknownRelation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|r| r.name().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| UnknownRelation(s.to_string()))
    }
}

impl Serialize for RelationType {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for RelationType {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Nucleus or satellite role of a node relative to its siblings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HierarchyType {
    Nucleus,
    Satellite,
}

impl HierarchyType {
    pub const ALL: [HierarchyType; 2] = [HierarchyType::Nucleus, HierarchyType::Satellite];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for HierarchyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HierarchyType::Nucleus => "nucleus",
            HierarchyType::Satellite => "satellite",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_and_indices_are_stable() {
        for (i, r) in RelationType::ALL.iter().enumerate() {
            assert_eq!(r.index(), i);
            assert_eq!(RelationType::from_index(i), Some(*r));
            assert_eq!(r.name().parse::<RelationType>().unwrap(), *r);
            assert_eq!(r.name().to_uppercase().parse::<RelationType>().unwrap(), *r);
        }
        assert_eq!(RelationType::Contrast.index(), 8);
        assert_eq!(RelationType::LeafUnit.index(), 18);
        assert_eq!(RelationType::discourse().len(), 18);
    }

    #[test]
    fn hyphenated_names_parse_case_insensitively() {
        assert_eq!("same-unit".parse(), Ok(RelationType::SameUnit));
        assert_eq!("textual-organization".parse(), Ok(RelationType::TextualOrganization));
        assert_eq!("Manner-Means".parse(), Ok(RelationType::MannerMeans));
        assert!("argument".parse::<RelationType>().is_err());
        assert!("same_unit".parse::<RelationType>().is_err());
    }
}
