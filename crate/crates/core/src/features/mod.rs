//! Leaf featurization: lexicon sentiment scores and averaged word
//! embeddings, after tokenization, lowercasing and optional stemming.
//!
//! The two modes treat unknown words differently. A lexicon miss scores
//! zero but still counts towards the word total; an embedding miss is
//! skipped entirely.

mod porter;

pub use porter::stem;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::exact_sum;
use crate::tree::DiscourseTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pipeline {
    pub lowercase: bool,
    /// Stem tokens before lookup; set this when the resource holds stems.
    pub stem: bool,
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline {
            lowercase: true,
            stem: false,
        }
    }
}

impl Pipeline {
    /// Tokens ready for resource lookup.
    pub fn words(&self, text: &str) -> Vec<String> {
        let mut words = tokenize(text, self.lowercase);
        if self.stem {
            for w in &mut words {
                *w = stem(w);
            }
        }
        words
    }
}

/// Splits on Unicode whitespace and strips non-alphanumeric characters from
/// both ends of each token; empty tokens are dropped.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polarity {
    pub pos: f64,
    pub neg: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<String, Polarity>,
}

impl Lexicon {
    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64, f64)>,
        S: Into<String>,
    {
        let mut lex = Lexicon::default();
        for (word, pos, neg) in entries {
            let word = word.into();
            for score in [pos, neg] {
                if !(0.0..=1.0).contains(&score) {
                    return Err(Error::Data(format!(
                        "lexicon score {score} for {word:?} outside [0, 1]"
                    )));
                }
            }
            lex.entries.insert(word, Polarity { pos, neg });
        }
        Ok(lex)
    }

    /// Reads `word<TAB>pos<TAB>neg` lines; a first line whose scores do not
    /// parse is taken as a header.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let parsed = match cols.as_slice() {
                [w, p, n] => p
                    .trim()
                    .parse::<f64>()
                    .and_then(|p| n.trim().parse::<f64>().map(|n| (w.to_string(), p, n)))
                    .ok(),
                _ => None,
            };
            match parsed {
                Some(entry) => entries.push(entry),
                None if i == 0 => continue,
                None => {
                    return Err(Error::Data(format!(
                        "{}:{}: expected word<TAB>pos<TAB>neg",
                        path.display(),
                        i + 1
                    )))
                }
            }
        }
        Lexicon::from_entries(entries)
    }

    pub fn get(&self, word: &str) -> Option<Polarity> {
        self.entries.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        })
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let word = word.into();
        if vector.len() != self.dim {
            return Err(Error::Data(format!(
                "embedding for {word:?} has dimension {}, table has {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite embedding for {word:?}")));
        }
        self.vectors.insert(word, vector);
        Ok(())
    }

    /// Reads the whitespace-delimited `word v1 ... vd` text format. An optional
    /// `count dim` header line is accepted; otherwise `d` comes from the first
    /// vector.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            if i == 0 && cols.len() == 2 && cols.iter().all(|c| c.parse::<usize>().is_ok()) {
                table = Some(EmbeddingTable::new(cols[1].parse().unwrap_or(0))?);
                continue;
            }
            let values = cols[1..]
                .iter()
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
            let t = match &mut table {
                Some(t) => t,
                None => table.insert(EmbeddingTable::new(values.len())?),
            };
            t.insert(cols[0], values)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        table.ok_or_else(|| Error::EmptyInput(format!("{} holds no vectors", path.display())))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Mean of `pos - neg` over every word of the EDU. Unknown words count in
/// the denominator with score zero; an empty EDU scores zero.
pub fn sentiment_score(text: &str, lexicon: &Lexicon, pipeline: &Pipeline) -> Vec<f64> {
    let words = pipeline.words(text);
    if words.is_empty() {
        return vec![0.0];
    }
    let total = exact_sum(words.iter().filter_map(|w| lexicon.get(w)).map(|p| p.pos - p.neg));
    vec![total / words.len() as f64]
}

/// Mean embedding of the in-vocabulary words; all-unknown gives zeros.
/// Sums are correctly rounded, so word order cannot change a bit.
pub fn embed_average(text: &str, table: &EmbeddingTable, pipeline: &Pipeline) -> Vec<f64> {
    let words = pipeline.words(text);
    let hits: Vec<&[f64]> = words.iter().filter_map(|w| table.get(w)).collect();
    if hits.is_empty() {
        return vec![0.0; table.dim()];
    }
    (0..table.dim())
        .map(|k| exact_sum(hits.iter().map(|v| v[k])) / hits.len() as f64)
        .collect()
}

/// Feature resource used for a run; fixes the feature dimension.
#[derive(Debug, Clone, Copy)]
pub enum FeatureSource<'a> {
    Lexicon(&'a Lexicon),
    Embeddings(&'a EmbeddingTable),
}

impl FeatureSource<'_> {
    pub fn dim(&self) -> usize {
        match self {
            FeatureSource::Lexicon(_) => 1,
            FeatureSource::Embeddings(t) => t.dim(),
        }
    }

    pub fn features(&self, text: &str, pipeline: &Pipeline) -> Vec<f64> {
        match self {
            FeatureSource::Lexicon(lex) => sentiment_score(text, lex, pipeline),
            FeatureSource::Embeddings(table) => embed_average(text, table, pipeline),
        }
    }
}

/// Copy of `tree` with features computed from the text of every leaf.
/// Existing features are overwritten; text is kept.
pub fn featurize_tree(tree: &DiscourseTree, pipeline: &Pipeline, source: FeatureSource<'_>) -> Result<DiscourseTree> {
    let mut nodes = tree.nodes().to_vec();
    for node in nodes.iter_mut().filter(|n| n.is_leaf()) {
        let text = node.text.as_deref().ok_or_else(|| Error::Featurize {
            node: node.id.0,
            message: format!("leaf of tree {} has no text", tree.doc_id),
        })?;
        node.features = Some(source.features(text, pipeline));
    }
    DiscourseTree::from_nodes(tree.doc_id.clone(), tree.label, nodes, tree.root())
}

pub fn featurize_corpus(
    trees: &[DiscourseTree],
    pipeline: &Pipeline,
    source: FeatureSource<'_>,
) -> Result<Vec<DiscourseTree>> {
    trees.par_iter().map(|t| featurize_tree(t, pipeline, source)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::tests::fig2;

    fn toy_lexicon() -> Lexicon {
        Lexicon::from_entries([("good", 0.5, 0.1), ("bad", 0.0, 0.4)]).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("I enjoyed this comedy.", true),
            vec!["i", "enjoyed", "this", "comedy"]
        );
        assert!(tokenize("", true).is_empty());
        assert_eq!(tokenize("well-known 'classic'!", true), vec!["well-known", "classic"]);
        assert_eq!(tokenize("Good  -- BAD", false), vec!["Good", "BAD"]);
    }

    #[test]
    fn sentiment_score_examples() {
        let lex = toy_lexicon();
        let p = Pipeline::default();
        assert_eq!(sentiment_score("nothing to see", &lex, &p), vec![0.0]);
        let v = sentiment_score("good good bad", &lex, &p)[0];
        assert!((v - 0.4 / 3.0).abs() < 1e-15, "{v}");
        let v = sentiment_score("good", &lex, &p)[0];
        assert!((v - 0.4).abs() < 1e-15);
        assert_eq!(sentiment_score("", &lex, &p), vec![0.0]);
    }

    #[test]
    fn stemming_applies_before_lookup() {
        let lex = Lexicon::from_entries([("enjoy", 0.625, 0.0)]).unwrap();
        let plain = Pipeline::default();
        let stemmed = Pipeline {
            stem: true,
            ..Pipeline::default()
        };
        assert_eq!(sentiment_score("Enjoyed", &lex, &plain), vec![0.0]);
        assert_eq!(sentiment_score("Enjoyed", &lex, &stemmed), vec![0.625]);
    }

    #[test]
    fn lexicon_rejects_out_of_range_scores() {
        assert!(Lexicon::from_entries([("x", 1.5, 0.0)]).is_err());
        assert!(Lexicon::from_entries([("x", 0.2, -0.1)]).is_err());
    }

    #[test]
    fn embed_average_examples() {
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert("a", vec![1.0, 2.0]).unwrap();
        t.insert("b", vec![3.0, 4.0]).unwrap();
        let p = Pipeline::default();
        assert_eq!(embed_average("a b", &t, &p), vec![2.0, 3.0]);
        assert_eq!(embed_average("a", &t, &p), vec![1.0, 2.0]);
        assert_eq!(embed_average("a zzz b", &t, &p), vec![2.0, 3.0]);
        assert_eq!(embed_average("zzz", &t, &p), vec![0.0, 0.0]);
        assert!(t.insert("c", vec![1.0]).is_err());
    }

    #[test]
    fn featurize_fig2_lexicon_mode() {
        let lex = Lexicon::from_entries([("enjoyed", 0.75, 0.0), ("bad", 0.0, 0.625)]).unwrap();
        let t = featurize_tree(&fig2(), &Pipeline::default(), FeatureSource::Lexicon(&lex)).unwrap();
        let leaves = t.leaves();
        assert_eq!(leaves.len(), 3);
        for id in &leaves {
            assert_eq!(t.node(*id).features.as_ref().unwrap().len(), 1);
            assert!(t.node(*id).text.is_some());
        }
        let again = featurize_tree(&t, &Pipeline::default(), FeatureSource::Lexicon(&lex)).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn featurize_embedding_mode_dimension() {
        let mut table = EmbeddingTable::new(50).unwrap();
        table
            .insert("comedy", (0..50).map(|i| i as f64 / 50.0).collect())
            .unwrap();
        let t = featurize_tree(&fig2(), &Pipeline::default(), FeatureSource::Embeddings(&table)).unwrap();
        assert_eq!(t.feature_dim(), Some(50));
    }

    #[test]
    fn featurize_without_text_fails() {
        let mut nodes = fig2().into_nodes();
        nodes[2].text = None;
        nodes[2].features = Some(vec![0.1]);
        let t = DiscourseTree::from_nodes("f", None, nodes, crate::tree::NodeId(0)).unwrap();
        let lex = toy_lexicon();
        let err = featurize_tree(&t, &Pipeline::default(), FeatureSource::Lexicon(&lex)).unwrap_err();
        assert!(matches!(err, Error::Featurize { node: 2, .. }));
    }

    #[test]
    fn loaders_read_files() {
        let dir = tempfile::tempdir().unwrap();
        let lex_path = dir.path().join("lex.tsv");
        fs::write(&lex_path, "word\tpos\tneg\ngood\t0.5\t0.1\nbad\t0\t0.4\n").unwrap();
        let lex = Lexicon::load(&lex_path).unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.get("bad"), Some(Polarity { pos: 0.0, neg: 0.4 }));

        let emb_path = dir.path().join("emb.txt");
        fs::write(&emb_path, "2 3\nthe 0.1 0.2 0.3\nfilm -1 0 1\n").unwrap();
        let table = EmbeddingTable::load(&emb_path).unwrap();
        assert_eq!(table.dim(), 3);
        assert_eq!(table.get("film"), Some(&[-1.0, 0.0, 1.0][..]));

        fs::write(&emb_path, "the 0.1 0.2\nfilm 1\n").unwrap();
        assert!(EmbeddingTable::load(&emb_path).is_err());
    }

    use proptest::prelude::*;

    const VOCAB: [&str; 8] = ["good", "bad", "fine", "dull", "plot", "the", "zzz", "qq"];

    fn arb_lexicon() -> impl Strategy<Value = Lexicon> {
        proptest::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), VOCAB.len() - 2)
            .prop_map(|scores| Lexicon::from_entries(VOCAB.iter().zip(scores).map(|(w, (p, n))| (*w, p, n))).unwrap())
    }

    fn arb_table() -> impl Strategy<Value = EmbeddingTable> {
        proptest::collection::vec(proptest::collection::vec(-1e3..1e3f64, 3), VOCAB.len() - 2).prop_map(|rows| {
            let mut t = EmbeddingTable::new(3).unwrap();
            for (w, v) in VOCAB.iter().zip(rows) {
                t.insert(*w, v).unwrap();
            }
            t
        })
    }

    fn arb_words() -> impl Strategy<Value = (Vec<&'static str>, Vec<&'static str>)> {
        proptest::collection::vec(proptest::sample::select(VOCAB.to_vec()), 0..20)
            .prop_flat_map(|w| (Just(w.clone()), Just(w).prop_shuffle()))
    }

    proptest! {
        #[test]
        fn lexicon_scores_stay_in_unit_range(lex in arb_lexicon(), (words, _) in arb_words()) {
            let v = sentiment_score(&words.join(" "), &lex, &Pipeline::default());
            prop_assert_eq!(v.len(), 1);
            prop_assert!((-1.0..=1.0).contains(&v[0]), "{}", v[0]);
        }

        #[test]
        fn featurizers_ignore_word_order(lex in arb_lexicon(), table in arb_table(), (words, shuffled) in arb_words()) {
            let p = Pipeline::default();
            let (a, b) = (words.join(" "), shuffled.join(" "));
            prop_assert_eq!(sentiment_score(&a, &lex, &p), sentiment_score(&b, &lex, &p));
            prop_assert_eq!(embed_average(&a, &table, &p), embed_average(&b, &table, &p));
        }

        #[test]
        fn featurizers_are_deterministic(lex in arb_lexicon(), table in arb_table(), (words, _) in arb_words()) {
            let p = Pipeline::default();
            let a = words.join(" ");
            prop_assert_eq!(sentiment_score(&a, &lex, &p), sentiment_score(&a, &lex, &p));
            prop_assert_eq!(embed_average(&a, &table, &p), embed_average(&a, &table, &p));
        }
    }
}
