//! Model parameters for the four cell variants and the softmax head, plus
//! the forward pass over a discourse tree.
//!
//! Parameters live in one flat list of named tensors whose order is fixed by
//! the variant. Discourse variants add a leading relation axis to every
//! recurrent matrix and bias (19 slices, the last one used by leaves) and two
//! `[2, n, n]` hierarchy tensors indexed by nucleus/satellite.

mod forward;

pub use forward::{
    childsum_cell, discourse_childsum_cell, discourse_nary_cell, forward_on_tape, forward_tree, nary_cell,
    predict_corpus, tree_loss, Bound, CellState, Child, ForwardOutput, NodeState, TapeOutput,
};

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tree::{RelationType, RELATION_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "childsum")]
    ChildSum,
    #[serde(rename = "nary")]
    Nary,
    #[serde(rename = "discourse-childsum")]
    DiscourseChildSum,
    #[serde(rename = "discourse-nary")]
    DiscourseNary,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::ChildSum,
        Variant::Nary,
        Variant::DiscourseChildSum,
        Variant::DiscourseNary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ChildSum => "childsum",
            Variant::Nary => "nary",
            Variant::DiscourseChildSum => "discourse-childsum",
            Variant::DiscourseNary => "discourse-nary",
        }
    }

    pub fn is_discourse(self) -> bool {
        matches!(self, Variant::DiscourseChildSum | Variant::DiscourseNary)
    }

    pub fn is_nary(self) -> bool {
        matches!(self, Variant::Nary | Variant::DiscourseNary)
    }

    /// The variant with the same aggregation but without discourse tensors.
    pub fn plain(self) -> Variant {
        match self {
            Variant::ChildSum | Variant::DiscourseChildSum => Variant::ChildSum,
            Variant::Nary | Variant::DiscourseNary => Variant::Nary,
        }
    }

    pub fn discourse(self) -> Variant {
        match self {
            Variant::ChildSum | Variant::DiscourseChildSum => Variant::DiscourseChildSum,
            Variant::Nary | Variant::DiscourseNary => Variant::DiscourseNary,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Memory size.
    pub n: usize,
    pub d_in: usize,
    pub classes: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, n: usize, d_in: usize, classes: usize) -> Result<Self> {
        let cfg = ModelConfig {
            variant,
            n,
            d_in,
            classes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d_in == 0 || self.classes == 0 {
            return Err(Error::Config(format!(
                "n, d_in and classes must be positive (got {}, {}, {})",
                self.n, self.d_in, self.classes
            )));
        }
        Ok(())
    }

    /// Extent of the relation axis; 1 for plain variants, which have none.
    pub fn relations(&self) -> usize {
        if self.variant.is_discourse() {
            RELATION_COUNT
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Output,
    Update,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Update];

    fn tag(self) -> &'static str {
        match self {
            Gate::Input => "i",
            Gate::Forget => "f",
            Gate::Output => "o",
            Gate::Update => "u",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Weights are regularized and subject to weight dropout; biases are not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Recurrent {
    ChildSum([usize; 4]),
    /// `gates[g][m]` for the input, output and update gates (the forget slot
    /// is unused); `forget[k][m]` multiplies child m's state in child k's
    /// forget gate.
    Nary {
        gates: [[usize; 2]; 4],
        forget: [[usize; 2]; 2],
    },
}

/// Positions of every tensor in the flat parameter list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    specs: Vec<ParamSpec>,
    w: [usize; 4],
    u: Recurrent,
    b: [usize; 4],
    /// (W^(c), W^(h)).
    hierarchy: Option<(usize, usize)>,
    head_w: usize,
    head_b: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Layout {
        let n = cfg.n;
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, kind| {
            specs.push(ParamSpec { name, shape, kind });
            specs.len() - 1
        };
        let rec_shape = if cfg.variant.is_discourse() {
            vec![RELATION_COUNT, n, n]
        } else {
            vec![n, n]
        };
        let bias_shape = if cfg.variant.is_discourse() {
            vec![RELATION_COUNT, n]
        } else {
            vec![n]
        };

        let w = Gate::ALL.map(|g| push(format!("W_{}", g.tag()), vec![n, cfg.d_in], ParamKind::Weight));
        let u = if cfg.variant.is_nary() {
            let mut gates = [[usize::MAX; 2]; 4];
            for g in [Gate::Input, Gate::Output, Gate::Update] {
                for (m, slot) in gates[g.index()].iter_mut().enumerate() {
                    *slot = push(format!("U_{}_{}", g.tag(), m + 1), rec_shape.clone(), ParamKind::Weight);
                }
            }
            let mut forget = [[usize::MAX; 2]; 2];
            for (k, row) in forget.iter_mut().enumerate() {
                for (m, slot) in row.iter_mut().enumerate() {
                    *slot = push(format!("U_f_{}{}", k + 1, m + 1), rec_shape.clone(), ParamKind::Weight);
                }
            }
            Recurrent::Nary { gates, forget }
        } else {
            Recurrent::ChildSum(Gate::ALL.map(|g| push(format!("U_{}", g.tag()), rec_shape.clone(), ParamKind::Weight)))
        };
        let b = Gate::ALL.map(|g| push(format!("b_{}", g.tag()), bias_shape.clone(), ParamKind::Bias));
        let hierarchy = cfg.variant.is_discourse().then(|| {
            (
                push("W_c".into(), vec![2, n, n], ParamKind::Weight),
                push("W_h".into(), vec![2, n, n], ParamKind::Weight),
            )
        });
        let head_w = push("W_s".into(), vec![cfg.classes, n], ParamKind::Weight);
        let head_b = push("b_s".into(), vec![cfg.classes], ParamKind::Bias);
        Layout {
            specs,
            w,
            u,
            b,
            hierarchy,
            head_w,
            head_b,
        }
    }
}

/// Parameters of one model: the tensors in layout order plus their config.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    config: ModelConfig,
    layout: Layout,
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let tensors = layout.specs.iter().map(|s| Tensor::zeros(&s.shape)).collect();
        Ok(Params {
            config,
            layout,
            tensors,
        })
    }

    /// Weights uniform in ±1/√n, biases zero. Tensors are drawn in layout
    /// order, so a seeded `rng` fixes every byte.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut params = Params::zeros(config)?;
        let bound = 1.0 / (config.n as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        for (spec, t) in params.layout.specs.iter().zip(&mut params.tensors) {
            if spec.kind == ParamKind::Weight {
                for v in t.data_mut() {
                    *v = dist.sample(rng);
                }
            }
        }
        Ok(params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layout.specs.iter().position(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    /// Replaces every tensor, keeping the layout. Shapes must match.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Params> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, got {}",
                self.tensors.len(),
                tensors.len()
            )));
        }
        for (spec, t) in self.layout.specs.iter().zip(&tensors) {
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Config(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(Params {
            config: self.config,
            layout: self.layout.clone(),
            tensors,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// The discourse model that computes exactly what this plain model
    /// computes: every relation slice is a copy of the plain tensor and both
    /// hierarchy tensors are identity stacks.
    pub fn lift_to_discourse(&self) -> Result<Params> {
        if self.config.variant.is_discourse() {
            return Err(Error::UnsupportedVariant(format!(
                "{} is already a discourse variant",
                self.config.variant
            )));
        }
        let config = ModelConfig {
            variant: self.config.variant.discourse(),
            ..self.config
        };
        let mut lifted = Params::zeros(config)?;
        let identity = Tensor::identity(config.n);
        let eye2 = Tensor::stack(&[identity.clone(), identity])?;
        for (spec, t) in lifted.layout.specs.iter().zip(&mut lifted.tensors) {
            *t = match self.get(&spec.name) {
                Some(src) if src.shape() == spec.shape.as_slice() => src.clone(),
                Some(src) => Tensor::stack(&vec![src.clone(); RELATION_COUNT])?,
                None => eye2.clone(),
            };
        }
        Ok(lifted)
    }

    pub fn to_json(&self) -> String {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            variant: self.config.variant,
            n: self.config.n,
            d_in: self.config.d_in,
            classes: self.config.classes,
            relations: self.config.relations(),
            relation_index: if self.config.variant.is_discourse() {
                RelationType::ALL.iter().map(|r| r.name().to_string()).collect()
            } else {
                Vec::new()
            },
            tensors: self
                .layout
                .specs
                .iter()
                .zip(&self.tensors)
                .map(|(s, t)| NamedTensor {
                    name: s.name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&ckpt).expect("checkpoints always serialize")
    }

    pub fn from_json(text: &str) -> Result<Params> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::json("checkpoint", e))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("unsupported checkpoint format {:?}", ckpt.format)));
        }
        let config = ModelConfig::new(ckpt.variant, ckpt.n, ckpt.d_in, ckpt.classes)?;
        if ckpt.relations != config.relations() {
            return Err(Error::Data(format!(
                "checkpoint has {} relations, {} expects {}",
                ckpt.relations,
                config.variant,
                config.relations()
            )));
        }
        if config.variant.is_discourse() {
            let expected: Vec<&str> = RelationType::ALL.iter().map(|r| r.name()).collect();
            if ckpt.relation_index != expected {
                return Err(Error::Data("checkpoint relation index table does not match".into()));
            }
        }
        let template = Params::zeros(config)?;
        if ckpt.tensors.len() != template.tensors.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, {} expects {}",
                ckpt.tensors.len(),
                config.variant,
                template.tensors.len()
            )));
        }
        let mut tensors = Vec::with_capacity(ckpt.tensors.len());
        for (spec, named) in template.layout.specs.iter().zip(ckpt.tensors) {
            if named.name != spec.name {
                return Err(Error::Data(format!(
                    "checkpoint tensor {:?} where {:?} was expected",
                    named.name, spec.name
                )));
            }
            tensors.push(Tensor::new(named.shape, named.data)?);
        }
        template.with_tensors(tensors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Params> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Params::from_json(&text)
    }
}

const CHECKPOINT_FORMAT: &str = "discourse-lstm-checkpoint/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    variant: Variant,
    n: usize,
    d_in: usize,
    classes: usize,
    relations: usize,
    relation_index: Vec<String>,
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(variant: Variant) -> ModelConfig {
        ModelConfig::new(variant, 10, 1, 2).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = Params::init(cfg(Variant::DiscourseNary), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = Params::init(cfg(Variant::DiscourseNary), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let bound = 1.0 / 10f64.sqrt();
        for (spec, t) in a.specs().iter().zip(a.tensors()) {
            match spec.kind {
                ParamKind::Weight => assert!(t.data().iter().all(|v| v.abs() <= bound)),
                ParamKind::Bias => assert!(t.data().iter().all(|v| *v == 0.0)),
            }
        }
    }

    #[test]
    fn shapes_follow_the_variant() {
        let p = Params::zeros(cfg(Variant::ChildSum)).unwrap();
        assert_eq!(p.get("W_i").unwrap().shape(), &[10, 1]);
        assert_eq!(p.get("U_f").unwrap().shape(), &[10, 10]);
        assert_eq!(p.get("W_s").unwrap().shape(), &[2, 10]);
        assert!(p.get("W_h").is_none());

        let p = Params::zeros(cfg(Variant::DiscourseChildSum)).unwrap();
        assert_eq!(p.get("U_i").unwrap().shape(), &[19, 10, 10]);
        assert_eq!(p.get("b_o").unwrap().shape(), &[19, 10]);
        assert_eq!(p.get("W_c").unwrap().shape(), &[2, 10, 10]);

        let p = Params::zeros(cfg(Variant::Nary)).unwrap();
        let names: Vec<&str> = p.specs().iter().map(|s| s.name.as_str()).collect();
        for name in [
            "U_i_1", "U_i_2", "U_o_2", "U_u_1", "U_f_11", "U_f_12", "U_f_21", "U_f_22",
        ] {
            assert!(names.contains(&name), "{name}");
        }
        assert!(!names.contains(&"U_f_1"));
    }

    #[test]
    fn invalid_extents_are_config_errors() {
        assert!(matches!(
            ModelConfig::new(Variant::Nary, 0, 1, 2),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ModelConfig::new(Variant::Nary, 4, 1, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        for variant in Variant::ALL {
            let p = Params::init(cfg(variant), &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
            let back = Params::from_json(&p.to_json()).unwrap();
            for (a, b) in p.tensors().iter().zip(back.tensors()) {
                let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
                assert_eq!(bits_a, bits_b);
            }
            assert_eq!(p.to_json(), back.to_json());
        }
    }

    #[test]
    fn checkpoint_rejects_mismatches() {
        let p = Params::zeros(cfg(Variant::DiscourseChildSum)).unwrap();
        let json = p.to_json().replace("Contrast", "Argument");
        assert!(Params::from_json(&json).is_err());
        let json = p.to_json().replace("\"n\":10", "\"n\":11");
        assert!(Params::from_json(&json).is_err());
    }

    #[test]
    fn lifting_copies_slices_and_sets_identity() {
        let p = Params::init(cfg(Variant::Nary), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let d = p.lift_to_discourse().unwrap();
        assert_eq!(d.variant(), Variant::DiscourseNary);
        let u = d.get("U_f_21").unwrap();
        for r in 0..RELATION_COUNT {
            assert_eq!(u.slice_data(r).unwrap(), p.get("U_f_21").unwrap().data());
        }
        assert_eq!(d.get("W_h").unwrap().slice(1).unwrap(), Tensor::identity(10));
        assert!(d.lift_to_discourse().is_err());
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("lstm".parse::<Variant>().is_err());
    }
}
