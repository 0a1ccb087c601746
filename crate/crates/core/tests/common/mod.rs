#![allow(dead_code)]

use discourse_lstm::cells::{ModelConfig, ParamKind, Params, Variant};
use discourse_lstm::tree::{DiscourseTree, HierarchyType, NodeId, NodeSpec, RelationType};
use rand::Rng;

/// Random tree with at most `max_nodes` nodes, grown by expanding random
/// leaves. Binary trees use exactly two children per inner node, others
/// two or three.
pub fn random_tree<R: Rng>(rng: &mut R, max_nodes: usize, d_in: usize, binary: bool, doc_id: &str) -> DiscourseTree {
    let target = rng.gen_range(1..=max_nodes);
    let mut children: Vec<Vec<usize>> = vec![Vec::new()];
    while children.len() < target {
        let room = max_nodes - children.len();
        if room < 2 {
            break;
        }
        let k = if binary || room < 3 { 2 } else { rng.gen_range(2..=3) };
        let leaves: Vec<usize> = (0..children.len()).filter(|i| children[*i].is_empty()).collect();
        let pick = leaves[rng.gen_range(0..leaves.len())];
        for _ in 0..k {
            children.push(Vec::new());
            let id = children.len() - 1;
            children[pick].push(id);
        }
    }
    fn spec<R: Rng>(
        rng: &mut R,
        children: &[Vec<usize>],
        id: usize,
        h: Option<HierarchyType>,
        d_in: usize,
    ) -> NodeSpec {
        if children[id].is_empty() {
            let x: Vec<f64> = (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
            NodeSpec::featured(h, &format!("edu {id}"), x)
        } else {
            let rel = RelationType::discourse()[rng.gen_range(0..18)];
            let kids = children[id]
                .iter()
                .map(|c| {
                    let h = if rng.gen_bool(0.5) {
                        HierarchyType::Nucleus
                    } else {
                        HierarchyType::Satellite
                    };
                    spec(rng, children, *c, Some(h), d_in)
                })
                .collect();
            NodeSpec::inner(rel, h, kids)
        }
    }
    let root = spec(rng, &children, 0, None, d_in);
    DiscourseTree::from_spec(doc_id, Some(rng.gen_range(0..2)), root).unwrap()
}

/// Initialized parameters with biases also drawn at random, so every term
/// of the cell equations is exercised.
pub fn random_params<R: Rng>(rng: &mut R, variant: Variant, n: usize, d_in: usize, classes: usize) -> Params {
    let config = ModelConfig::new(variant, n, d_in, classes).unwrap();
    let mut params = Params::init(config, rng).unwrap();
    let kinds: Vec<ParamKind> = params.specs().iter().map(|s| s.kind).collect();
    for (t, kind) in params.tensors_mut().iter_mut().zip(kinds) {
        if kind == ParamKind::Bias {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }
    params
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec(m: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    m.chunks(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn add(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

pub type NodeStates = Vec<(Vec<f64>, Vec<f64>)>;

/// Straight-line evaluator of the cell equations, written against the raw
/// parameter arrays. Returns class probabilities and (c, h) per node id.
pub struct Oracle<'a> {
    params: &'a Params,
    discourse: bool,
    nary: bool,
}

impl<'a> Oracle<'a> {
    pub fn new(params: &'a Params) -> Self {
        let v = params.variant();
        Oracle {
            params,
            discourse: matches!(v, Variant::DiscourseChildSum | Variant::DiscourseNary),
            nary: matches!(v, Variant::Nary | Variant::DiscourseNary),
        }
    }

    fn whole(&self, name: &str) -> &[f64] {
        self.params.get(name).unwrap().data()
    }

    /// U and b tensors carry a leading relation axis in discourse models.
    fn by_relation(&self, name: &str, rel: usize) -> &[f64] {
        let t = self.params.get(name).unwrap();
        if self.discourse {
            let per = t.len() / t.shape()[0];
            &t.data()[rel * per..(rel + 1) * per]
        } else {
            t.data()
        }
    }

    fn hierarchy(&self, name: &str, h: HierarchyType) -> &[f64] {
        let t = self.params.get(name).unwrap();
        let per = t.len() / 2;
        let k = match h {
            HierarchyType::Nucleus => 0,
            HierarchyType::Satellite => 1,
        };
        &t.data()[k * per..(k + 1) * per]
    }

    pub fn forward(&self, tree: &DiscourseTree) -> (Vec<f64>, NodeStates) {
        let mut states = vec![(Vec::new(), Vec::new()); tree.len()];
        self.node(tree, tree.root(), &mut states);
        let h_root = &states[tree.root().0].1;
        let mut logits = matvec(self.whole("W_s"), h_root);
        add(&mut logits, self.whole("b_s"));
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        (exps.iter().map(|e| e / z).collect(), states)
    }

    fn node(&self, tree: &DiscourseTree, id: NodeId, states: &mut NodeStates) {
        let node = tree.node(id);
        let mut hs = Vec::new();
        let mut cs = Vec::new();
        for child in &node.children {
            self.node(tree, *child, states);
            let (c, h) = states[child.0].clone();
            if self.discourse {
                let tau = tree.node(*child).hierarchy.unwrap();
                hs.push(matvec(self.hierarchy("W_h", tau), &h));
                cs.push(matvec(self.hierarchy("W_c", tau), &c));
            } else {
                hs.push(h);
                cs.push(c);
            }
        }
        let rel = node.relation.index();
        let n = self.params.config().n;
        let x = node.features.clone();
        // W x + b for one gate; inner nodes have no input term.
        let base = |g: &str| -> Vec<f64> {
            let mut v = self.by_relation(&format!("b_{g}"), rel).to_vec();
            if let Some(x) = &x {
                add(&mut v, &matvec(self.whole(&format!("W_{g}")), x));
            }
            v
        };
        let mut pre_i = base("i");
        let mut pre_o = base("o");
        let mut pre_u = base("u");
        let mut pre_f: Vec<Vec<f64>> = Vec::new();
        if self.nary {
            assert!(hs.is_empty() || hs.len() == 2);
            for (m, h) in hs.iter().enumerate() {
                add(&mut pre_i, &matvec(self.by_relation(&format!("U_i_{}", m + 1), rel), h));
                add(&mut pre_o, &matvec(self.by_relation(&format!("U_o_{}", m + 1), rel), h));
                add(&mut pre_u, &matvec(self.by_relation(&format!("U_u_{}", m + 1), rel), h));
            }
            for k in 0..hs.len() {
                let mut f = base("f");
                for (m, h) in hs.iter().enumerate() {
                    add(
                        &mut f,
                        &matvec(self.by_relation(&format!("U_f_{}{}", k + 1, m + 1), rel), h),
                    );
                }
                pre_f.push(f);
            }
        } else {
            let mut h_sum = vec![0.0; n];
            for h in &hs {
                add(&mut h_sum, h);
            }
            add(&mut pre_i, &matvec(self.by_relation("U_i", rel), &h_sum));
            add(&mut pre_o, &matvec(self.by_relation("U_o", rel), &h_sum));
            add(&mut pre_u, &matvec(self.by_relation("U_u", rel), &h_sum));
            for h in &hs {
                let mut f = base("f");
                add(&mut f, &matvec(self.by_relation("U_f", rel), h));
                pre_f.push(f);
            }
        }
        let mut c = vec![0.0; n];
        for r in 0..n {
            c[r] = sigmoid(pre_i[r]) * pre_u[r].tanh();
            for (f, ck) in pre_f.iter().zip(&cs) {
                c[r] += sigmoid(f[r]) * ck[r];
            }
        }
        let h = (0..n).map(|r| sigmoid(pre_o[r]) * c[r].tanh()).collect();
        states[id.0] = (c, h);
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
