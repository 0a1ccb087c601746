use rayon::prelude::*;

use super::{Gate, Params, Recurrent};
use crate::error::{Error, Result};
use crate::tensor::{softmax, Tape, Tensor, Var};
use crate::tree::{DiscourseTree, HierarchyType, NodeId, RelationType};

/// Memory cell and hidden state of one node, as tape values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellState {
    pub c: Var,
    pub h: Var,
}

/// A child's state together with its nucleus/satellite label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Child {
    pub node: NodeId,
    pub state: CellState,
    pub hierarchy: Option<HierarchyType>,
}

/// Parameters recorded on a tape. Relation and hierarchy slices are taken
/// lazily and reused within the tape.
pub struct Bound<'p> {
    params: &'p Params,
    vars: Vec<Var>,
    /// Indexed by parameter, then by leading-axis row.
    slices: Vec<Vec<Option<Var>>>,
}

impl<'p> Bound<'p> {
    pub fn new(tape: &mut Tape, params: &'p Params) -> Self {
        let vars = params.tensors().iter().map(|t| tape.leaf(t.clone())).collect();
        Bound {
            params,
            vars,
            slices: vec![Vec::new(); params.tensors().len()],
        }
    }

    /// Binds values already on the tape (for instance masked weights) in
    /// place of the raw parameters. `vars` follows the layout order.
    pub fn with_vars(tape: &Tape, params: &'p Params, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != params.tensors().len() {
            return Err(Error::Config(format!(
                "expected {} parameter values, got {}",
                params.tensors().len(),
                vars.len()
            )));
        }
        for (spec, v) in params.specs().iter().zip(&vars) {
            if tape.value(*v).shape() != spec.shape.as_slice() {
                return Err(Error::Config(format!(
                    "value bound to {} has the wrong shape",
                    spec.name
                )));
            }
        }
        Ok(Bound {
            params,
            vars,
            slices: vec![Vec::new(); params.tensors().len()],
        })
    }

    pub fn params(&self) -> &Params {
        self.params
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn whole(&self, index: usize) -> Var {
        self.vars[index]
    }

    fn slice(&mut self, tape: &mut Tape, index: usize, row: usize) -> Result<Var> {
        let memo = &mut self.slices[index];
        if let Some(Some(v)) = memo.get(row) {
            return Ok(*v);
        }
        let v = tape.slice(self.vars[index], row)?;
        if memo.len() <= row {
            memo.resize(row + 1, None);
        }
        memo[row] = Some(v);
        Ok(v)
    }

    /// A recurrent matrix or bias, sliced to relation `rel` for discourse
    /// variants.
    fn relational(&mut self, tape: &mut Tape, index: usize, rel: Option<usize>) -> Result<Var> {
        match rel {
            Some(r) => self.slice(tape, index, r),
            None => Ok(self.whole(index)),
        }
    }
}

fn add_all(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    match terms {
        [single] => Ok(*single),
        _ => Ok(tape.sum(terms)?),
    }
}

fn check_state(tape: &Tape, n: usize, node: NodeId, state: &CellState) -> Result<()> {
    for (name, v) in [("c", state.c), ("h", state.h)] {
        if tape.value(v).shape() != [n] {
            return Err(Error::State {
                node: node.0,
                message: format!(
                    "child state {name} has shape {:?}, expected [{n}]",
                    tape.value(v).shape()
                ),
            });
        }
    }
    Ok(())
}

/// Shared gate and memory arithmetic. `hs`/`cs` are the (possibly
/// hierarchy-transformed) child states; `rel` selects the relation slice.
fn lstm(
    tape: &mut Tape,
    p: &mut Bound<'_>,
    node: NodeId,
    x: Option<Var>,
    hs: &[Var],
    cs: &[Var],
    rel: Option<usize>,
) -> Result<CellState> {
    let layout = &p.params.layout;
    let (w, b, u) = (layout.w, layout.b, layout.u.clone());

    let pre = |tape: &mut Tape, p: &mut Bound<'_>, g: Gate, rec: Vec<Var>| -> Result<Var> {
        let mut terms = Vec::with_capacity(rec.len() + 2);
        if let Some(x) = x {
            terms.push(tape.matvec(p.whole(w[g.index()]), x)?);
        }
        terms.extend(rec);
        terms.push(p.relational(tape, b[g.index()], rel)?);
        add_all(tape, &terms)
    };

    let mut forget = Vec::with_capacity(hs.len());
    let (i, o, u_gate) = match &u {
        Recurrent::ChildSum(idx) => {
            let h_sum = if hs.is_empty() { None } else { Some(add_all(tape, hs)?) };
            let gate = |tape: &mut Tape, p: &mut Bound<'_>, g: Gate| -> Result<Var> {
                let rec = match h_sum {
                    Some(hs) => {
                        let mat = p.relational(tape, idx[g.index()], rel)?;
                        vec![tape.matvec(mat, hs)?]
                    }
                    None => Vec::new(),
                };
                pre(tape, p, g, rec)
            };
            let i = gate(tape, p, Gate::Input)?;
            let o = gate(tape, p, Gate::Output)?;
            let u_gate = gate(tape, p, Gate::Update)?;
            for h_k in hs {
                let uf = p.relational(tape, idx[Gate::Forget.index()], rel)?;
                let rec = vec![tape.matvec(uf, *h_k)?];
                forget.push(pre(tape, p, Gate::Forget, rec)?);
            }
            (i, o, u_gate)
        }
        Recurrent::Nary { gates, forget: uf } => {
            if !(hs.is_empty() || hs.len() == 2) {
                return Err(Error::Arity {
                    node: node.0,
                    found: hs.len(),
                });
            }
            let positional = |tape: &mut Tape, p: &mut Bound<'_>, mats: [usize; 2]| -> Result<Vec<Var>> {
                let mut rec = Vec::with_capacity(hs.len());
                for (m, h_m) in hs.iter().enumerate() {
                    let mat = p.relational(tape, mats[m], rel)?;
                    rec.push(tape.matvec(mat, *h_m)?);
                }
                Ok(rec)
            };
            let mut gate_vals = [None; 4];
            for g in [Gate::Input, Gate::Output, Gate::Update] {
                let rec = positional(tape, p, gates[g.index()])?;
                gate_vals[g.index()] = Some(pre(tape, p, g, rec)?);
            }
            for row in uf.iter().take(hs.len()) {
                let rec = positional(tape, p, *row)?;
                forget.push(pre(tape, p, Gate::Forget, rec)?);
            }
            let get = |g: Gate| gate_vals[g.index()].expect("gate computed above");
            (get(Gate::Input), get(Gate::Output), get(Gate::Update))
        }
    };

    let i = tape.sigmoid(i)?;
    let o = tape.sigmoid(o)?;
    let u_gate = tape.tanh(u_gate)?;
    let mut c_terms = vec![tape.mul(i, u_gate)?];
    for (f_k, c_k) in forget.into_iter().zip(cs) {
        let f_k = tape.sigmoid(f_k)?;
        c_terms.push(tape.mul(f_k, *c_k)?);
    }
    let c = add_all(tape, &c_terms)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok(CellState { c, h })
}

fn expect_variant(p: &Bound<'_>, discourse: bool, nary: bool, cell: &str) -> Result<()> {
    let v = p.params.variant();
    if v.is_discourse() != discourse || v.is_nary() != nary {
        return Err(Error::UnsupportedVariant(format!("{cell} with {v} parameters")));
    }
    Ok(())
}

fn split(tape: &Tape, n: usize, node: NodeId, children: &[CellState]) -> Result<(Vec<Var>, Vec<Var>)> {
    for s in children {
        check_state(tape, n, node, s)?;
    }
    Ok((
        children.iter().map(|s| s.h).collect(),
        children.iter().map(|s| s.c).collect(),
    ))
}

/// ĥ_k = W^(h)[τ_k] h_k and ĉ_k = W^(c)[τ_k] c_k for every child.
fn transform(tape: &mut Tape, p: &mut Bound<'_>, children: &[Child]) -> Result<(Vec<Var>, Vec<Var>)> {
    let (wc, wh) = p
        .params
        .layout
        .hierarchy
        .expect("discourse variants carry hierarchy tensors");
    let n = p.params.config().n;
    let mut hs = Vec::with_capacity(children.len());
    let mut cs = Vec::with_capacity(children.len());
    for child in children {
        check_state(tape, n, child.node, &child.state)?;
        let tau = child
            .hierarchy
            .ok_or(Error::MissingHierarchy { node: child.node.0 })?
            .index();
        let h_mat = p.slice(tape, wh, tau)?;
        let c_mat = p.slice(tape, wc, tau)?;
        hs.push(tape.matvec(h_mat, child.state.h)?);
        cs.push(tape.matvec(c_mat, child.state.c)?);
    }
    Ok((hs, cs))
}

/// Child-sum Tree-LSTM cell. `x` is `None` for a zero input; an empty
/// `children` slice is a leaf.
pub fn childsum_cell(
    tape: &mut Tape,
    p: &mut Bound<'_>,
    node: NodeId,
    x: Option<Var>,
    children: &[CellState],
) -> Result<CellState> {
    expect_variant(p, false, false, "childsum_cell")?;
    let (hs, cs) = split(tape, p.params.config().n, node, children)?;
    lstm(tape, p, node, x, &hs, &cs, None)
}

/// N-ary Tree-LSTM cell with N = 2; `children` is empty or in position order.
pub fn nary_cell(
    tape: &mut Tape,
    p: &mut Bound<'_>,
    node: NodeId,
    x: Option<Var>,
    children: &[CellState],
) -> Result<CellState> {
    expect_variant(p, false, true, "nary_cell")?;
    let (hs, cs) = split(tape, p.params.config().n, node, children)?;
    lstm(tape, p, node, x, &hs, &cs, None)
}

pub fn discourse_childsum_cell(
    tape: &mut Tape,
    p: &mut Bound<'_>,
    node: NodeId,
    x: Option<Var>,
    children: &[Child],
    relation: RelationType,
) -> Result<CellState> {
    expect_variant(p, true, false, "discourse_childsum_cell")?;
    let (hs, cs) = transform(tape, p, children)?;
    lstm(tape, p, node, x, &hs, &cs, Some(relation.index()))
}

pub fn discourse_nary_cell(
    tape: &mut Tape,
    p: &mut Bound<'_>,
    node: NodeId,
    x: Option<Var>,
    children: &[Child],
    relation: RelationType,
) -> Result<CellState> {
    expect_variant(p, true, true, "discourse_nary_cell")?;
    if !(children.is_empty() || children.len() == 2) {
        return Err(Error::Arity {
            node: node.0,
            found: children.len(),
        });
    }
    let (hs, cs) = transform(tape, p, children)?;
    lstm(tape, p, node, x, &hs, &cs, Some(relation.index()))
}

/// Root logits plus the state of every node, indexed by node id.
#[derive(Debug, Clone)]
pub struct TapeOutput {
    pub logits: Var,
    pub states: Vec<CellState>,
}

/// Records the whole tree in postorder. Leaves take their features as input,
/// inner nodes a zero input.
pub fn forward_on_tape(tape: &mut Tape, p: &mut Bound<'_>, tree: &DiscourseTree) -> Result<TapeOutput> {
    let cfg = *p.params.config();
    let variant = cfg.variant;
    let mut states: Vec<Option<CellState>> = vec![None; tree.len()];
    for id in tree.postorder() {
        let node = tree.node(id);
        let x = if node.is_leaf() {
            let features = node.features.as_ref().ok_or_else(|| Error::State {
                node: id.0,
                message: format!("leaf of tree {} is not featurized", tree.doc_id),
            })?;
            if features.len() != cfg.d_in {
                return Err(Error::State {
                    node: id.0,
                    message: format!(
                        "feature dimension {} but the model expects {}",
                        features.len(),
                        cfg.d_in
                    ),
                });
            }
            Some(tape.leaf(Tensor::vector(features.clone())))
        } else {
            None
        };
        let child = |c: &NodeId| states[c.0].expect("postorder visits children first");
        let state = if variant.is_discourse() {
            let children: Vec<Child> = node
                .children
                .iter()
                .map(|c| Child {
                    node: *c,
                    state: child(c),
                    hierarchy: tree.node(*c).hierarchy,
                })
                .collect();
            if variant.is_nary() {
                discourse_nary_cell(tape, p, id, x, &children, node.relation)?
            } else {
                discourse_childsum_cell(tape, p, id, x, &children, node.relation)?
            }
        } else {
            let children: Vec<CellState> = node.children.iter().map(child).collect();
            if variant.is_nary() {
                nary_cell(tape, p, id, x, &children)?
            } else {
                childsum_cell(tape, p, id, x, &children)?
            }
        };
        states[id.0] = Some(state);
    }
    let root = states[tree.root().0].expect("root visited last");
    let (head_w, head_b) = (p.params.layout.head_w, p.params.layout.head_b);
    let wh = tape.matvec(p.whole(head_w), root.h)?;
    let logits = tape.add(wh, p.whole(head_b))?;
    Ok(TapeOutput {
        logits,
        states: states.into_iter().map(|s| s.expect("every node visited")).collect(),
    })
}

/// Cross-entropy of the tree's label at the root; no regularization.
pub fn tree_loss(tape: &mut Tape, p: &mut Bound<'_>, tree: &DiscourseTree) -> Result<Var> {
    let label = tree
        .label
        .ok_or_else(|| Error::Data(format!("tree {} has no label", tree.doc_id)))?;
    let classes = p.params.config().classes;
    if label >= classes {
        return Err(Error::Data(format!(
            "tree {} has label {label} but the model has {classes} classes",
            tree.doc_id
        )));
    }
    let out = forward_on_tape(tape, p, tree)?;
    Ok(tape.softmax_xent(out.logits, label)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub node: NodeId,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub probs: Vec<f64>,
    pub root: NodeState,
    /// Indexed by node id.
    pub states: Vec<NodeState>,
}

pub fn forward_tree(tree: &DiscourseTree, params: &Params) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let mut bound = Bound::new(&mut tape, params);
    let out = forward_on_tape(&mut tape, &mut bound, tree)?;
    let probs = softmax(tape.value(out.logits).data());
    let states: Vec<NodeState> = out
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| NodeState {
            node: NodeId(i),
            c: tape.value(s.c).data().to_vec(),
            h: tape.value(s.h).data().to_vec(),
        })
        .collect();
    Ok(ForwardOutput {
        probs,
        root: states[tree.root().0].clone(),
        states,
    })
}

/// Class probabilities for every tree, in input order.
pub fn predict_corpus(trees: &[DiscourseTree], params: &Params) -> Result<Vec<Vec<f64>>> {
    trees
        .par_iter()
        .map(|t| forward_tree(t, params).map(|o| o.probs))
        .collect()
}
