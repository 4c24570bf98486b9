//! Parameter storage and a small reverse-mode tape over `f64` vectors.
//!
//! Every tape node holds a vector. Matrices only appear as parameters, which
//! ops reference by [`ParamId`]; their gradients are accumulated straight
//! into a [`Gradients`] buffer during [`Graph::backward`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::fusion;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform on `[-scale, scale]`.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
    /// Whether weight decay applies (false for biases).
    pub decay: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        decay: bool,
        rng: &mut R,
    ) -> ParamId {
        let mut tensor = Tensor::zeros(rows, cols);
        if let Init::Uniform(scale) = init {
            for v in &mut tensor.data {
                *v = rng.gen_range(-scale..=scale);
            }
        }
        self.insert(ParamEntry {
            name: name.into(),
            tensor,
            trainable: true,
            decay,
        })
    }

    pub fn insert(&mut self, entry: ParamEntry) -> ParamId {
        assert!(
            self.id(&entry.name).is_none(),
            "duplicate parameter {}",
            entry.name
        );
        self.entries.push(entry);
        ParamId(self.entries.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Scalar view used by finite-difference checks: `(param, flat index)`.
    pub fn scalar(&self, id: ParamId, index: usize) -> f64 {
        self.entries[id.0].tensor.data[index]
    }

    pub fn set_scalar(&mut self, id: ParamId, index: usize, value: f64) {
        self.entries[id.0].tensor.data[index] = value;
    }
}

/// Gradient buffers, allocated on first touch.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn new(store: &ParamStore) -> Self {
        Gradients {
            grads: vec![None; store.len()],
        }
    }

    fn slot(&mut self, store: &ParamStore, id: ParamId) -> Option<&mut Vec<f64>> {
        let entry = store.entry(id);
        if !entry.trainable {
            return None;
        }
        let len = entry.tensor.len();
        Some(self.grads[id.0].get_or_insert_with(|| vec![0.0; len]))
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Gradient of one scalar, zero when untouched.
    pub fn scalar(&self, id: ParamId, index: usize) -> f64 {
        self.grads[id.0].as_ref().map_or(0.0, |g| g[index])
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug)]
enum Op {
    Input,
    Gather { table: ParamId, row: usize },
    Linear { w: ParamId, b: Option<ParamId>, x: NodeId },
    Add(NodeId, NodeId),
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    Max { inputs: Vec<NodeId>, argmax: Vec<usize> },
    Mean(Vec<NodeId>),
    Gate { w: ParamId, b: ParamId, inputs: Vec<NodeId>, gates: Vec<f64> },
    Sigmoid(NodeId),
    Softmax(NodeId),
    Bce { probs: NodeId, target: Vec<f64> },
    Nll { probs: NodeId, target: usize },
    Sum(Vec<NodeId>),
    Scale(NodeId, f64),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Records a forward computation against a frozen parameter snapshot.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    pub fn dim(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.len()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn gather(&mut self, table: ParamId, row: usize) -> Result<NodeId> {
        let t = self.params.get(table);
        if row >= t.rows {
            return Err(Error::Index {
                what: "table row",
                index: row,
                limit: t.rows,
            });
        }
        let value = t.row(row).to_vec();
        Ok(self.push(value, Op::Gather { table, row }))
    }

    /// `w x + b` with `w` of shape `out x in`.
    pub fn linear(&mut self, w: ParamId, b: Option<ParamId>, x: NodeId) -> Result<NodeId> {
        let wt = self.params.get(w);
        let xv = &self.nodes[x.0].value;
        if wt.cols != xv.len() {
            return Err(Error::Shape(format!(
                "linear `{}` expects input {}, got {}",
                self.params.entry(w).name,
                wt.cols,
                xv.len()
            )));
        }
        let mut out: Vec<f64> = (0..wt.rows).map(|r| math::dot(wt.row(r), xv)).collect();
        if let Some(b) = b {
            let bt = self.params.get(b);
            if bt.len() != wt.rows {
                return Err(Error::Shape(format!(
                    "bias `{}` has {} entries, expected {}",
                    self.params.entry(b).name,
                    bt.len(),
                    wt.rows
                )));
            }
            for (o, bv) in out.iter_mut().zip(&bt.data) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::Linear { w, b, x }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.len() != bv.len() {
            return Err(Error::Shape(format!("add of {} and {}", av.len(), bv.len())));
        }
        let value = av.iter().zip(bv).map(|(x, y)| x + y).collect();
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(value, Op::Tanh(x))
    }

    pub fn concat(&mut self, inputs: &[NodeId]) -> NodeId {
        let mut value = Vec::new();
        for id in inputs {
            value.extend_from_slice(&self.nodes[id.0].value);
        }
        self.push(value, Op::Concat(inputs.to_vec()))
    }

    /// Coordinate-wise max over equally sized inputs.
    pub fn max_pool(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let dim = self.check_same_dim(inputs, "max_pool")?;
        let (value, argmax) = math::max_pool(inputs.iter().map(|i| &self.nodes[i.0].value[..]), dim);
        Ok(self.push(
            value,
            Op::Max {
                inputs: inputs.to_vec(),
                argmax,
            },
        ))
    }

    pub fn mean(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let dim = self.check_same_dim(inputs, "mean")?;
        let mut value = vec![0.0; dim];
        for id in inputs {
            for (o, v) in value.iter_mut().zip(&self.nodes[id.0].value) {
                *o += v;
            }
        }
        let n = inputs.len() as f64;
        value.iter_mut().for_each(|v| *v /= n);
        Ok(self.push(value, Op::Mean(inputs.to_vec())))
    }

    /// Gated fusion with scoring vector `w` (a `1 x d` parameter) and
    /// scalar bias `b`.
    pub fn gate(&mut self, w: ParamId, b: ParamId, inputs: &[NodeId]) -> Result<NodeId> {
        let wv = &self.params.get(w).data;
        let bias = self.params.get(b).data[0];
        let views: Vec<&[f64]> = inputs.iter().map(|i| &self.nodes[i.0].value[..]).collect();
        let fused = {
            // arity is fixed by the caller; only dimensions are checked here
            for (o, v) in views.iter().enumerate() {
                if v.len() != wv.len() {
                    return Err(Error::Shape(format!(
                        "gated fusion input {o} has dimension {}, expected {}",
                        v.len(),
                        wv.len()
                    )));
                }
            }
            if views.is_empty() {
                return Err(Error::Shape("gated fusion needs at least one input".into()));
            }
            fusion::fuse_unchecked(&views, wv, bias)
        };
        Ok(self.push(
            fused.output,
            Op::Gate {
                w,
                b,
                inputs: inputs.to_vec(),
                gates: fused.gates,
            },
        ))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|&v| math::sigmoid(v)).collect();
        self.push(value, Op::Sigmoid(x))
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let value = math::softmax(&self.nodes[x.0].value);
        self.push(value, Op::Softmax(x))
    }

    /// Binary cross-entropy summed over the coordinates of `probs`.
    pub fn bce(&mut self, probs: NodeId, target: Vec<f64>) -> Result<NodeId> {
        let p = &self.nodes[probs.0].value;
        if p.len() != target.len() {
            return Err(Error::Shape(format!("bce of {} vs {} targets", p.len(), target.len())));
        }
        let loss = p.iter().zip(&target).map(|(&p, &y)| math::bce_term(p, y)).sum();
        Ok(self.push(vec![loss], Op::Bce { probs, target }))
    }

    pub fn nll(&mut self, probs: NodeId, target: usize) -> Result<NodeId> {
        let p = &self.nodes[probs.0].value;
        if target >= p.len() {
            return Err(Error::Index {
                what: "target class",
                index: target,
                limit: p.len(),
            });
        }
        let loss = math::nll_term(p[target]);
        Ok(self.push(vec![loss], Op::Nll { probs, target }))
    }

    pub fn sum(&mut self, inputs: &[NodeId]) -> NodeId {
        let total = inputs.iter().map(|i| self.nodes[i.0].value[0]).sum();
        self.push(vec![total], Op::Sum(inputs.to_vec()))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|v| v * factor).collect();
        self.push(value, Op::Scale(x, factor))
    }

    fn check_same_dim(&self, inputs: &[NodeId], what: &str) -> Result<usize> {
        let Some(first) = inputs.first() else {
            return Err(Error::Shape(format!("{what} of zero inputs")));
        };
        let dim = self.nodes[first.0].value.len();
        if inputs.iter().any(|i| self.nodes[i.0].value.len() != dim) {
            return Err(Error::Shape(format!("{what} over inputs of different dimension")));
        }
        Ok(dim)
    }

    /// Accumulates d(root)/d(param) into `grads`. `root` must be a scalar.
    pub fn backward(&self, root: NodeId, grads: &mut Gradients) {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward from a non-scalar");
        let mut adj: Vec<Option<Vec<f64>>> = Vec::with_capacity(root.0 + 1);
        adj.resize_with(root.0 + 1, || None);
        adj[root.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
            adj[id.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Gather { table, row } => {
                    if let Some(slot) = grads.slot(self.params, *table) {
                        let cols = self.params.get(*table).cols;
                        for (s, gv) in slot[row * cols..(row + 1) * cols].iter_mut().zip(&g) {
                            *s += gv;
                        }
                    }
                }
                Op::Linear { w, b, x } => {
                    let wt = self.params.get(*w);
                    let xv = &self.nodes[x.0].value;
                    if let Some(slot) = grads.slot(self.params, *w) {
                        for r in 0..wt.rows {
                            let gr = g[r];
                            if gr != 0.0 {
                                for (s, xv) in slot[r * wt.cols..(r + 1) * wt.cols].iter_mut().zip(xv) {
                                    *s += gr * xv;
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        if let Some(slot) = grads.slot(self.params, *b) {
                            for (s, gv) in slot.iter_mut().zip(&g) {
                                *s += gv;
                            }
                        }
                    }
                    let gx = acc(&mut adj, *x, wt.cols);
                    for (r, &gr) in g.iter().enumerate().take(wt.rows) {
                        if gr != 0.0 {
                            for (s, wv) in gx.iter_mut().zip(wt.row(r)) {
                                *s += gr * wv;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for id in [a, b] {
                        let t = acc(&mut adj, *id, g.len());
                        for (s, gv) in t.iter_mut().zip(&g) {
                            *s += gv;
                        }
                    }
                }
                Op::Tanh(x) => {
                    let t = acc(&mut adj, *x, g.len());
                    for ((s, gv), y) in t.iter_mut().zip(&g).zip(&node.value) {
                        *s += gv * (1.0 - y * y);
                    }
                }
                Op::Concat(inputs) => {
                    let mut off = 0;
                    for id in inputs {
                        let len = self.nodes[id.0].value.len();
                        let t = acc(&mut adj, *id, len);
                        for (s, gv) in t.iter_mut().zip(&g[off..off + len]) {
                            *s += gv;
                        }
                        off += len;
                    }
                }
                Op::Max { inputs, argmax } => {
                    for (i, &k) in argmax.iter().enumerate() {
                        let t = acc(&mut adj, inputs[k], g.len());
                        t[i] += g[i];
                    }
                }
                Op::Mean(inputs) => {
                    let n = inputs.len() as f64;
                    for id in inputs {
                        let t = acc(&mut adj, *id, g.len());
                        for (s, gv) in t.iter_mut().zip(&g) {
                            *s += gv / n;
                        }
                    }
                }
                Op::Gate { w, b, inputs, gates } => {
                    let wv = &self.params.get(*w).data;
                    let views: Vec<&[f64]> =
                        inputs.iter().map(|i| &self.nodes[i.0].value[..]).collect();
                    let fg = fusion::gated_fuse_backward(&views, wv, gates, &g);
                    if let Some(slot) = grads.slot(self.params, *w) {
                        for (s, v) in slot.iter_mut().zip(&fg.score_vector) {
                            *s += v;
                        }
                    }
                    if let Some(slot) = grads.slot(self.params, *b) {
                        slot[0] += fg.bias;
                    }
                    for (id, gi) in inputs.iter().zip(fg.inputs) {
                        let t = acc(&mut adj, *id, gi.len());
                        for (s, v) in t.iter_mut().zip(&gi) {
                            *s += v;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let t = acc(&mut adj, *x, g.len());
                    for ((s, gv), y) in t.iter_mut().zip(&g).zip(&node.value) {
                        *s += gv * y * (1.0 - y);
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let inner: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let t = acc(&mut adj, *x, g.len());
                    for ((s, gv), yv) in t.iter_mut().zip(&g).zip(y) {
                        *s += yv * (gv - inner);
                    }
                }
                Op::Bce { probs, target } => {
                    let p = &self.nodes[probs.0].value;
                    let t = acc(&mut adj, *probs, p.len());
                    for ((s, &pv), &y) in t.iter_mut().zip(p).zip(target) {
                        *s += g[0] * math::bce_term_grad(pv, y);
                    }
                }
                Op::Nll { probs, target } => {
                    let p = &self.nodes[probs.0].value;
                    let t = acc(&mut adj, *probs, p.len());
                    t[*target] += g[0] * math::nll_term_grad(p[*target]);
                }
                Op::Sum(inputs) => {
                    for id in inputs {
                        acc(&mut adj, *id, 1)[0] += g[0];
                    }
                }
                Op::Scale(x, f) => {
                    let t = acc(&mut adj, *x, g.len());
                    for (s, gv) in t.iter_mut().zip(&g) {
                        *s += gv * f;
                    }
                }
            }
        }
    }
}
