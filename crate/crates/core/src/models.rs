//! The four node classifiers (GCN, GIN, TAGCN, MLP) and full-batch training.

use std::borrow::Cow;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Eval, Ops, Tape};
use crate::csr::CsrMatrix;
use crate::error::{Error, Result};
use crate::graph::{normalize, Graph, NormKind, Split};
use crate::matrix::Matrix;
use crate::metrics::accuracy;
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{self, tag};
use crate::selection::FeatureMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn,
    Gin,
    Tagcn,
    Mlp,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::Gin => "gin",
            Arch::Tagcn => "tagcn",
            Arch::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Arch::Gcn),
            "gin" => Ok(Arch::Gin),
            "tagcn" | "tagconv" => Ok(Arch::Tagcn),
            "mlp" => Ok(Arch::Mlp),
            other => Err(Error::InvalidArgument(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub arch: Arch,
    pub hidden_dim: usize,
    /// Number of hops for TAGCN layers.
    pub hops: usize,
    pub bias: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            arch: Arch::Gcn,
            hidden_dim: 512,
            hops: 3,
            bias: true,
        }
    }
}

impl ModelSpec {
    pub fn new(arch: Arch, hidden_dim: usize) -> Self {
        Self {
            arch,
            hidden_dim,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden_dim must be >= 1".into()));
        }
        if self.hops == 0 {
            return Err(Error::InvalidArgument("hops must be >= 1".into()));
        }
        Ok(())
    }

    /// Propagation operator the architecture multiplies features by.
    pub fn norm_kind(&self) -> Option<NormKind> {
        match self.arch {
            Arch::Gcn => Some(NormKind::RandomWalk),
            Arch::Tagcn => Some(NormKind::Symmetric),
            Arch::Gin | Arch::Mlp => None,
        }
    }
}

/// Builds the sparse operator `spec.arch` aggregates with: `Ã_rw` for GCN,
/// symmetric `Ã` for TAGCN, `A + I` (sum aggregation, ε = 0) for GIN.
pub fn propagation(spec: &ModelSpec, adjacency: &CsrMatrix) -> Result<Option<CsrMatrix>> {
    Ok(match spec.arch {
        Arch::Gcn => Some(normalize(adjacency, NormKind::RandomWalk)?.matrix),
        Arch::Tagcn => Some(normalize(adjacency, NormKind::Symmetric)?.matrix),
        Arch::Gin => {
            crate::graph::validate_adjacency(adjacency)?;
            Some(adjacency.add_diagonal(1.0))
        }
        Arch::Mlp => None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    /// Rows are indexed by input features; pruning deletes rows here.
    pub input_rows: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub params: Vec<Param>,
}

impl ModelParams {
    pub fn values(&self) -> Vec<&Matrix> {
        self.params.iter().map(|p| &p.value).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn input_dim(&self) -> usize {
        self.params
            .iter()
            .find(|p| p.input_rows)
            .map_or(0, |p| p.value.rows())
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut rng::Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

/// Parameter layout per architecture, in the order `forward` consumes them.
fn layout(spec: &ModelSpec, n_in: usize, n_out: usize) -> Vec<(String, usize, usize, bool, bool)> {
    // (name, rows, cols, is_bias, input_rows)
    let h = spec.hidden_dim;
    let mut l = Vec::new();
    let dense = |l: &mut Vec<_>, name: &str, r: usize, c: usize, input: bool| {
        l.push((format!("{name}.weight"), r, c, false, input));
        if spec.bias {
            l.push((format!("{name}.bias"), 1, c, true, false));
        }
    };
    match spec.arch {
        Arch::Gcn | Arch::Mlp => {
            dense(&mut l, "layer1", n_in, h, true);
            dense(&mut l, "layer2", h, n_out, false);
        }
        Arch::Gin => {
            dense(&mut l, "layer1.mlp1", n_in, h, true);
            dense(&mut l, "layer1.mlp2", h, h, false);
            dense(&mut l, "layer2.mlp1", h, h, false);
            dense(&mut l, "layer2.mlp2", h, n_out, false);
        }
        Arch::Tagcn => {
            for k in 0..=spec.hops {
                l.push((format!("layer1.hop{k}"), n_in, h, false, true));
            }
            if spec.bias {
                l.push(("layer1.bias".into(), 1, h, true, false));
            }
            for k in 0..=spec.hops {
                l.push((format!("layer2.hop{k}"), h, n_out, false, false));
            }
            if spec.bias {
                l.push(("layer2.bias".into(), 1, n_out, true, false));
            }
        }
    }
    l
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &ModelSpec, n_in: usize, n_out: usize, seed: u64) -> ModelParams {
    let mut rng = rng::substream(seed, &[tag::INIT]);
    let params = layout(spec, n_in, n_out)
        .into_iter()
        .map(|(name, r, c, is_bias, input_rows)| Param {
            name,
            value: if is_bias {
                Matrix::zeros(r, c)
            } else {
                glorot(r, c, &mut rng)
            },
            input_rows,
        })
        .collect();
    ModelParams { params }
}

/// Affine map `x W (+ b)` consuming parameters from `it`.
fn dense<'a, O: Ops<'a>>(
    ops: &mut O,
    spec: &ModelSpec,
    it: &mut std::slice::Iter<'_, O::T>,
    x: &O::T,
) -> Result<O::T> {
    let w = it.next().ok_or_else(missing)?;
    let y = ops.matmul(x, w)?;
    if spec.bias {
        let b = it.next().ok_or_else(missing)?;
        ops.add_bias(&y, b)
    } else {
        Ok(y)
    }
}

fn missing() -> Error {
    Error::InvalidArgument("parameter list shorter than the architecture needs".into())
}

/// `Σ_{k=0..K} P^k x Θ_k (+ b)`
fn tag_layer<'a, O: Ops<'a>>(
    ops: &mut O,
    spec: &ModelSpec,
    it: &mut std::slice::Iter<'_, O::T>,
    prop: &'a CsrMatrix,
    x: &O::T,
) -> Result<O::T> {
    let w0 = it.next().ok_or_else(missing)?;
    let mut acc = ops.matmul(x, w0)?;
    let mut hop = ops.spmm(prop, x)?;
    for k in 1..=spec.hops {
        let w = it.next().ok_or_else(missing)?;
        let term = ops.matmul(&hop, w)?;
        acc = ops.add(&acc, &term)?;
        if k < spec.hops {
            hop = ops.spmm(prop, &hop)?;
        }
    }
    if spec.bias {
        let b = it.next().ok_or_else(missing)?;
        acc = ops.add_bias(&acc, b)?;
    }
    Ok(acc)
}

/// Class logits (before the log-softmax head).
pub fn forward<'a, O: Ops<'a>>(
    ops: &mut O,
    spec: &ModelSpec,
    params: &[O::T],
    x: &O::T,
    prop: Option<&'a CsrMatrix>,
) -> Result<O::T> {
    let need_prop = || {
        prop.ok_or_else(|| {
            Error::InvalidArgument(format!("{} needs a propagation matrix", spec.arch.as_str()))
        })
    };
    let mut it = params.iter();
    match spec.arch {
        Arch::Mlp => {
            let h = dense(ops, spec, &mut it, x)?;
            let h = ops.relu(&h);
            dense(ops, spec, &mut it, &h)
        }
        Arch::Gcn => {
            let p = need_prop()?;
            let h = dense_then_propagate(ops, spec, &mut it, x, p)?;
            let h = ops.relu(&h);
            dense_then_propagate(ops, spec, &mut it, &h, p)
        }
        Arch::Gin => {
            let p = need_prop()?;
            let h = ops.spmm(p, x)?;
            let h = dense(ops, spec, &mut it, &h)?;
            let h = ops.relu(&h);
            let h = dense(ops, spec, &mut it, &h)?;
            let h = ops.relu(&h);
            let h = ops.spmm(p, &h)?;
            let h = dense(ops, spec, &mut it, &h)?;
            let h = ops.relu(&h);
            dense(ops, spec, &mut it, &h)
        }
        Arch::Tagcn => {
            let p = need_prop()?;
            let h = tag_layer(ops, spec, &mut it, p, x)?;
            let h = ops.relu(&h);
            tag_layer(ops, spec, &mut it, p, &h)
        }
    }
}

/// GCN layer `P (x W) + b`; the product order avoids an N×M propagation.
fn dense_then_propagate<'a, O: Ops<'a>>(
    ops: &mut O,
    spec: &ModelSpec,
    it: &mut std::slice::Iter<'_, O::T>,
    x: &O::T,
    prop: &'a CsrMatrix,
) -> Result<O::T> {
    let w = it.next().ok_or_else(missing)?;
    let xw = ops.matmul(x, w)?;
    let y = ops.spmm(prop, &xw)?;
    if spec.bias {
        let b = it.next().ok_or_else(missing)?;
        ops.add_bias(&y, b)
    } else {
        Ok(y)
    }
}

/// Bias-free two-layer GCN with ReLU on both layers and no head:
/// `σ(Ã_rw σ(Ã_rw X Θ1) Θ2)`.
pub fn theory_gcn(rw: &CsrMatrix, x: &Matrix, w1: &Matrix, w2: &Matrix) -> Result<Matrix> {
    let relu = |m: Matrix| m.map(|v| v.max(0.0));
    let h = relu(rw.matmul_dense(&x.matmul(w1)?)?);
    Ok(relu(rw.matmul_dense(&h.matmul(w2)?)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub n_classes: usize,
    pub params: ModelParams,
}

impl Model {
    pub fn init(spec: ModelSpec, n_in: usize, n_classes: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if n_in == 0 {
            return Err(Error::EmptyFeatureSet);
        }
        Ok(Self {
            spec,
            n_classes,
            params: init_params(&spec, n_in, n_classes, seed),
        })
    }

    /// Forward-only logits for the given active feature matrix.
    pub fn logits(&self, x: &Matrix, prop: Option<&CsrMatrix>) -> Result<Matrix> {
        if x.cols() != self.params.input_dim() {
            return Err(Error::Shape {
                op: "model input",
                lhs: x.shape(),
                rhs: (self.params.input_dim(), self.spec.hidden_dim),
            });
        }
        let params: Vec<Cow<'_, Matrix>> =
            self.params.params.iter().map(|p| Cow::Borrowed(&p.value)).collect();
        let out = forward(&mut Eval, &self.spec, &params, &Cow::Borrowed(x), prop)?;
        Ok(out.into_owned())
    }

    /// Keeps only the listed input rows of every input-facing weight.
    pub fn keep_input_rows(&mut self, rows: &[usize]) {
        for p in self.params.params.iter_mut().filter(|p| p.input_rows) {
            p.value = p.value.select_rows(rows);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub active_count: usize,
}

#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    pub model: Model,
}

impl TrainRecord {
    /// Test accuracy at the epoch of highest validation accuracy (earliest on ties).
    pub fn best_val_test(&self) -> Option<EpochRecord> {
        best_by_val(&self.epochs)
    }
}

pub(crate) fn best_by_val(epochs: &[EpochRecord]) -> Option<EpochRecord> {
    let mut best: Option<EpochRecord> = None;
    for e in epochs {
        if best.is_none_or(|b| e.val_acc > b.val_acc) {
            best = Some(*e);
        }
    }
    best
}

/// Full-batch trainer over a fixed graph with a shrinking feature set.
pub struct Trainer<'g> {
    graph: &'g Graph,
    prop: Option<CsrMatrix>,
    model: Model,
    adam: AdamState,
    active: Vec<usize>,
    x_active: Matrix,
    train_rows: Vec<usize>,
    val_rows: Vec<usize>,
    test_rows: Vec<usize>,
    epoch: usize,
}

impl<'g> Trainer<'g> {
    pub fn new(
        spec: ModelSpec,
        graph: &'g Graph,
        mask: &FeatureMask,
        seed: u64,
        adam: AdamConfig,
    ) -> Result<Self> {
        if mask.len() != graph.n_feats() {
            return Err(Error::InvalidArgument(format!(
                "mask covers {} features, graph has {}",
                mask.len(),
                graph.n_feats()
            )));
        }
        let active = mask.active_indices();
        if active.is_empty() {
            return Err(Error::EmptyFeatureSet);
        }
        let train_rows = graph.split_indices(Split::Train);
        if train_rows.is_empty() {
            return Err(Error::EmptyMask("train split"));
        }
        let model = Model::init(spec, active.len(), graph.n_classes(), seed)?;
        let values: Vec<Matrix> = model.params.params.iter().map(|p| p.value.clone()).collect();
        Ok(Self {
            graph,
            prop: propagation(&spec, graph.adjacency())?,
            adam: AdamState::new(adam, &values),
            x_active: graph.features().select_columns(&active),
            active,
            model,
            train_rows,
            val_rows: graph.split_indices(Split::Val),
            test_rows: graph.split_indices(Split::Test),
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn propagation(&self) -> Option<&CsrMatrix> {
        self.prop.as_ref()
    }

    /// Active feature indices into the full feature matrix, ascending.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// The pruned feature matrix `X̂` (active columns only).
    pub fn active_features(&self) -> &Matrix {
        &self.x_active
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One Adam step on the masked cross-entropy, then evaluation of all splits.
    pub fn step(&mut self) -> Result<EpochRecord> {
        let spec = self.model.spec;
        let labels = self.graph.labels();
        let (loss, grads) = {
            let mut tape = Tape::new();
            let vars: Vec<_> = self
                .model
                .params
                .params
                .iter()
                .map(|p| tape.leaf(p.value.clone()))
                .collect();
            let x = tape.constant(self.x_active.clone());
            let logits = forward(&mut tape, &spec, &vars, &x, self.prop.as_ref())?;
            let logp = tape.log_softmax_rows(&logits);
            let loss = tape.nll_masked(&logp, labels, &self.train_rows)?;
            let mut g = tape.backward(loss);
            let grads: Vec<Matrix> = vars
                .iter()
                .zip(&self.model.params.params)
                .map(|(&v, p)| g.take(v).unwrap_or_else(|| Matrix::zeros(p.value.rows(), p.value.cols())))
                .collect();
            (tape.get(loss)[(0, 0)], grads)
        };
        let owned: Vec<String> = self.model.params.params.iter().map(|p| p.name.clone()).collect();
        let names: Vec<&str> = owned.iter().map(String::as_str).collect();
        let mut values: Vec<Matrix> = self
            .model
            .params
            .params
            .iter_mut()
            .map(|p| std::mem::replace(&mut p.value, Matrix::zeros(0, 0)))
            .collect();
        let res = self.adam.step(&mut values, &grads, &names);
        for (p, v) in self.model.params.params.iter_mut().zip(values) {
            p.value = v;
        }
        res?;
        self.epoch += 1;

        let logits = self.logits()?;
        let acc = |rows: &[usize]| -> Result<f64> {
            if rows.is_empty() {
                Ok(f64::NAN)
            } else {
                accuracy(&logits, labels, rows)
            }
        };
        Ok(EpochRecord {
            epoch: self.epoch,
            loss,
            train_acc: acc(&self.train_rows)?,
            val_acc: acc(&self.val_rows)?,
            test_acc: acc(&self.test_rows)?,
            active_count: self.active.len(),
        })
    }

    pub fn logits(&self) -> Result<Matrix> {
        self.model.logits(&self.x_active, self.prop.as_ref())
    }

    /// Restricts training to `keep` (a subset of the current active features).
    /// Remaining first-layer rows and their optimizer moments are kept as is.
    pub fn restrict(&mut self, keep: &FeatureMask) -> Result<()> {
        let positions: Vec<usize> = self
            .active
            .iter()
            .enumerate()
            .filter(|(_, &f)| keep.is_active(f))
            .map(|(p, _)| p)
            .collect();
        if positions.is_empty() {
            return Err(Error::EmptyFeatureSet);
        }
        if keep.active_count() != positions.len() {
            return Err(Error::InvalidArgument(
                "new mask activates features that were already pruned".into(),
            ));
        }
        self.model.keep_input_rows(&positions);
        for (k, p) in self.model.params.params.iter().enumerate() {
            if p.input_rows {
                self.adam.keep_rows(k, &positions);
            }
        }
        self.active = positions.iter().map(|&p| self.active[p]).collect();
        self.x_active = self.graph.features().select_columns(&self.active);
        Ok(())
    }
}

/// Trains `spec` on the features selected by `mask` for `config.epochs` epochs.
pub fn train(
    spec: ModelSpec,
    graph: &Graph,
    mask: &FeatureMask,
    seed: u64,
    config: &TrainConfig,
) -> Result<TrainRecord> {
    let mut trainer = Trainer::new(spec, graph, mask, seed, config.adam)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        epochs.push(trainer.step()?);
    }
    Ok(TrainRecord {
        epochs,
        model: trainer.into_model(),
    })
}
