//! Forward evaluation and reverse-mode differentiation over a [`CompGraph`].
//!
//! Every Conv/FC input is multiplied by its group's channel mask before the
//! layer consumes it. The backward pass keeps the gradient with respect to
//! each masked input unreduced over the batch, which is what the importance
//! estimator consumes.

pub mod check;
pub mod ops;
mod optim;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{CompGraph, LayerId, LayerKind};
use crate::grouping::GroupTable;
use crate::tensor::{Real, Tensor};
use crate::weights::WeightStore;
use ops::{BnSaved, ConvParams};

pub use optim::Sgd;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in BatchNorm.
    Train,
    /// Running statistics in BatchNorm.
    Eval,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("ShapeMismatch at `{layer}`: expected {expected}, actual {actual}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        actual: String,
    },
    #[error("NonFiniteLoss")]
    NonFiniteLoss,
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("graph must have exactly one input layer for evaluation")]
    InputCount,
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("labels ({labels}) do not match batch size ({batch})")]
    LabelCount { labels: usize, batch: usize },
}

#[derive(Clone, Debug)]
enum Saved<T> {
    None,
    BatchNorm(BnSaved<T>),
    MaxPool(Vec<usize>),
}

/// Activations recorded by [`forward`] for [`backward`].
#[derive(Clone, Debug)]
pub struct Tape<T = f32> {
    mode: Mode,
    batch: usize,
    outputs: Vec<Tensor<T>>,
    saved: Vec<Saved<T>>,
    /// Per prunable layer: per-input-channel mask multiplier.
    channel_masks: Vec<Vec<T>>,
    probs: Tensor<T>,
    labels: Vec<usize>,
    sample_losses: Vec<T>,
}

impl<T: Real> Tape<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self, id: LayerId) -> &Tensor<T> {
        &self.outputs[id]
    }

    /// Unmasked input of a single-input layer.
    pub fn unmasked_input<'a>(&'a self, graph: &CompGraph, id: LayerId) -> &'a Tensor<T> {
        &self.outputs[graph.layer(id).inputs[0]]
    }

    pub fn channel_mask(&self, id: LayerId) -> &[T] {
        &self.channel_masks[id]
    }

    /// Per-sample negative log-likelihood.
    pub fn sample_losses(&self) -> &[T] {
        &self.sample_losses
    }

    /// Softmax probabilities, `(n, classes)`.
    pub fn probs(&self) -> &Tensor<T> {
        &self.probs
    }

    /// Number of samples whose arg-max prediction equals the label.
    pub fn correct(&self) -> usize {
        let k = self.probs.shape()[1];
        self.probs
            .data()
            .chunks(k)
            .zip(&self.labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count()
    }

    /// Signature of every piecewise-linear branch taken (ReLU signs and
    /// max-pool winners); equal signatures mean no kink was crossed.
    pub fn branch_signature(&self, graph: &CompGraph) -> Vec<u64> {
        let mut sig = Vec::new();
        for (id, l) in graph.layers().iter().enumerate() {
            match (&l.kind, &self.saved[id]) {
                (LayerKind::Relu, _) => {
                    let x = &self.outputs[l.inputs[0]];
                    for chunk in x.data().chunks(64) {
                        let mut bits = 0u64;
                        for (b, v) in chunk.iter().enumerate() {
                            if *v > T::zero() {
                                bits |= 1 << b;
                            }
                        }
                        sig.push(bits);
                    }
                }
                (_, Saved::MaxPool(arg)) => sig.extend(arg.iter().map(|&a| a as u64)),
                _ => {}
            }
        }
        sig
    }

    /// Folds this batch's BatchNorm statistics into the running estimates.
    pub fn update_running_stats(&self, graph: &CompGraph, weights: &mut WeightStore<T>) {
        for (id, l) in graph.layers().iter().enumerate() {
            let (LayerKind::BatchNorm(a), Saved::BatchNorm(s)) = (&l.kind, &self.saved[id]) else {
                continue;
            };
            if !s.train {
                continue;
            }
            let mom = T::lit(a.momentum);
            let keep = T::one() - mom;
            if let Some(rm) = weights.get_mut(&format!("{}.running_mean", l.id)) {
                for (r, b) in rm.data_mut().iter_mut().zip(&s.batch_mean) {
                    *r = keep * *r + mom * *b;
                }
            }
            if let Some(rv) = weights.get_mut(&format!("{}.running_var", l.id)) {
                for (r, b) in rv.data_mut().iter_mut().zip(&s.batch_var) {
                    *r = keep * *r + mom * *b;
                }
            }
        }
    }
}

pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Gradients produced by [`backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    /// Gradient of the mean loss for every trainable tensor present.
    pub params: BTreeMap<String, Tensor<T>>,
    /// Per prunable layer: gradient of the mean loss w.r.t. the masked
    /// input, batch dimension kept.
    pub masked_input: Vec<Option<Tensor<T>>>,
}

fn tensor<'a, T: Real>(w: &'a WeightStore<T>, name: &str) -> Result<&'a Tensor<T>, EngineError> {
    w.get(name)
        .ok_or_else(|| EngineError::MissingTensor(String::from(name)))
}

fn conv_params(graph: &CompGraph, id: LayerId) -> ConvParams {
    let geo = graph.geometry(id).unwrap();
    match &graph.layer(id).kind {
        LayerKind::Conv(a) => ConvParams {
            geo,
            stride: a.stride,
            padding: a.padding,
        },
        _ => ConvParams {
            geo,
            stride: 1,
            padding: 0,
        },
    }
}

/// Per-layer channel multipliers from real-valued group masks.
pub fn channel_masks<T: Real>(
    graph: &CompGraph,
    groups: &GroupTable,
    masks: &[Vec<T>],
) -> Vec<Vec<T>> {
    (0..graph.len())
        .map(|id| match groups.slots_of(id) {
            Some((gid, slots)) => slots.iter().map(|&s| masks[gid][s]).collect(),
            None => Vec::new(),
        })
        .collect()
}

/// Runs the network on one batch and returns the mean softmax
/// cross-entropy loss together with the recorded tape.
///
/// `masks` holds one real-valued vector per group (see
/// [`crate::MaskSet::as_real`]); values other than 0/1 are allowed so mask
/// derivatives can be checked numerically. The batch size may differ from
/// the declared input `n`; channel and spatial dims must match.
pub fn forward<T: Real>(
    graph: &CompGraph,
    groups: &GroupTable,
    weights: &WeightStore<T>,
    masks: &[Vec<T>],
    batch: &Tensor<T>,
    labels: &[usize],
    mode: Mode,
) -> Result<(T, Tape<T>), EngineError> {
    let mut inputs = graph.inputs();
    let (Some(input_id), None) = (inputs.next(), inputs.next()) else {
        return Err(EngineError::InputCount);
    };
    let declared = graph.shape(input_id);
    let [n, c, h, w] = batch.shape();
    if (c, h, w) != (declared.c, declared.h, declared.w) {
        return Err(EngineError::ShapeMismatch {
            layer: graph.layer(input_id).id.clone(),
            expected: format!("(*,{},{},{})", declared.c, declared.h, declared.w),
            actual: format!("({n},{c},{h},{w})"),
        });
    }
    if labels.len() != n {
        return Err(EngineError::LabelCount {
            labels: labels.len(),
            batch: n,
        });
    }
    let channel_masks = channel_masks(graph, groups, masks);
    let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(graph.len());
    let mut saved = Vec::with_capacity(graph.len());

    for (id, layer) in graph.layers().iter().enumerate() {
        let input = |k: usize| &outputs[layer.inputs[k]];
        let mut keep = Saved::None;
        let y = match &layer.kind {
            LayerKind::Input { .. } => batch.clone(),
            LayerKind::Conv(_) => {
                let m = &channel_masks[id];
                let x = ops::apply_channel_mask(input(0), m);
                let active: Vec<bool> = m.iter().map(|v| *v != T::zero()).collect();
                let wt = tensor(weights, &format!("{}.weight", layer.id))?;
                let b = weights.get(&format!("{}.bias", layer.id));
                ops::conv_forward(&x, wt, b, &conv_params(graph, id), Some(&active))
            }
            LayerKind::Fc { out_channels } => {
                let x = ops::apply_channel_mask(input(0), &channel_masks[id]);
                let wt = tensor(weights, &format!("{}.weight", layer.id))?;
                let b = weights.get(&format!("{}.bias", layer.id));
                ops::fc_forward(&x, wt, b, *out_channels)
            }
            LayerKind::BatchNorm(a) => {
                let g = tensor(weights, &format!("{}.weight", layer.id))?;
                let b = tensor(weights, &format!("{}.bias", layer.id))?;
                let rm = tensor(weights, &format!("{}.running_mean", layer.id))?;
                let rv = tensor(weights, &format!("{}.running_var", layer.id))?;
                let (y, s) = ops::bn_forward(
                    input(0),
                    g.data(),
                    b.data(),
                    rm.data(),
                    rv.data(),
                    T::lit(a.eps),
                    mode == Mode::Train,
                );
                keep = Saved::BatchNorm(s);
                y
            }
            LayerKind::Relu => ops::relu_forward(input(0)),
            LayerKind::MaxPool(p) => {
                let s = graph.shape(id);
                let (y, arg) = ops::maxpool_forward(input(0), p, s.h, s.w);
                keep = Saved::MaxPool(arg);
                y
            }
            LayerKind::AvgPool(p) => {
                let s = graph.shape(id);
                ops::avgpool_forward(input(0), p, s.h, s.w)
            }
            LayerKind::GlobalAvgPool => ops::gap_forward(input(0)),
            LayerKind::Add => {
                let mut y = input(0).clone();
                for k in 1..layer.inputs.len() {
                    for (a, b) in y.data_mut().iter_mut().zip(input(k).data()) {
                        *a += *b;
                    }
                }
                y
            }
            LayerKind::Concat => {
                let xs: Vec<&Tensor<T>> = layer.inputs.iter().map(|&i| &outputs[i]).collect();
                ops::concat_forward(&xs)
            }
            LayerKind::Flatten => {
                let x = input(0);
                let [n, ..] = x.shape();
                Tensor::from_vec([n, x.sample_len(), 1, 1], x.data().to_vec()).unwrap()
            }
            LayerKind::Output => input(0).clone(),
        };
        outputs.push(y);
        saved.push(keep);
    }

    let logits = &outputs[graph.output()];
    let [_, k, lh, lw] = logits.shape();
    if lh * lw != 1 {
        return Err(EngineError::ShapeMismatch {
            layer: graph.output_name().into(),
            expected: format!("({n},{k},1,1) logits"),
            actual: format!("({n},{k},{lh},{lw})"),
        });
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(EngineError::BadLabel { label, classes: k });
    }
    let mut probs = Tensor::zeros([n, k, 1, 1]);
    let mut sample_losses = Vec::with_capacity(n);
    let mut total = T::zero();
    for (ni, row) in logits.data().chunks(k).enumerate() {
        let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut z = T::zero();
        for v in row {
            z += (*v - mx).exp();
        }
        let lz = z.ln() + mx;
        for (j, v) in row.iter().enumerate() {
            probs.data_mut()[ni * k + j] = (*v - lz).exp();
        }
        let l = lz - row[labels[ni]];
        total += l;
        sample_losses.push(l);
    }
    let loss = total / T::from_usize(n).unwrap();
    if !loss.is_finite() {
        return Err(EngineError::NonFiniteLoss);
    }
    Ok((
        loss,
        Tape {
            mode,
            batch: n,
            outputs,
            saved,
            channel_masks,
            probs,
            labels: labels.to_vec(),
            sample_losses,
        },
    ))
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

fn vec_tensor<T: Real>(v: Vec<T>) -> Tensor<T> {
    let n = v.len();
    Tensor::from_vec([n, 1, 1, 1], v).unwrap()
}

/// Reverse-mode pass over a tape produced by [`forward`].
pub fn backward<T: Real>(
    graph: &CompGraph,
    weights: &WeightStore<T>,
    tape: &Tape<T>,
) -> Result<Gradients<T>, EngineError> {
    let n = tape.batch;
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; graph.len()];
    let mut params = BTreeMap::new();
    let mut masked_input = vec![None; graph.len()];

    let mut seed = tape.probs.clone();
    let k = seed.shape()[1];
    let inv_n = T::one() / T::from_usize(n).unwrap();
    for (ni, row) in seed.data_mut().chunks_mut(k).enumerate() {
        row[tape.labels[ni]] -= T::one();
        row.iter_mut().for_each(|v| *v *= inv_n);
    }
    grads[graph.output()] = Some(seed);

    for id in (0..graph.len()).rev() {
        let Some(dy) = grads[id].take() else { continue };
        let layer = graph.layer(id);
        let x = |k: usize| &tape.outputs[layer.inputs[k]];
        let push = |k: usize, g: Tensor<T>, grads: &mut Vec<Option<Tensor<T>>>| {
            let src = layer.inputs[k];
            if !matches!(graph.layer(src).kind, LayerKind::Input { .. }) {
                accumulate(&mut grads[src], g);
            }
        };
        match &layer.kind {
            LayerKind::Input { .. } => {}
            LayerKind::Conv(_) | LayerKind::Fc { .. } => {
                let m = &tape.channel_masks[id];
                let xm = ops::apply_channel_mask(x(0), m);
                let wname = format!("{}.weight", layer.id);
                let bname = format!("{}.bias", layer.id);
                let wt = tensor(weights, &wname)?;
                let (dxm, dw, db) = match &layer.kind {
                    LayerKind::Fc { out_channels } => ops::fc_backward(&xm, wt, &dy, *out_channels),
                    _ => ops::conv_backward(&xm, wt, &dy, &conv_params(graph, id)),
                };
                params.insert(wname, dw);
                if weights.get(&bname).is_some() {
                    params.insert(bname, vec_tensor(db));
                }
                let dx = ops::apply_channel_mask(&dxm, m);
                masked_input[id] = Some(dxm);
                push(0, dx, &mut grads);
            }
            LayerKind::BatchNorm(_) => {
                let Saved::BatchNorm(s) = &tape.saved[id] else {
                    unreachable!()
                };
                let g = tensor(weights, &format!("{}.weight", layer.id))?;
                let (dx, dg, db) = ops::bn_backward(&dy, g.data(), s);
                params.insert(format!("{}.weight", layer.id), vec_tensor(dg));
                params.insert(format!("{}.bias", layer.id), vec_tensor(db));
                push(0, dx, &mut grads);
            }
            LayerKind::Relu => push(0, ops::relu_backward(x(0), &dy), &mut grads),
            LayerKind::MaxPool(_) => {
                let Saved::MaxPool(arg) = &tape.saved[id] else {
                    unreachable!()
                };
                push(0, ops::maxpool_backward(x(0).shape(), arg, &dy), &mut grads);
            }
            LayerKind::AvgPool(p) => {
                push(0, ops::avgpool_backward(x(0).shape(), p, &dy), &mut grads)
            }
            LayerKind::GlobalAvgPool => push(0, ops::gap_backward(x(0).shape(), &dy), &mut grads),
            LayerKind::Add => {
                for k in 0..layer.inputs.len() {
                    push(k, dy.clone(), &mut grads);
                }
            }
            LayerKind::Concat => {
                let widths: Vec<usize> = layer.inputs.iter().map(|&i| graph.shape(i).c).collect();
                for (k, g) in ops::concat_backward(&dy, &widths).into_iter().enumerate() {
                    push(k, g, &mut grads);
                }
            }
            LayerKind::Flatten => {
                let shape = x(0).shape();
                push(
                    0,
                    Tensor::from_vec(shape, dy.into_vec()).unwrap(),
                    &mut grads,
                );
            }
            LayerKind::Output => push(0, dy, &mut grads),
        }
    }
    Ok(Gradients {
        params,
        masked_input,
    })
}
