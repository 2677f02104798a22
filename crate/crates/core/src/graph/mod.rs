//! Network IR: typed layers, topological order and inferred shapes.

pub(crate) mod accounting;
mod builder;
mod shape;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

pub use accounting::{flops_of_graph, memory_of_graph, Liveness};
pub use builder::GraphBuilder;

/// Index of a layer in [`CompGraph::layers`], which is stored in topological order.
pub type LayerId = usize;

/// `(n, c, h, w)` shape of a layer output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvAttrs {
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolAttrs {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormAttrs {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormAttrs {
    fn default() -> Self {
        BatchNormAttrs {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Input {
        shape: Shape,
    },
    /// Convolution; `groups == 1` is a normal conv, `groups > 1` a grouped
    /// conv and `groups == c_in` a depth-wise conv.
    Conv(ConvAttrs),
    Fc {
        out_channels: usize,
    },
    BatchNorm(BatchNormAttrs),
    Relu,
    MaxPool(PoolAttrs),
    AvgPool(PoolAttrs),
    GlobalAvgPool,
    Add,
    Concat,
    Flatten,
    Output,
}

impl LayerKind {
    /// Manifest spelling of the kind.
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv(_) => "conv",
            LayerKind::Fc { .. } => "fc",
            LayerKind::BatchNorm(_) => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool(_) => "maxpool",
            LayerKind::AvgPool(_) => "avgpool",
            LayerKind::GlobalAvgPool => "globalavgpool",
            LayerKind::Add => "add",
            LayerKind::Concat => "concat",
            LayerKind::Flatten => "flatten",
            LayerKind::Output => "output",
        }
    }

    /// Conv and FC layers carry channel masks on their inputs.
    pub fn is_prunable(&self) -> bool {
        matches!(self, LayerKind::Conv(_) | LayerKind::Fc { .. })
    }

    /// Grouped (including depth-wise) convolution.
    pub fn is_grouped(&self) -> bool {
        matches!(self, LayerKind::Conv(a) if a.groups > 1)
    }
}

/// Layer as written in a manifest, inputs still referenced by name.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        LayerSpec {
            id: id.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub id: String,
    pub kind: LayerKind,
    pub inputs: Vec<LayerId>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("duplicate layer id `{0}`")]
    DuplicateId(String),
    #[error("layer `{layer}` references unknown layer `{reference}`")]
    UnknownLayerReference { layer: String, reference: String },
    #[error("CycleDetected: layers {0:?} form a cycle")]
    CycleDetected(Vec<String>),
    #[error("ShapeMismatch at `{layer}`: expected {expected}, actual {actual}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        actual: String,
    },
    #[error("UnsupportedKind `{0}`")]
    UnsupportedKind(String),
    #[error("invalid attributes on `{layer}`: {reason}")]
    InvalidAttr { layer: String, reason: String },
    #[error("layer `{layer}` expects {expected} input(s), got {actual}")]
    Arity {
        layer: String,
        expected: String,
        actual: usize,
    },
    #[error("graph has no input layer")]
    NoInput,
    #[error("graph must have exactly one output layer, found {0}")]
    OutputCount(usize),
    #[error("`{0}` is declared as graph output but is not an output layer")]
    BadOutput(String),
    #[error("layer `{0}` does not reach the graph output")]
    Unreachable(String),
}

/// Conv/FC geometry in one place; FC is a 1×1 conv on a 1×1 map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub groups: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub n: usize,
}

impl ConvGeometry {
    pub fn in_per_group(&self) -> usize {
        self.c_in / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.c_out / self.groups
    }

    /// Multiply-accumulates for one (input channel, output channel) pair.
    pub fn pair_macs(&self) -> u64 {
        (self.n * self.out_h * self.out_w * self.kernel_h * self.kernel_w) as u64
    }
}

/// Validated computation graph. Layers are stored in topological order, so a
/// [`LayerId`] is also a topological position.
#[derive(Clone, Debug, PartialEq)]
pub struct CompGraph {
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
    consumers: Vec<Vec<LayerId>>,
    index: BTreeMap<String, LayerId>,
    output: LayerId,
}

impl CompGraph {
    /// Resolves references, sorts topologically and infers every shape.
    ///
    /// `output` must name the single layer of kind [`LayerKind::Output`].
    pub fn new(specs: Vec<LayerSpec>, output: &str) -> Result<Self, GraphError> {
        let mut by_name: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, s) in specs.iter().enumerate() {
            if by_name.insert(s.id.as_str(), i).is_some() {
                return Err(GraphError::DuplicateId(s.id.clone()));
            }
        }
        let mut deps: Vec<Vec<usize>> = Vec::with_capacity(specs.len());
        for s in &specs {
            let mut d = Vec::with_capacity(s.inputs.len());
            for r in &s.inputs {
                match by_name.get(r.as_str()) {
                    Some(&j) => d.push(j),
                    None => {
                        return Err(GraphError::UnknownLayerReference {
                            layer: s.id.clone(),
                            reference: r.clone(),
                        })
                    }
                }
            }
            deps.push(d);
        }

        let order = topo_sort(&specs, &deps)?;
        let mut position = vec![0usize; specs.len()];
        for (pos, &i) in order.iter().enumerate() {
            position[i] = pos;
        }

        let outputs: Vec<usize> = specs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == LayerKind::Output)
            .map(|(i, _)| i)
            .collect();
        if outputs.len() != 1 {
            return Err(GraphError::OutputCount(outputs.len()));
        }
        match by_name.get(output) {
            Some(&i) if i == outputs[0] => {}
            _ => return Err(GraphError::BadOutput(output.to_string())),
        }
        if !specs
            .iter()
            .any(|s| matches!(s.kind, LayerKind::Input { .. }))
        {
            return Err(GraphError::NoInput);
        }

        let mut specs: Vec<Option<LayerSpec>> = specs.into_iter().map(Some).collect();
        let mut layers = Vec::with_capacity(order.len());
        for &i in &order {
            let s = specs[i].take().unwrap();
            let inputs = deps[i].iter().map(|&j| position[j]).collect();
            layers.push(Layer {
                id: s.id,
                kind: s.kind,
                inputs,
            });
        }
        let output = position[outputs[0]];
        let mut consumers = vec![Vec::new(); layers.len()];
        for (id, l) in layers.iter().enumerate() {
            for &i in &l.inputs {
                if !consumers[i].contains(&id) {
                    consumers[i].push(id);
                }
            }
        }
        let index = layers
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.clone(), i))
            .collect();

        let shapes = shape::infer(&layers)?;
        let graph = CompGraph {
            layers,
            shapes,
            consumers,
            index,
            output,
        };
        graph.check_reachability()?;
        Ok(graph)
    }

    fn check_reachability(&self) -> Result<(), GraphError> {
        let mut reach = vec![false; self.layers.len()];
        reach[self.output] = true;
        for id in (0..self.layers.len()).rev() {
            if reach[id] {
                for &i in &self.layers[id].inputs {
                    reach[i] = true;
                }
            }
        }
        match reach.iter().position(|r| !r) {
            Some(id) => Err(GraphError::Unreachable(self.layers[id].id.clone())),
            None => Ok(()),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, id: LayerId) -> &Layer {
        &self.layers[id]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn shape(&self, id: LayerId) -> Shape {
        self.shapes[id]
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    /// Distinct layers reading `id`'s output, in topological order.
    pub fn consumers(&self, id: LayerId) -> &[LayerId] {
        &self.consumers[id]
    }

    pub fn find(&self, name: &str) -> Option<LayerId> {
        self.index.get(name).copied()
    }

    pub fn output(&self) -> LayerId {
        self.output
    }

    pub fn inputs(&self) -> impl Iterator<Item = LayerId> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.kind, LayerKind::Input { .. }))
            .map(|(i, _)| i)
    }

    pub fn prunable(&self) -> impl Iterator<Item = LayerId> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind.is_prunable())
            .map(|(i, _)| i)
    }

    /// Shape of the tensor feeding a single-input layer.
    pub fn input_shape(&self, id: LayerId) -> Shape {
        self.shapes[self.layers[id].inputs[0]]
    }

    pub fn geometry(&self, id: LayerId) -> Option<ConvGeometry> {
        let out = self.shapes[id];
        let inp = self.layers[id].inputs.first().map(|&i| self.shapes[i])?;
        match &self.layers[id].kind {
            LayerKind::Conv(a) => Some(ConvGeometry {
                c_in: inp.c,
                c_out: a.out_channels,
                groups: a.groups,
                kernel_h: a.kernel_h,
                kernel_w: a.kernel_w,
                out_h: out.h,
                out_w: out.w,
                n: out.n,
            }),
            LayerKind::Fc { out_channels } => Some(ConvGeometry {
                c_in: inp.c,
                c_out: *out_channels,
                groups: 1,
                kernel_h: 1,
                kernel_w: 1,
                out_h: 1,
                out_w: 1,
                n: out.n,
            }),
            _ => None,
        }
    }

    /// Layer list in manifest form (for serialization).
    pub fn to_specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec {
                id: l.id.clone(),
                kind: l.kind.clone(),
                inputs: l
                    .inputs
                    .iter()
                    .map(|&i| self.layers[i].id.clone())
                    .collect(),
            })
            .collect()
    }

    pub fn output_name(&self) -> &str {
        &self.layers[self.output].id
    }

    /// Human-readable table of ids, kinds and output shapes.
    pub fn shape_table(&self) -> String {
        let mut s = String::new();
        for (l, sh) in self.layers.iter().zip(&self.shapes) {
            s.push_str(&format!("{:<24} {:<14} {}\n", l.id, l.kind.name(), sh));
        }
        s
    }
}

/// Kahn's algorithm; ties are broken by declaration order so the result is
/// deterministic.
fn topo_sort(specs: &[LayerSpec], deps: &[Vec<usize>]) -> Result<Vec<usize>, GraphError> {
    let n = specs.len();
    let mut indeg = vec![0usize; n];
    let mut users = vec![Vec::new(); n];
    for (i, d) in deps.iter().enumerate() {
        for &j in d {
            indeg[i] += 1;
            users[j].push(i);
        }
    }
    let mut ready: alloc::collections::BTreeSet<usize> =
        (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &u in &users[i] {
            indeg[u] -= 1;
            if indeg[u] == 0 {
                ready.insert(u);
            }
        }
    }
    if order.len() != n {
        let stuck = (0..n)
            .filter(|&i| indeg[i] > 0)
            .map(|i| specs[i].id.clone())
            .collect();
        return Err(GraphError::CycleDetected(stuck));
    }
    Ok(order)
}

#[cfg(test)]
mod tests;
