use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{CompGraph, LayerKind};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum WeightError {
    #[error("MissingTensor `{0}`")]
    MissingTensor(String),
    #[error("ShapeMismatch for `{name}`: expected {expected:?}, actual {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

/// Named parameter and buffer tensors.
///
/// Conv: `<id>.weight` `(c_o, c_i/g, k_h, k_w)`, optional `<id>.bias` `(c_o)`.
/// FC: `<id>.weight` `(c_o, c_i)`, optional `<id>.bias`.
/// BatchNorm: `<id>.weight`, `<id>.bias`, `<id>.running_mean`,
/// `<id>.running_var`, all `(c)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore<T = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

/// Expected tensor dims for one layer: `(name, dims, required, trainable)`.
pub fn expected_tensors(graph: &CompGraph, id: usize) -> Vec<(String, Vec<usize>, bool, bool)> {
    let l = graph.layer(id);
    let c = graph.shape(id).c;
    match &l.kind {
        LayerKind::Conv(a) => {
            let c_in = graph.input_shape(id).c;
            vec![
                (
                    format!("{}.weight", l.id),
                    vec![a.out_channels, c_in / a.groups, a.kernel_h, a.kernel_w],
                    true,
                    true,
                ),
                (format!("{}.bias", l.id), vec![a.out_channels], false, true),
            ]
        }
        LayerKind::Fc { out_channels } => {
            let c_in = graph.input_shape(id).c;
            vec![
                (
                    format!("{}.weight", l.id),
                    vec![*out_channels, c_in],
                    true,
                    true,
                ),
                (format!("{}.bias", l.id), vec![*out_channels], false, true),
            ]
        }
        LayerKind::BatchNorm(_) => vec![
            (format!("{}.weight", l.id), vec![c], true, true),
            (format!("{}.bias", l.id), vec![c], true, true),
            (format!("{}.running_mean", l.id), vec![c], true, false),
            (format!("{}.running_var", l.id), vec![c], true, false),
        ],
        _ => Vec::new(),
    }
}

fn padded(dims: &[usize]) -> [usize; 4] {
    let mut s = [1; 4];
    s[..dims.len()].copy_from_slice(dims);
    s
}

impl<T: Real> WeightStore<T> {
    pub fn new() -> Self {
        WeightStore {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn cast<U: Real>(&self) -> WeightStore<U> {
        WeightStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Checks that every parameter the graph needs is present with the
    /// right shape. `declared` gives the shapes as written in an index (so
    /// `(c_o, c_i)` and `(c_o, c_i, 1, 1)` are told apart); when absent the
    /// padded tensor shape is compared.
    pub fn validate(
        &self,
        graph: &CompGraph,
        declared: Option<&BTreeMap<String, Vec<usize>>>,
    ) -> Result<(), WeightError> {
        for id in 0..graph.len() {
            for (name, dims, required, _) in expected_tensors(graph, id) {
                let Some(t) = self.tensors.get(&name) else {
                    if required {
                        return Err(WeightError::MissingTensor(name));
                    }
                    continue;
                };
                let ok = match declared.and_then(|d| d.get(&name)) {
                    Some(decl) => *decl == dims,
                    None => t.shape() == padded(&dims),
                };
                if !ok {
                    let actual = match declared.and_then(|d| d.get(&name)) {
                        Some(decl) => decl.clone(),
                        None => t.shape().to_vec(),
                    };
                    return Err(WeightError::ShapeMismatch {
                        name,
                        expected: dims,
                        actual,
                    });
                }
            }
        }
        Ok(())
    }

    /// Trainable tensor names (weights and biases of Conv/FC/BN).
    pub fn trainable_names(&self, graph: &CompGraph) -> Vec<String> {
        (0..graph.len())
            .flat_map(|id| expected_tensors(graph, id))
            .filter(|(name, _, _, trainable)| *trainable && self.tensors.contains_key(name))
            .map(|(name, ..)| name)
            .collect()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self, graph: &CompGraph) -> usize {
        self.trainable_names(graph)
            .iter()
            .map(|n| self.tensors[n].len())
            .sum()
    }
}

/// Shape of a tensor as it is declared for `name` in `graph` (unpadded).
pub fn declared_dims(graph: &CompGraph, name: &str) -> Option<Vec<usize>> {
    (0..graph.len())
        .flat_map(|id| expected_tensors(graph, id))
        .find(|(n, ..)| n == name)
        .map(|(_, d, ..)| d)
}

/// Fresh parameters: Kaiming-uniform Conv/FC weights, zero FC biases
/// (convolutions get none), BatchNorm at identity with unit running
/// variance.
pub fn init_weights(graph: &CompGraph, seed: u64) -> WeightStore<f32> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for id in 0..graph.len() {
        let layer = graph.layer(id);
        for (name, dims, required, _) in expected_tensors(graph, id) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = if name.ends_with(".weight") && layer.kind.is_prunable() {
                let fan_in: usize = dims[1..].iter().product();
                let bound = num_traits::Float::sqrt(6.0 / fan_in as f64) as f32;
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            } else if name.ends_with(".bias")
                && matches!(layer.kind, LayerKind::Conv(_))
                && !required
            {
                continue;
            } else if name.ends_with(".weight") || name.ends_with(".running_var") {
                vec![1.0; n]
            } else {
                vec![0.0; n]
            };
            store.insert(name, Tensor::from_dims(&dims, data).unwrap());
        }
    }
    store
}
