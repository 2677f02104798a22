//! JSON graph manifests.
//!
//! ```json
//! {
//!   "inputs": [{"id": "x", "shape": [1, 3, 8, 8]}],
//!   "layers": [
//!     {"id": "c1", "kind": "conv", "inputs": ["x"],
//!      "attrs": {"out_channels": 4, "kernel_h": 3, "kernel_w": 3, "stride": 1, "padding": 1, "groups": 1}},
//!     {"id": "out", "kind": "output", "inputs": ["c1"], "attrs": {}}
//!   ],
//!   "output": "out"
//! }
//! ```

use gfp_core::graph::{
    BatchNormAttrs, ConvAttrs, GraphError, LayerKind, LayerSpec, PoolAttrs, Shape,
};
use gfp_core::CompGraph;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDecl {
    pub id: String,
    pub shape: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDecl {
    pub id: String,
    pub kind: String,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub attrs: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub inputs: Vec<InputDecl>,
    pub layers: Vec<LayerDecl>,
    pub output: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn attr(layer: &LayerDecl, key: &str, default: Option<usize>) -> Result<usize, GraphError> {
    match layer.attrs.get(key) {
        Some(v) => v
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| GraphError::InvalidAttr {
                layer: layer.id.clone(),
                reason: format!("`{key}` must be a non-negative integer"),
            }),
        None => default.ok_or_else(|| GraphError::InvalidAttr {
            layer: layer.id.clone(),
            reason: format!("missing `{key}`"),
        }),
    }
}

fn float_attr(layer: &LayerDecl, key: &str, default: f64) -> Result<f64, GraphError> {
    match layer.attrs.get(key) {
        Some(v) => v.as_f64().ok_or_else(|| GraphError::InvalidAttr {
            layer: layer.id.clone(),
            reason: format!("`{key}` must be a number"),
        }),
        None => Ok(default),
    }
}

fn pool(l: &LayerDecl) -> Result<PoolAttrs, GraphError> {
    let kernel = attr(l, "kernel", None)?;
    Ok(PoolAttrs {
        kernel,
        stride: attr(l, "stride", Some(kernel))?,
        padding: attr(l, "padding", Some(0))?,
    })
}

fn kind_of(l: &LayerDecl) -> Result<LayerKind, GraphError> {
    Ok(match l.kind.as_str() {
        "conv" => {
            let k = l
                .attrs
                .get("kernel")
                .and_then(Value::as_u64)
                .map(|k| k as usize);
            LayerKind::Conv(ConvAttrs {
                out_channels: attr(l, "out_channels", None)?,
                kernel_h: attr(l, "kernel_h", k)?,
                kernel_w: attr(l, "kernel_w", k)?,
                stride: attr(l, "stride", Some(1))?,
                padding: attr(l, "padding", Some(0))?,
                groups: attr(l, "groups", Some(1))?,
            })
        }
        "fc" => LayerKind::Fc {
            out_channels: attr(l, "out_channels", None)?,
        },
        "batchnorm" => {
            let d = BatchNormAttrs::default();
            LayerKind::BatchNorm(BatchNormAttrs {
                eps: float_attr(l, "eps", d.eps)?,
                momentum: float_attr(l, "momentum", d.momentum)?,
            })
        }
        "relu" => LayerKind::Relu,
        "maxpool" => LayerKind::MaxPool(pool(l)?),
        "avgpool" => LayerKind::AvgPool(pool(l)?),
        "globalavgpool" => LayerKind::GlobalAvgPool,
        "add" => LayerKind::Add,
        "concat" => LayerKind::Concat,
        "flatten" => LayerKind::Flatten,
        "output" => LayerKind::Output,
        other => return Err(GraphError::UnsupportedKind(other.to_string())),
    })
}

impl Manifest {
    pub fn to_specs(&self) -> Result<Vec<LayerSpec>, GraphError> {
        let mut specs = Vec::with_capacity(self.inputs.len() + self.layers.len());
        for i in &self.inputs {
            let [n, c, h, w] = i.shape;
            specs.push(LayerSpec::new(
                i.id.clone(),
                LayerKind::Input {
                    shape: Shape::new(n, c, h, w),
                },
                &[],
            ));
        }
        for l in &self.layers {
            specs.push(LayerSpec {
                id: l.id.clone(),
                kind: kind_of(l)?,
                inputs: l.inputs.clone(),
            });
        }
        Ok(specs)
    }

    pub fn build(&self) -> Result<CompGraph, GraphError> {
        CompGraph::new(self.to_specs()?, &self.output)
    }

    /// Manifest for a validated graph, layers in topological order.
    pub fn from_graph(graph: &CompGraph) -> Self {
        let mut inputs = Vec::new();
        let mut layers = Vec::new();
        for spec in graph.to_specs() {
            let mut attrs = Map::new();
            let mut put = |k: &str, v: Value| {
                attrs.insert(k.to_string(), v);
            };
            match &spec.kind {
                LayerKind::Input { shape } => {
                    inputs.push(InputDecl {
                        id: spec.id,
                        shape: shape.dims(),
                    });
                    continue;
                }
                LayerKind::Conv(a) => {
                    put("out_channels", a.out_channels.into());
                    put("kernel_h", a.kernel_h.into());
                    put("kernel_w", a.kernel_w.into());
                    put("stride", a.stride.into());
                    put("padding", a.padding.into());
                    put("groups", a.groups.into());
                }
                LayerKind::Fc { out_channels } => put("out_channels", (*out_channels).into()),
                LayerKind::BatchNorm(a) => {
                    put("eps", a.eps.into());
                    put("momentum", a.momentum.into());
                }
                LayerKind::MaxPool(p) | LayerKind::AvgPool(p) => {
                    put("kernel", p.kernel.into());
                    put("stride", p.stride.into());
                    put("padding", p.padding.into());
                }
                _ => {}
            }
            layers.push(LayerDecl {
                id: spec.id,
                kind: spec.kind.name().to_string(),
                inputs: spec.inputs,
                attrs,
            });
        }
        Manifest {
            inputs,
            layers,
            output: graph.output_name().to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Parses and validates a manifest document.
pub fn parse_graph(text: &str) -> Result<CompGraph, ManifestError> {
    let m: Manifest = serde_json::from_str(text)?;
    Ok(m.build()?)
}

pub fn graph_to_json(graph: &CompGraph) -> String {
    Manifest::from_graph(graph).to_json()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_CONV: &str = r#"{
        "inputs": [{"id": "x", "shape": [1, 3, 8, 8]}],
        "layers": [
            {"id": "conv", "kind": "conv", "inputs": ["x"], "attrs": {"out_channels": 4, "kernel": 3, "padding": 1}},
            {"id": "out", "kind": "output", "inputs": ["conv"]}
        ],
        "output": "out"
    }"#;

    #[test]
    fn padding_preserving_conv() {
        let g = parse_graph(ONE_CONV).unwrap();
        assert_eq!(g.shape(g.find("conv").unwrap()), Shape::new(1, 4, 8, 8));
    }

    #[test]
    fn round_trip_is_stable() {
        let g = parse_graph(ONE_CONV).unwrap();
        let text = graph_to_json(&g);
        let g2 = parse_graph(&text).unwrap();
        assert_eq!(g.shapes(), g2.shapes());
        assert_eq!(text, graph_to_json(&g2));
    }

    #[test]
    fn add_shape_conflict() {
        let text = r#"{
            "inputs": [{"id": "x", "shape": [1, 3, 8, 8]}],
            "layers": [
                {"id": "a", "kind": "conv", "inputs": ["x"], "attrs": {"out_channels": 4, "kernel": 1}},
                {"id": "b", "kind": "conv", "inputs": ["x"], "attrs": {"out_channels": 8, "kernel": 1}},
                {"id": "s", "kind": "add", "inputs": ["a", "b"]},
                {"id": "out", "kind": "output", "inputs": ["s"]}
            ],
            "output": "out"
        }"#;
        let err = parse_graph(text).unwrap_err();
        assert!(
            matches!(err, ManifestError::Graph(GraphError::ShapeMismatch { .. })),
            "{err}"
        );
        let msg = err.to_string();
        assert!(
            msg.contains("(1,4,8,8)") && msg.contains("(1,8,8,8)"),
            "{msg}"
        );
    }

    #[test]
    fn unknown_kind_and_attr() {
        let text = ONE_CONV.replace("\"conv\", \"inputs\"", "\"shuffle\", \"inputs\"");
        assert!(matches!(
            parse_graph(&text),
            Err(ManifestError::Graph(GraphError::UnsupportedKind(k))) if k == "shuffle"
        ));
        let text = ONE_CONV.replace("\"out_channels\": 4", "\"out_channels\": -4");
        assert!(matches!(
            parse_graph(&text),
            Err(ManifestError::Graph(GraphError::InvalidAttr { .. }))
        ));
    }

    #[test]
    fn cycle_is_reported() {
        let text = r#"{
            "inputs": [{"id": "x", "shape": [1, 2, 4, 4]}],
            "layers": [
                {"id": "a", "kind": "add", "inputs": ["x", "b"]},
                {"id": "b", "kind": "relu", "inputs": ["a"]},
                {"id": "out", "kind": "output", "inputs": ["b"]}
            ],
            "output": "out"
        }"#;
        let err = parse_graph(text).unwrap_err().to_string();
        assert!(err.contains("CycleDetected"), "{err}");
    }
}
