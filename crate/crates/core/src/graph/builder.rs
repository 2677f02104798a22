use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{
    BatchNormAttrs, CompGraph, ConvAttrs, GraphError, LayerKind, LayerSpec, PoolAttrs, Shape,
};

/// Appends layers with generated or explicit ids.
///
/// ```
/// use gfp_core::graph::GraphBuilder;
///
/// let mut b = GraphBuilder::new();
/// let x = b.input("x", 1, 3, 8, 8);
/// let c = b.conv("c1", &x, 4, 3, 1, 1, 1);
/// let r = b.relu(&c);
/// let g = b.gap(&r);
/// let f = b.fc("fc", &g, 10);
/// let graph = b.finish(&f).unwrap();
/// assert_eq!(graph.len(), 6);
/// ```
#[derive(Clone, Debug, Default)]
pub struct GraphBuilder {
    specs: Vec<LayerSpec>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn fresh(&self, prefix: &str) -> String {
        format!("{prefix}{}", self.specs.len())
    }

    /// Adds a layer under an explicit id and returns that id.
    pub fn layer(&mut self, id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> String {
        let id = id.into();
        self.specs.push(LayerSpec::new(id.clone(), kind, inputs));
        id
    }

    pub fn input(&mut self, id: &str, n: usize, c: usize, h: usize, w: usize) -> String {
        self.layer(
            id,
            LayerKind::Input {
                shape: Shape::new(n, c, h, w),
            },
            &[],
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        id: &str,
        x: &str,
        out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> String {
        let kind = LayerKind::Conv(ConvAttrs {
            out_channels: out,
            kernel_h: k,
            kernel_w: k,
            stride,
            padding,
            groups,
        });
        self.layer(id, kind, &[x])
    }

    pub fn fc(&mut self, id: &str, x: &str, out: usize) -> String {
        self.layer(id, LayerKind::Fc { out_channels: out }, &[x])
    }

    pub fn bn(&mut self, x: &str) -> String {
        let id = self.fresh("bn");
        self.layer(id, LayerKind::BatchNorm(BatchNormAttrs::default()), &[x])
    }

    pub fn relu(&mut self, x: &str) -> String {
        let id = self.fresh("relu");
        self.layer(id, LayerKind::Relu, &[x])
    }

    pub fn maxpool(&mut self, x: &str, kernel: usize, stride: usize, padding: usize) -> String {
        let id = self.fresh("maxpool");
        self.layer(
            id,
            LayerKind::MaxPool(PoolAttrs {
                kernel,
                stride,
                padding,
            }),
            &[x],
        )
    }

    pub fn avgpool(&mut self, x: &str, kernel: usize, stride: usize, padding: usize) -> String {
        let id = self.fresh("avgpool");
        self.layer(
            id,
            LayerKind::AvgPool(PoolAttrs {
                kernel,
                stride,
                padding,
            }),
            &[x],
        )
    }

    pub fn gap(&mut self, x: &str) -> String {
        let id = self.fresh("gap");
        self.layer(id, LayerKind::GlobalAvgPool, &[x])
    }

    pub fn flatten(&mut self, x: &str) -> String {
        let id = self.fresh("flatten");
        self.layer(id, LayerKind::Flatten, &[x])
    }

    pub fn add(&mut self, xs: &[&str]) -> String {
        let id = self.fresh("add");
        self.layer(id, LayerKind::Add, xs)
    }

    pub fn concat(&mut self, xs: &[&str]) -> String {
        let id = self.fresh("concat");
        self.layer(id, LayerKind::Concat, xs)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Appends an output layer reading `x` and builds the graph.
    pub fn finish(mut self, x: &str) -> Result<CompGraph, GraphError> {
        self.layer("output", LayerKind::Output, &[x]);
        CompGraph::new(self.specs, "output")
    }
}
