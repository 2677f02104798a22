use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use super::{GraphError, Layer, LayerKind, Shape};

fn arity(layer: &Layer, ok: bool, expected: &str) -> Result<(), GraphError> {
    if ok {
        Ok(())
    } else {
        Err(GraphError::Arity {
            layer: layer.id.clone(),
            expected: expected.to_string(),
            actual: layer.inputs.len(),
        })
    }
}

fn invalid(layer: &Layer, reason: impl Into<alloc::string::String>) -> GraphError {
    GraphError::InvalidAttr {
        layer: layer.id.clone(),
        reason: reason.into(),
    }
}

fn window(
    layer: &Layer,
    size: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, GraphError> {
    if stride == 0 || k == 0 {
        return Err(invalid(layer, "kernel and stride must be positive"));
    }
    let padded = size + 2 * pad;
    if padded < k {
        return Err(GraphError::ShapeMismatch {
            layer: layer.id.clone(),
            expected: format!("spatial extent >= {k}"),
            actual: format!("{padded}"),
        });
    }
    Ok((padded - k) / stride + 1)
}

/// Infers output shapes in topological order.
pub(super) fn infer(layers: &[Layer]) -> Result<Vec<Shape>, GraphError> {
    let mut shapes: Vec<Shape> = Vec::with_capacity(layers.len());
    for l in layers {
        let ins: Vec<Shape> = l.inputs.iter().map(|&i| shapes[i]).collect();
        let single = || -> Result<Shape, GraphError> {
            arity(l, ins.len() == 1, "1")?;
            Ok(ins[0])
        };
        let s = match &l.kind {
            LayerKind::Input { shape } => {
                arity(l, ins.is_empty(), "0")?;
                if shape.dims().contains(&0) {
                    return Err(invalid(l, "input dimensions must be >= 1"));
                }
                *shape
            }
            LayerKind::Conv(a) => {
                let x = single()?;
                if a.groups == 0 || a.out_channels == 0 {
                    return Err(invalid(l, "groups and out_channels must be positive"));
                }
                if x.c % a.groups != 0 || a.out_channels % a.groups != 0 {
                    return Err(GraphError::ShapeMismatch {
                        layer: l.id.clone(),
                        expected: format!("channels divisible by groups={}", a.groups),
                        actual: format!("c_in={}, c_out={}", x.c, a.out_channels),
                    });
                }
                let h = window(l, x.h, a.kernel_h, a.stride, a.padding)?;
                let w = window(l, x.w, a.kernel_w, a.stride, a.padding)?;
                Shape::new(x.n, a.out_channels, h, w)
            }
            LayerKind::Fc { out_channels } => {
                let x = single()?;
                if *out_channels == 0 {
                    return Err(invalid(l, "out_channels must be positive"));
                }
                if x.h != 1 || x.w != 1 {
                    return Err(GraphError::ShapeMismatch {
                        layer: l.id.clone(),
                        expected: format!("({},{},1,1)", x.n, x.c),
                        actual: x.to_string(),
                    });
                }
                Shape::new(x.n, *out_channels, 1, 1)
            }
            LayerKind::BatchNorm(_) | LayerKind::Relu | LayerKind::Output => single()?,
            LayerKind::MaxPool(p) | LayerKind::AvgPool(p) => {
                let x = single()?;
                if p.padding * 2 > p.kernel {
                    return Err(invalid(l, "padding must be at most half the kernel"));
                }
                let h = window(l, x.h, p.kernel, p.stride, p.padding)?;
                let w = window(l, x.w, p.kernel, p.stride, p.padding)?;
                Shape::new(x.n, x.c, h, w)
            }
            LayerKind::GlobalAvgPool => {
                let x = single()?;
                Shape::new(x.n, x.c, 1, 1)
            }
            LayerKind::Flatten => {
                let x = single()?;
                Shape::new(x.n, x.c * x.h * x.w, 1, 1)
            }
            LayerKind::Add => {
                arity(l, ins.len() >= 2, ">= 2")?;
                for s in &ins[1..] {
                    if *s != ins[0] {
                        return Err(GraphError::ShapeMismatch {
                            layer: l.id.clone(),
                            expected: ins[0].to_string(),
                            actual: s.to_string(),
                        });
                    }
                }
                ins[0]
            }
            LayerKind::Concat => {
                arity(l, ins.len() >= 2, ">= 2")?;
                let first = ins[0];
                let mut c = 0;
                for s in &ins {
                    if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                        return Err(GraphError::ShapeMismatch {
                            layer: l.id.clone(),
                            expected: format!("({},*,{},{})", first.n, first.h, first.w),
                            actual: s.to_string(),
                        });
                    }
                    c += s.c;
                }
                Shape::new(first.n, c, first.h, first.w)
            }
        };
        shapes.push(s);
    }
    Ok(shapes)
}
