use super::*;
use crate::grouping::{build_groups, find_parents};
use crate::mask::MaskSet;
use alloc::string::ToString;

fn small() -> CompGraph {
    let mut b = GraphBuilder::new();
    let x = b.input("x", 2, 3, 8, 8);
    let c1 = b.conv("c1", &x, 4, 3, 2, 1, 1);
    let r = b.relu(&c1);
    let c2 = b.conv("c2", &r, 6, 1, 1, 0, 1);
    let g = b.gap(&c2);
    let f = b.fc("fc", &g, 5);
    b.finish(&f).unwrap()
}

#[test]
fn shapes_are_inferred() {
    let g = small();
    assert_eq!(g.shape(g.find("c1").unwrap()), Shape::new(2, 4, 4, 4));
    assert_eq!(g.shape(g.find("fc").unwrap()), Shape::new(2, 5, 1, 1));
    assert_eq!(g.shape(g.output()), Shape::new(2, 5, 1, 1));
}

#[test]
fn topological_order_ignores_declaration_order() {
    let specs = alloc::vec![
        LayerSpec::new("out", LayerKind::Output, &["c"]),
        LayerSpec::new("c", LayerKind::Fc { out_channels: 2 }, &["x"]),
        LayerSpec::new(
            "x",
            LayerKind::Input {
                shape: Shape::new(1, 3, 1, 1)
            },
            &[]
        ),
    ];
    let g = CompGraph::new(specs, "out").unwrap();
    let ids: Vec<&str> = g.layers().iter().map(|l| l.id.as_str()).collect();
    assert_eq!(ids, ["x", "c", "out"]);
    assert_eq!(g.layer(1).inputs, [0]);
}

#[test]
fn cycle_is_rejected() {
    let specs = alloc::vec![
        LayerSpec::new(
            "x",
            LayerKind::Input {
                shape: Shape::new(1, 3, 1, 1)
            },
            &[]
        ),
        LayerSpec::new("a", LayerKind::Add, &["x", "b"]),
        LayerSpec::new("b", LayerKind::Relu, &["a"]),
        LayerSpec::new("out", LayerKind::Output, &["b"]),
    ];
    assert!(matches!(
        CompGraph::new(specs, "out"),
        Err(GraphError::CycleDetected(_))
    ));
}

#[test]
fn add_shape_mismatch_names_layer() {
    let mut b = GraphBuilder::new();
    let x = b.input("x", 1, 3, 4, 4);
    let a = b.conv("a", &x, 4, 1, 1, 0, 1);
    let c = b.conv("c", &x, 5, 1, 1, 0, 1);
    let s = b.layer("sum", LayerKind::Add, &[&a, &c]);
    match b.finish(&s) {
        Err(GraphError::ShapeMismatch { layer, .. }) => assert_eq!(layer, "sum"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_reference_and_duplicates() {
    let mut b = GraphBuilder::new();
    b.input("x", 1, 1, 1, 1);
    let r = b.layer("r", LayerKind::Relu, &["nope"]);
    assert_eq!(
        b.finish(&r).unwrap_err(),
        GraphError::UnknownLayerReference {
            layer: "r".to_string(),
            reference: "nope".to_string()
        }
    );
    let mut b = GraphBuilder::new();
    b.input("x", 1, 1, 1, 1);
    b.layer("x", LayerKind::Relu, &["x"]);
    assert_eq!(
        b.finish("x").unwrap_err(),
        GraphError::DuplicateId("x".to_string())
    );
}

#[test]
fn dangling_layer_is_unreachable() {
    let mut b = GraphBuilder::new();
    let x = b.input("x", 1, 2, 1, 1);
    b.fc("dead", &x, 3);
    let f = b.fc("f", &x, 2);
    assert_eq!(
        b.finish(&f).unwrap_err(),
        GraphError::Unreachable("dead".to_string())
    );
}

#[test]
fn grouped_channels_must_divide() {
    let mut b = GraphBuilder::new();
    let x = b.input("x", 1, 6, 4, 4);
    let c = b.conv("g", &x, 8, 3, 1, 1, 4);
    assert!(matches!(
        b.finish(&c),
        Err(GraphError::ShapeMismatch { .. })
    ));
}

/// Counts multiply-accumulates by walking the loop nest of a direct
/// convolution, skipping dead input and output channels.
#[allow(clippy::needless_range_loop)]
fn brute_macs(g: &CompGraph, id: LayerId, live_in: &[bool], live_out: &[bool]) -> u64 {
    let geo = g.geometry(id).unwrap();
    let (ipg, opg) = (geo.in_per_group(), geo.out_per_group());
    let mut count = 0;
    for _n in 0..geo.n {
        for o in 0..geo.c_out {
            if !live_out[o] {
                continue;
            }
            let k = o / opg;
            for _y in 0..geo.out_h {
                for _x in 0..geo.out_w {
                    for i in k * ipg..(k + 1) * ipg {
                        if live_in[i] {
                            count += (geo.kernel_h * geo.kernel_w) as u64;
                        }
                    }
                }
            }
        }
    }
    count
}

#[test]
fn flops_match_loop_nest_count() {
    let g = small();
    let p = find_parents(&g).unwrap();
    let t = build_groups(&g, &p).unwrap();
    let mut m = MaskSet::ones(&t);
    let check = |m: &MaskSet| {
        let live = Liveness::compute(&g, &t, m);
        let brute: u64 = g
            .prunable()
            .map(|id| brute_macs(&g, id, &live.input[id], &live.output[id]))
            .sum();
        assert_eq!(flops_of_graph(&g, &t, m), brute);
    };
    check(&m);
    // n * c_o * oh * ow * c_i * kh * kw per layer
    assert_eq!(
        flops_of_graph(&g, &t, &m),
        2 * 4 * 16 * 27 + 2 * 6 * 4 * 4 * 4 + 2 * 5 * 6
    );
    let gid = t.group_of(g.find("c2").unwrap()).unwrap();
    m.prune(gid, 1).unwrap();
    check(&m);
}

#[test]
fn memory_counts_every_map_but_output() {
    let g = small();
    let p = find_parents(&g).unwrap();
    let t = build_groups(&g, &p).unwrap();
    let m = MaskSet::ones(&t);
    // x, c1, relu, c2, gap, fc
    let expect = 2 * (3 * 64 + 4 * 16 + 4 * 16 + 6 * 16 + 6 + 5);
    assert_eq!(memory_of_graph(&g, &t, &m), expect as u64);
}

#[test]
fn pruned_slot_removes_producer_and_transparent_maps() {
    let g = small();
    let p = find_parents(&g).unwrap();
    let t = build_groups(&g, &p).unwrap();
    let mut m = MaskSet::ones(&t);
    let before = memory_of_graph(&g, &t, &m);
    let gid = t.group_of(g.find("c2").unwrap()).unwrap();
    m.prune(gid, 0).unwrap();
    // one 4x4 map of c1 and one of relu, batch 2
    assert_eq!(before - memory_of_graph(&g, &t, &m), 2 * 2 * 16);
}
