#![allow(dead_code)]

use gfp_core::graph::GraphBuilder;
use gfp_core::grouping::{build_groups, find_parents};
use gfp_core::{CompGraph, Dataset, GroupTable, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn grouped(g: CompGraph) -> (CompGraph, GroupTable) {
    let t = build_groups(&g, &find_parents(&g).unwrap()).unwrap();
    (g, t)
}

/// Small network touching every layer kind.
pub fn every_op(n: usize) -> (CompGraph, GroupTable) {
    let mut b = GraphBuilder::new();
    let x = b.input("x", n, 3, 8, 8);
    let c1 = b.conv("c1", &x, 8, 3, 1, 1, 1);
    let bn1 = b.bn(&c1);
    let r1 = b.relu(&bn1);
    let mp = b.maxpool(&r1, 2, 2, 0);
    let g2 = b.conv("g2", &mp, 8, 3, 1, 1, 2);
    let bn2 = b.bn(&g2);
    let r2 = b.relu(&bn2);
    let dw = b.conv("dw", &r2, 8, 3, 1, 1, 8);
    let s = b.add(&[&mp, &dw]);
    let ap = b.avgpool(&s, 2, 2, 0);
    let p = b.conv("p", &ap, 8, 1, 1, 0, 1);
    let cat = b.concat(&[&ap, &p]);
    let gap = b.gap(&cat);
    let fl = b.flatten(&gap);
    let fc = b.fc("fc", &fl, 5);
    grouped(b.finish(&fc).unwrap())
}

/// conv -> relu -> conv -> gap -> fc on 1-channel 6x6 inputs.
pub fn two_conv(n: usize, mid: usize) -> (CompGraph, GroupTable) {
    let mut b = GraphBuilder::new();
    let x = b.input("x", n, 2, 6, 6);
    let c1 = b.conv("c1", &x, mid, 3, 1, 1, 1);
    let r = b.relu(&c1);
    let c2 = b.conv("c2", &r, mid, 3, 1, 1, 1);
    let r2 = b.relu(&c2);
    let g = b.gap(&r2);
    let fc = b.fc("fc", &g, 3);
    grouped(b.finish(&fc).unwrap())
}

pub fn random_batch(shape: [usize; 4], classes: usize, seed: u64) -> (Tensor<f32>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let labels = (0..shape[0])
        .map(|_| rng.random_range(0..classes))
        .collect();
    (Tensor::from_vec(shape, data).unwrap(), labels)
}

/// Labels depend on which quadrant has the most energy, so a small CNN can
/// learn them.
pub fn quadrant_data(count: usize, dims: [usize; 3], seed: u64) -> Dataset {
    let [c, h, w] = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count * c * h * w);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let y = rng.random_range(0..3usize);
        for _ in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let quad = (i >= h / 2) as usize + (j >= w / 2) as usize;
                    let boost = if quad == y { 1.0 } else { 0.0 };
                    images.push(boost + rng.random_range(-0.5f32..0.5));
                }
            }
        }
        labels.push(y);
    }
    Dataset::new(dims, 3, images, labels).unwrap()
}
