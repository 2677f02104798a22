//! Networks and synthetic data used by the CLI's `fixture` subcommand and the
//! test suites.

use std::collections::BTreeSet;
use std::f32::consts::PI;

use gfp_core::graph::GraphBuilder;
use gfp_core::{CompGraph, Dataset};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Residual CNN on 3x32x32 images with a plain residual block, a grouped
/// conv bottleneck with a strided shortcut, and a depth-wise block.
///
/// Groups: `{c1}` (frozen), `{c2, c4, c7}`, `{c3}`, `{c5, c6}` with 4
/// block slots, `{c8, c9, fc}`.
pub fn reference_net(classes: usize) -> CompGraph {
    let mut b = GraphBuilder::new();
    let x = b.input("x", 1, 3, 32, 32);
    let c1 = b.conv("c1", &x, 16, 3, 2, 1, 1);
    let t = b.bn(&c1);
    let t = b.relu(&t);
    let stem = b.maxpool(&t, 2, 2, 0);

    let c2 = b.conv("c2", &stem, 16, 3, 1, 1, 1);
    let t = b.bn(&c2);
    let t = b.relu(&t);
    let c3 = b.conv("c3", &t, 16, 3, 1, 1, 1);
    let t = b.bn(&c3);
    let s = b.add(&[&stem, &t]);
    let r1 = b.relu(&s);

    let c4 = b.conv("c4", &r1, 32, 1, 1, 0, 1);
    let t = b.bn(&c4);
    let t = b.relu(&t);
    let c5 = b.conv("c5", &t, 32, 3, 2, 1, 4);
    let t = b.bn(&c5);
    let t = b.relu(&t);
    let c6 = b.conv("c6", &t, 32, 1, 1, 0, 1);
    let main = b.bn(&c6);
    let c7 = b.conv("c7", &r1, 32, 1, 2, 0, 1);
    let short = b.bn(&c7);
    let s = b.add(&[&main, &short]);
    let r2 = b.relu(&s);

    let c8 = b.conv("c8", &r2, 32, 3, 1, 1, 32);
    let t = b.bn(&c8);
    let t = b.relu(&t);
    let c9 = b.conv("c9", &t, 32, 1, 1, 0, 1);
    let t = b.bn(&c9);
    let s = b.add(&[&r2, &t]);
    let r3 = b.relu(&s);

    let p = b.gap(&r3);
    let f = b.flatten(&p);
    let fc = b.fc("fc", &f, classes);
    b.finish(&fc).expect("reference net is well formed")
}

/// First bottleneck of a ResNet-50 style network at reduced width: stem
/// C1, branch C2-C3-C4, projection shortcut C5, and the next block's C6
/// reading the sum.
pub fn bottleneck_block() -> CompGraph {
    let mut b = GraphBuilder::new();
    let x = b.input("x", 1, 3, 32, 32);
    let c1 = b.conv("C1", &x, 16, 7, 2, 3, 1);
    let t = b.bn(&c1);
    let t = b.relu(&t);
    let stem = b.maxpool(&t, 3, 2, 1);
    let c2 = b.conv("C2", &stem, 8, 1, 1, 0, 1);
    let t = b.bn(&c2);
    let t = b.relu(&t);
    let c3 = b.conv("C3", &t, 8, 3, 1, 1, 1);
    let t = b.bn(&c3);
    let t = b.relu(&t);
    let c4 = b.conv("C4", &t, 32, 1, 1, 0, 1);
    let main = b.bn(&c4);
    let c5 = b.conv("C5", &stem, 32, 1, 1, 0, 1);
    let short = b.bn(&c5);
    let s = b.layer("add", gfp_core::LayerKind::Add, &[&main, &short]);
    let c6 = b.conv("C6", &s, 8, 1, 1, 0, 1);
    b.finish(&c6).expect("block is well formed")
}

struct Node {
    name: String,
    c: usize,
    h: usize,
    used: bool,
    /// Read by exactly one grouped conv; nothing else may consume it.
    private: bool,
    /// Nodes whose output channels this tensor carries.
    origins: BTreeSet<usize>,
    /// Downstream of a grouped conv; such tensors never enter an Add.
    blocked: bool,
    /// Channel order no longer follows a single producer (after Concat).
    mixed: bool,
}

impl Node {
    fn new(name: String, c: usize, h: usize) -> Self {
        Node {
            name,
            c,
            h,
            used: false,
            private: false,
            origins: BTreeSet::new(),
            blocked: false,
            mixed: false,
        }
    }

    fn addable(&self) -> bool {
        !self.private && !self.blocked && !self.mixed
    }
}

/// Random DAG over one `(1, c, 8, 8)` input ending in GAP, Concat, Flatten
/// and a 3-way FC. Grouped convs read a private projection and their
/// descendants stay out of Add; Concat joins only tensors whose channels
/// are never tied together by an Add. Together these keep almost every draw free of
/// `InconsistentWidth`.
pub fn random_dag(seed: u64, max_convs: usize) -> CompGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    let c0 = rng.random_range(2..=4);
    let x = b.input("x", 1, c0, 8, 8);
    let mut nodes = vec![Node::new(x, c0, 8)];
    nodes[0].origins.insert(0);
    let target = rng.random_range(1..=max_convs.max(1));
    let mut convs = 0;
    let widths = [2usize, 4, 6, 8];

    // `fresh` starts a new channel origin; otherwise origins and flags are
    // inherited from the sources.
    fn push(
        nodes: &mut Vec<Node>,
        name: String,
        c: usize,
        h: usize,
        srcs: &[usize],
        fresh: bool,
    ) -> usize {
        let mut n = Node::new(name, c, h);
        for &s in srcs {
            nodes[s].used = true;
            if !fresh {
                n.origins.extend(nodes[s].origins.iter().copied());
                n.blocked |= nodes[s].blocked;
                n.mixed |= nodes[s].mixed;
            }
        }
        let id = nodes.len();
        if fresh {
            n.origins.insert(id);
        }
        nodes.push(n);
        id
    }

    // Union-find over origin nodes, merged by Add; `apart` holds origins
    // that sit side by side in some Concat and so must never merge.
    let mut uf: Vec<usize> = Vec::new();
    let mut apart: Vec<(usize, usize)> = Vec::new();
    fn find(uf: &mut Vec<usize>, x: usize) -> usize {
        if uf.len() <= x {
            uf.extend(uf.len()..=x);
        }
        let mut r = x;
        while uf[r] != r {
            r = uf[r];
        }
        uf[x] = r;
        r
    }
    fn union(uf: &mut Vec<usize>, a: usize, b: usize) {
        let (ra, rb) = (find(uf, a), find(uf, b));
        uf[ra.max(rb)] = ra.min(rb);
    }
    fn roots(uf: &mut Vec<usize>, n: &Node) -> BTreeSet<usize> {
        n.origins.iter().map(|&o| find(uf, o)).collect()
    }

    while convs < target {
        let roll = rng.random_range(0..100);
        let open: Vec<usize> = (0..nodes.len()).filter(|&i| !nodes[i].private).collect();
        let src = *open.choose(&mut rng).unwrap();
        let (c, h) = (nodes[src].c, nodes[src].h);
        let name = nodes[src].name.clone();
        match roll {
            0..=39 => {
                let out = *widths.choose(&mut rng).unwrap();
                let k = if rng.random_bool(0.5) { 1 } else { 3 };
                let stride = if h >= 4 && rng.random_bool(0.15) {
                    2
                } else {
                    1
                };
                let id = format!("conv{convs}");
                let n = b.conv(&id, &name, out, k, stride, k / 2, 1);
                push(&mut nodes, n, out, h.div_ceil(stride), &[src], true);
                convs += 1;
            }
            40..=51 => {
                // A plain conv reading the same tensor as a grouped conv
                // cannot share its block slots, so the grouped conv gets a
                // private 1x1 projection in front.
                if convs + 2 > target {
                    continue;
                }
                let c = [4usize, 6, 8].choose(&mut rng).copied().unwrap();
                let divisors: Vec<usize> = (2..c).filter(|g| c % g == 0).collect();
                let g = *divisors.choose(&mut rng).unwrap();
                let proj = b.conv(&format!("proj{convs}"), &name, c, 1, 1, 0, 1);
                let p = push(&mut nodes, proj.clone(), c, h, &[src], true);
                nodes[p].private = true;
                let out = g * rng.random_range(1..=2) * (c / g).min(2);
                let id = format!("gconv{}", convs + 1);
                let n = b.conv(&id, &proj, out, 3, 1, 1, g);
                let q = push(&mut nodes, n, out, h, &[p], true);
                nodes[q].blocked = true;
                convs += 2;
            }
            52..=61 => {
                if c < 2 {
                    continue;
                }
                let id = format!("dw{convs}");
                let n = b.conv(&id, &name, c, 3, 1, 1, c);
                push(&mut nodes, n, c, h, &[src], false);
                convs += 1;
            }
            62..=73 => {
                if !nodes[src].addable() {
                    continue;
                }
                let peers: Vec<usize> = (0..nodes.len())
                    .filter(|&i| {
                        i != src && nodes[i].addable() && nodes[i].c == c && nodes[i].h == h
                    })
                    .collect();
                let other = match peers.choose(&mut rng) {
                    Some(&o) => o,
                    None => {
                        let id = format!("proj{convs}");
                        let n = b.conv(&id, &name, c, 1, 1, 0, 1);
                        convs += 1;
                        push(&mut nodes, n, c, h, &[src], true)
                    }
                };
                let mut trial = uf.clone();
                let mut os = nodes[src].origins.iter().chain(&nodes[other].origins);
                let first = *os.next().unwrap();
                for &o in os {
                    union(&mut trial, first, o);
                }
                if apart
                    .iter()
                    .any(|&(a, c)| find(&mut trial, a) == find(&mut trial, c))
                {
                    continue;
                }
                uf = trial;
                let n = b.add(&[&name, &nodes[other].name.clone()]);
                push(&mut nodes, n, c, h, &[src, other], false);
            }
            74..=83 => {
                let peers: Vec<usize> = (0..nodes.len())
                    .filter(|&i| i != src && !nodes[i].private && nodes[i].h == h)
                    .filter(|&i| {
                        roots(&mut uf, &nodes[i]).is_disjoint(&roots(&mut uf, &nodes[src]))
                    })
                    .collect();
                let Some(&other) = peers.choose(&mut rng) else {
                    continue;
                };
                for &a in &nodes[src].origins {
                    apart.extend(nodes[other].origins.iter().map(|&o| (a, o)));
                }
                let oc = nodes[other].c;
                let n = b.concat(&[&name, &nodes[other].name.clone()]);
                let id = push(&mut nodes, n, c + oc, h, &[src, other], false);
                nodes[id].mixed = true;
            }
            _ => {
                let (n, nh) = match rng.random_range(0..4) {
                    0 => (b.bn(&name), h),
                    1 => (b.relu(&name), h),
                    2 if h >= 4 => (b.maxpool(&name, 2, 2, 0), h / 2),
                    _ => (b.avgpool(&name, 3, 1, 1), h),
                };
                push(&mut nodes, n, c, nh, &[src], false);
            }
        }
    }

    // Dangling tensors sharing channels with an earlier one get their own
    // 1x1 head so the final Concat never repeats a channel.
    let mut seen = BTreeSet::new();
    let mut tails = Vec::new();
    for n in nodes.iter().filter(|n| !n.used) {
        let mut name = n.name.clone();
        let r = roots(&mut uf, n);
        if !r.is_disjoint(&seen) {
            name = b.conv(&format!("head{}", tails.len()), &name, n.c, 1, 1, 0, 1);
        } else {
            seen.extend(r);
        }
        tails.push(b.gap(&name));
    }
    let refs: Vec<&str> = tails.iter().map(String::as_str).collect();
    let joined = if refs.len() == 1 {
        tails[0].clone()
    } else {
        b.concat(&refs)
    };
    let f = b.flatten(&joined);
    let fc = b.fc("fc", &f, 3);
    b.finish(&fc)
        .expect("generator only emits well-formed graphs")
}

/// Oriented sinusoidal gratings on 3x`size`x`size` images. A class fixes
/// orientation, spatial frequency and a colour mix; each sample draws a
/// random phase and amplitude and adds Gaussian pixel noise. Class
/// definitions do not depend on `seed`, so differently seeded sets share
/// one task.
pub fn textures(count: usize, classes: usize, size: usize, noise: f32, seed: u64) -> Dataset {
    let mut proto = ChaCha8Rng::seed_from_u64(0x7e57_u64);
    let half = classes.div_ceil(2).max(1);
    let defs: Vec<(f32, f32, [f32; 3])> = (0..classes)
        .map(|k| {
            let theta = PI * (k % half) as f32 / half as f32;
            let freq = if k < half { 2.0 } else { 4.5 };
            let col = [0; 3].map(|_| proto.random_range(-1.0..1.0f32));
            (theta, freq, col)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, noise.max(0.0)).unwrap();
    let mut images = Vec::with_capacity(count * 3 * size * size);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let k = i % classes;
        let (theta, freq, col) = defs[k];
        let phase = rng.random_range(0.0..2.0 * PI);
        let amp = rng.random_range(0.8..1.2f32);
        let (s, c) = theta.sin_cos();
        for ch in col {
            for y in 0..size {
                for x in 0..size {
                    let u = (x as f32 * c + y as f32 * s) / size as f32;
                    let v = amp * (1.0 + 0.5 * ch) * (2.0 * PI * freq * u + phase).sin();
                    images.push(v + gauss.sample(&mut rng));
                }
            }
        }
        labels.push(k);
    }
    Dataset::new([3, size, size], classes, images, labels).unwrap()
}

/// Isotropic Gaussian clusters in `dims` features laid out as `(dims, 1, 1)`
/// images, one cluster per class with unit-scale centres.
pub fn gaussian_mixture(
    count: usize,
    dims: usize,
    classes: usize,
    spread: f32,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0f32, 1.0).unwrap();
    let centres: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..dims).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    let mut images = Vec::with_capacity(count * dims);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let k = i % classes;
        images.extend(
            centres[k]
                .iter()
                .map(|m| m + spread * unit.sample(&mut rng)),
        );
        labels.push(k);
    }
    Dataset::new([dims, 1, 1], classes, images, labels).unwrap()
}
