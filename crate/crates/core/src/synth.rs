//! Seeded random models for property tests and benchmarks.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{layer_output_shape, Connection, Framework, IrLayer, IrModel, LayerType, TensorShape};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A straight chain of `n` layers: one Input followed by ReLUs.
pub fn chain(n: usize) -> IrModel {
    let layers: Vec<IrLayer> = (0..n)
        .map(|i| {
            if i == 0 {
                IrLayer::new("n0", LayerType::Input).with("shape", vec![3, 32, 32])
            } else {
                IrLayer::new(format!("n{i}"), LayerType::ReLU)
            }
        })
        .collect();
    let edges = (1..n).map(|i| Connection::new(format!("n{}", i - 1), format!("n{i}"))).collect();
    IrModel::from_parts(format!("chain{n}"), layers, edges).expect("chain is well formed")
}

/// A random connected DAG of `n` layers for layout work. Shapes are not
/// meaningful; layers with several parents are Concat so the graph
/// validates structurally.
pub fn random_dag(rng: &mut impl Rng, n: usize) -> IrModel {
    let mut layers = Vec::with_capacity(n);
    let mut edges = Vec::new();
    for i in 0..n {
        let id = format!("v{i}");
        let parents: Vec<usize> = if i == 0 || rng.random_bool(0.03) {
            Vec::new()
        } else {
            let fan_in = if rng.random_bool(0.15) { rng.random_range(2..=3usize).min(i) } else { 1 };
            let window = i.min(8);
            let mut ps: Vec<usize> = (0..fan_in).map(|_| i - rng.random_range(1..=window)).collect();
            ps.sort_unstable();
            ps.dedup();
            ps
        };
        let t = match parents.len() {
            0 => LayerType::Input,
            1 => *[LayerType::ReLU, LayerType::Sigmoid, LayerType::Dropout, LayerType::Tanh].choose(rng).unwrap(),
            _ => LayerType::Concat,
        };
        let mut layer = IrLayer::new(id.clone(), t);
        if t == LayerType::Input {
            layer = layer.with("shape", vec![3, 8, 8]);
        }
        layers.push(layer);
        edges.extend(parents.into_iter().map(|p| Connection::new(format!("v{p}"), id.clone())));
    }
    IrModel::from_parts("dag", layers, edges).expect("generated DAG is well formed")
}

struct Builder {
    target: Framework,
    layers: Vec<IrLayer>,
    edges: Vec<Connection>,
    /// Tensors available as inputs: (layer index, output shape).
    open: Vec<(usize, TensorShape)>,
}

impl Builder {
    fn push(&mut self, layer: IrLayer, parents: &[usize], shape: TensorShape) {
        let id = layer.id.clone();
        for &p in parents {
            self.edges.push(Connection::new(self.layers[p].id.clone(), id.clone()));
        }
        self.layers.push(layer);
        self.open.push((self.layers.len() - 1, shape));
    }

    fn id(&self, kind: &str) -> String {
        format!("l{}_{kind}", self.layers.len())
    }

    fn try_push(&mut self, layer: IrLayer, parents: &[usize]) -> bool {
        let inputs: Vec<TensorShape> =
            parents.iter().map(|p| self.open.iter().find(|(i, _)| i == p).expect("parent is open").1.clone()).collect();
        let refs: Vec<&TensorShape> = inputs.iter().collect();
        match layer_output_shape(&layer, &refs) {
            Ok(shape) if shape.dims().iter().all(|&d| d >= 1) && shape.elements() <= 1 << 22 => {
                self.push(layer, parents, shape);
                true
            }
            _ => false,
        }
    }
}

fn per_dim(rng: &mut impl Rng, rank: usize, lo: i64, hi: i64) -> Vec<i64> {
    if rank > 1 && rng.random_bool(0.2) {
        (0..rank).map(|_| rng.random_range(lo..=hi)).collect()
    } else {
        vec![rng.random_range(lo..=hi)]
    }
}

/// One spatial layer drawn at random; `None` when the draw does not fit.
fn spatial_layer(rng: &mut impl Rng, b: &Builder, input: &TensorShape) -> Option<IrLayer> {
    let rank = input.rank().checked_sub(1).filter(|r| (1..=3).contains(r))?;
    let smallest = *input.spatial().iter().min()? as i64;
    let kernel = per_dim(rng, rank, 1, smallest.min(5));
    let kmin = *kernel.iter().min().unwrap();
    let stride = per_dim(rng, rank, 1, 3);
    let pad = if rng.random_bool(0.5) { vec![0] } else { per_dim(rng, rank, 0, (kmin - 1).max(0)) };
    // Per-dimension lists must agree in length once any is spelled out.
    let spread = |v: Vec<i64>| {
        if v.len() == 1 && [&kernel, &stride, &pad].iter().any(|l| l.len() > 1) {
            vec![v[0]; rank]
        } else {
            v
        }
    };
    let (kernel, stride, pad) = (spread(kernel.clone()), spread(stride.clone()), spread(pad.clone()));
    let choice = rng.random_range(0..10);
    let layer = if choice < 6 {
        let t =
            if choice == 5 && b.target == Framework::Caffe { LayerType::Deconvolution } else { LayerType::Convolution };
        let channels = input.channels()? as i64;
        let mut l = IrLayer::new(b.id(if t == LayerType::Convolution { "conv" } else { "deconv" }), t)
            .with("num_output", rng.random_range(1..=16) as f64)
            .with("kernel", kernel);
        if t == LayerType::Deconvolution {
            l = l.with("stride", stride).with("pad", vec![0]);
        } else {
            l = l.with("stride", stride).with("pad", pad);
        }
        if rng.random_bool(0.2) {
            l = l.with("bias_term", false);
        }
        if t == LayerType::Convolution && channels % 2 == 0 && rng.random_bool(0.15) {
            let out = l.number("num_output").unwrap() as i64;
            l = l.with("num_output", (out + out % 2) as f64).with("group", 2.0);
        }
        l
    } else {
        let mut l = IrLayer::new(b.id("pool"), LayerType::Pooling)
            .with("pool", if rng.random_bool(0.5) { "max" } else { "ave" });
        if rng.random_bool(0.15) {
            l = l.with("global_pooling", true);
        } else {
            l = l.with("kernel", kernel).with("stride", stride).with("pad", pad);
            if b.target == Framework::Caffe && rng.random_bool(0.4) {
                let floor = layer_output_shape(&l, &[input]).ok()?;
                let ceil = layer_output_shape(&l.clone().with("ceil_mode", true), &[input]).ok()?;
                if ceil != floor {
                    l = l.with("ceil_mode", true);
                }
            }
        }
        l
    };
    Some(layer)
}

/// A random valid model of at most `max_layers` layers whose every layer
/// and parameter is expressible in `target`, with shapes declared on all
/// inputs.
pub fn random_model(rng: &mut impl Rng, target: Framework, max_layers: usize) -> IrModel {
    let max_layers = max_layers.max(2);
    let mut b = Builder { target, layers: Vec::new(), edges: Vec::new(), open: Vec::new() };
    if target == Framework::Keras && rng.random_bool(0.2) {
        sequence_model(rng, &mut b, max_layers);
    } else {
        let inputs = if rng.random_bool(0.2) { 2 } else { 1 };
        // Caffe spells a 1-d kernel like an n-d one, so it gets no 1-d inputs.
        let ranks: &[usize] = if target == Framework::Caffe { &[0, 2, 2, 2, 3] } else { &[0, 1, 2, 2, 2, 3] };
        let rank = *ranks.choose(rng).unwrap();
        let channels = if rank == 0 { rng.random_range(1..=64) } else { rng.random_range(1..=8) };
        for _ in 0..inputs {
            let mut dims = vec![channels];
            dims.extend((0..rank).map(|_| rng.random_range(if rank == 3 { 4..=10 } else { 6..=32 })));
            let shape = TensorShape::new(dims.iter().map(|&d| d as usize).collect());
            let id = b.id("data");
            b.push(IrLayer::new(id, LayerType::Input).with("shape", dims), &[], shape);
        }
    }
    let target_len = rng.random_range(b.layers.len() + 1..=max_layers);
    let mut attempts = 0;
    while b.layers.len() < target_len && attempts < 50 * max_layers {
        attempts += 1;
        grow(rng, &mut b);
    }
    IrModel::from_parts(format!("random_{}", target.as_str()), b.layers, b.edges)
        .expect("generated model is well formed")
}

fn sequence_model(rng: &mut impl Rng, b: &mut Builder, max_layers: usize) {
    let steps = rng.random_range(2..=20i64);
    let id = b.id("tokens");
    b.push(IrLayer::new(id, LayerType::Input).with("shape", vec![steps]), &[], TensorShape::new(vec![steps as usize]));
    let embed = IrLayer::new(b.id("embed"), LayerType::Embedding)
        .with("input_dim", rng.random_range(10..=500) as f64)
        .with("output_dim", rng.random_range(4..=32) as f64);
    b.try_push(embed, &[0]);
    let depth = rng.random_range(1..=3).min(max_layers.saturating_sub(2).max(1));
    for d in 0..depth {
        let t = *[LayerType::RNN, LayerType::LSTM, LayerType::GRU].choose(rng).unwrap();
        let mut l = IrLayer::new(b.id(t.spec().default_name), t).with("num_output", rng.random_range(2..=32) as f64);
        if d + 1 < depth {
            l = l.with("return_sequences", true);
        }
        let parent = b.layers.len() - 1;
        b.try_push(l, &[parent]);
    }
}

fn activation(rng: &mut impl Rng, b: &Builder) -> IrLayer {
    match rng.random_range(0..6) {
        0 => IrLayer::new(b.id("relu"), LayerType::ReLU).with("negative_slope", 0.1),
        1 => IrLayer::new(b.id("sigmoid"), LayerType::Sigmoid),
        2 => IrLayer::new(b.id("tanh"), LayerType::Tanh),
        3 => IrLayer::new(b.id("drop"), LayerType::Dropout).with("ratio", *[0.25, 0.5, 0.75].choose(rng).unwrap()),
        _ => IrLayer::new(b.id("relu"), LayerType::ReLU),
    }
}

/// A recent open tensor, so models get deep rather than bushy.
fn pick(rng: &mut impl Rng, b: &Builder) -> (usize, TensorShape) {
    let n = b.open.len();
    b.open[n - 1 - rng.random_range(0..n.min(4))].clone()
}

fn grow(rng: &mut impl Rng, b: &mut Builder) {
    let (parent, shape) = pick(rng, b);
    let spatial = shape.rank() >= 2;
    match rng.random_range(0..14) {
        0..=4 if spatial => {
            if let Some(l) = spatial_layer(rng, b, &shape) {
                b.try_push(l, &[parent]);
            }
        }
        5..=6 => {
            let l = activation(rng, b);
            b.try_push(l, &[parent]);
        }
        7 => {
            let mut l = IrLayer::new(b.id("bn"), LayerType::BatchNorm);
            if rng.random_bool(0.3) {
                l = l.with("eps", 0.001);
            }
            b.try_push(l, &[parent]);
        }
        8 => {
            let mut l =
                IrLayer::new(b.id("fc"), LayerType::InnerProduct).with("num_output", rng.random_range(1..=64) as f64);
            if rng.random_bool(0.2) {
                l = l.with("bias_term", false);
            }
            b.try_push(l, &[parent]);
        }
        9 if spatial => {
            let l = IrLayer::new(b.id("flatten"), LayerType::Flatten);
            b.try_push(l, &[parent]);
        }
        10 if b.target == Framework::Caffe && spatial => {
            let l = IrLayer::new(b.id("norm"), LayerType::LRN)
                .with("local_size", *[3.0, 5.0].choose(rng).unwrap())
                .with("alpha", 0.0001);
            b.try_push(l, &[parent]);
        }
        11 | 12 => {
            // Join with another open tensor of compatible shape.
            let (other, other_shape) = pick(rng, b);
            if other == parent {
                return;
            }
            let concat = rng.random_bool(0.5);
            let fits = if concat {
                shape.rank() == other_shape.rank() && shape.dims()[1..] == other_shape.dims()[1..]
            } else {
                shape == other_shape
            };
            if !fits {
                return;
            }
            let l = if concat {
                IrLayer::new(b.id("concat"), LayerType::Concat)
            } else {
                IrLayer::new(b.id("eltwise"), LayerType::Eltwise)
                    .with("operation", *["sum", "prod", "max"].choose(rng).unwrap())
            };
            b.try_push(l, &[parent, other]);
        }
        13 => {
            let l = IrLayer::new(b.id("prob"), LayerType::Softmax);
            b.try_push(l, &[parent]);
        }
        _ => {}
    }
}
