#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use layerloom_core::ir::{IrModel, LayerType};

type Edges = BTreeSet<(String, String)>;

/// Layer id → (type, canonical params JSON) plus the edge set. Two models
/// are isomorphic under the identity id mapping iff these agree.
pub fn signature(model: &IrModel) -> (BTreeMap<String, (String, String)>, Edges) {
    let canon = model.canonicalize();
    let layers = canon
        .layers()
        .map(|l| (l.id.clone(), (l.layer_type.to_string(), serde_json::to_string(&l.params).unwrap())))
        .collect();
    let edges = canon.connections().iter().map(|c| (c.from.clone(), c.to.clone())).collect();
    (layers, edges)
}

pub fn assert_isomorphic(a: &IrModel, b: &IrModel, context: &str) {
    let (la, ea) = signature(a);
    let (lb, eb) = signature(b);
    for (id, sig) in &la {
        match lb.get(id) {
            Some(other) => assert_eq!(sig, other, "{context}: layer '{id}' differs"),
            None => {
                panic!("{context}: layer '{id}' missing after round trip; have {:?}", lb.keys().collect::<Vec<_>>())
            }
        }
    }
    assert_eq!(la.len(), lb.len(), "{context}: layer count");
    assert_eq!(ea, eb, "{context}: connections");
}

fn spread(v: Option<&[i64]>, rank: usize, default: i64) -> Vec<i64> {
    match v {
        None => vec![default; rank],
        Some([x]) => vec![*x; rank],
        Some(v) => v.to_vec(),
    }
}

/// Trainable parameters from the stated per-layer formulas, with its own
/// topological walk and shape arithmetic.
pub fn param_oracle(model: &IrModel) -> u64 {
    let ids: Vec<&str> = model.layers().map(|l| l.id.as_str()).collect();
    let mut indeg: HashMap<&str, usize> = ids.iter().map(|&i| (i, 0)).collect();
    for c in model.connections() {
        *indeg.get_mut(c.to.as_str()).unwrap() += 1;
    }
    let mut queue: VecDeque<&str> = ids.iter().copied().filter(|i| indeg[i] == 0).collect();
    let mut shapes: HashMap<String, Vec<i64>> = HashMap::new();
    let mut total = 0u64;
    while let Some(id) = queue.pop_front() {
        let layer = model.layer(id).unwrap();
        let ins: Vec<Vec<i64>> = model.parents(id).iter().map(|p| shapes[*p].clone()).collect();
        let x = ins.first().cloned().unwrap_or_default();
        let num = |k: &str| layer.number(k).unwrap() as i64;
        let bias = |out: i64| {
            if layer.get("bias_term").and_then(|v| v.as_bool()) == Some(false) {
                0
            } else {
                out
            }
        };
        let out: Vec<i64> = match layer.layer_type {
            LayerType::Input => layer.ints("shape").unwrap().to_vec(),
            LayerType::Convolution | LayerType::Deconvolution => {
                let rank = x.len() - 1;
                let k = spread(layer.ints("kernel"), rank, 1);
                let s = spread(layer.ints("stride"), rank, 1);
                let p = spread(layer.ints("pad"), rank, 0);
                let g = layer.number("group").unwrap_or(1.0) as i64;
                let o = num("num_output");
                total += (o * (x[0] / g) * k.iter().product::<i64>() + bias(o)) as u64;
                let mut d = vec![o];
                for i in 0..rank {
                    d.push(if layer.layer_type == LayerType::Convolution {
                        (x[i + 1] + 2 * p[i] - k[i]) / s[i] + 1
                    } else {
                        (x[i + 1] - 1) * s[i] - 2 * p[i] + k[i]
                    });
                }
                d
            }
            LayerType::Pooling => {
                let rank = x.len() - 1;
                if layer.flag("global_pooling") {
                    let mut d = vec![x[0]];
                    d.extend(vec![1; rank]);
                    d
                } else {
                    let k = spread(layer.ints("kernel"), rank, 1);
                    let s = spread(layer.ints("stride"), rank, 1);
                    let p = spread(layer.ints("pad"), rank, 0);
                    let mut d = vec![x[0]];
                    for i in 0..rank {
                        let span = x[i + 1] + 2 * p[i] - k[i];
                        let mut o = span / s[i] + 1;
                        if layer.flag("ceil_mode") {
                            o = (span as f64 / s[i] as f64).ceil() as i64 + 1;
                            if p[i] > 0 && (o - 1) * s[i] >= x[i + 1] + p[i] {
                                o -= 1;
                            }
                        }
                        d.push(o);
                    }
                    d
                }
            }
            LayerType::InnerProduct => {
                let o = num("num_output");
                total += (x.iter().product::<i64>() * o + bias(o)) as u64;
                vec![o]
            }
            LayerType::BatchNorm => {
                total += 2 * x[0] as u64;
                x
            }
            LayerType::Scale => {
                total += x[0] as u64 * if layer.flag("bias_term") { 2 } else { 1 };
                x
            }
            LayerType::Flatten => vec![x.iter().product()],
            LayerType::Concat => {
                let mut d = x.clone();
                d[0] = ins.iter().map(|s| s[0]).sum();
                d
            }
            LayerType::Embedding => {
                total += (num("input_dim") * num("output_dim")) as u64;
                vec![num("output_dim"), x[0]]
            }
            LayerType::RNN | LayerType::LSTM | LayerType::GRU => {
                let gates = match layer.layer_type {
                    LayerType::LSTM => 4,
                    LayerType::GRU => 3,
                    _ => 1,
                };
                let h = num("num_output");
                total += (gates * h * (x[0] + h + 1)) as u64;
                if layer.flag("return_sequences") {
                    vec![h, x[1]]
                } else {
                    vec![h]
                }
            }
            _ => x,
        };
        shapes.insert(id.to_string(), out);
        for c in model.children(id) {
            let d = indeg.get_mut(c).unwrap();
            *d -= 1;
            if *d == 0 {
                queue.push_back(c);
            }
        }
    }
    total
}

pub type Pt = (f64, f64);

/// Open-interior rectangle `(x0, y0, x1, y1)`.
pub type Box4 = (f64, f64, f64, f64);

/// Whether segment `a`–`b` meets the open interior of `r`, by separating
/// axes: the two box axes and the segment normal.
pub fn segment_hits_box(a: Pt, b: Pt, r: Box4) -> bool {
    let (x0, y0, x1, y1) = r;
    if a.0.max(b.0) <= x0 || a.0.min(b.0) >= x1 || a.1.max(b.1) <= y0 || a.1.min(b.1) >= y1 {
        return false;
    }
    let n = (a.1 - b.1, b.0 - a.0);
    if n == (0.0, 0.0) {
        return true;
    }
    let d: Vec<f64> =
        [(x0, y0), (x1, y0), (x0, y1), (x1, y1)].iter().map(|c| n.0 * (c.0 - a.0) + n.1 * (c.1 - a.1)).collect();
    let (lo, hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    lo < 0.0 && hi > 0.0
}

/// Pairs of layers whose rectangles' open interiors intersect.
pub fn overlapping_pairs(boxes: &[(String, Box4)]) -> Vec<(String, String)> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| boxes[i].1 .0.total_cmp(&boxes[j].1 .0));
    let mut out = Vec::new();
    for (n, &i) in order.iter().enumerate() {
        let a = boxes[i].1;
        for &j in &order[n + 1..] {
            let b = boxes[j].1;
            if b.0 >= a.2 {
                break;
            }
            if a.1 < b.3 && b.1 < a.3 {
                out.push((boxes[i].0.clone(), boxes[j].0.clone()));
            }
        }
    }
    out
}
