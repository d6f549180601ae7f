//! Degree tables and traversal order over a model's connection graph.

use std::collections::{HashMap, HashSet, VecDeque};

use super::model::IrModel;

/// Degree and adjacency tables, built in one pass over layers and
/// connections. Connections naming unknown layers are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphIndex {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
    in_degree: Vec<usize>,
    out_degree: Vec<usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

pub fn build_index(model: &IrModel) -> GraphIndex {
    GraphIndex::new(model)
}

impl GraphIndex {
    pub fn new(model: &IrModel) -> Self {
        let n = model.len();
        let ids: Vec<String> = model.layers().map(|l| l.id.clone()).collect();
        let lookup: HashMap<String, usize> = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let mut index = GraphIndex {
            ids,
            lookup,
            in_degree: vec![0; n],
            out_degree: vec![0; n],
            parents: vec![Vec::new(); n],
            children: vec![Vec::new(); n],
        };
        for c in model.connections() {
            let (Some(&from), Some(&to)) = (index.lookup.get(&c.from), index.lookup.get(&c.to)) else {
                continue;
            };
            index.out_degree[from] += 1;
            index.in_degree[to] += 1;
            index.children[from].push(to);
            index.parents[to].push(from);
        }
        index
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn in_degree(&self, id: &str) -> Option<usize> {
        self.position(id).map(|i| self.in_degree[i])
    }

    pub fn out_degree(&self, id: &str) -> Option<usize> {
        self.position(id).map(|i| self.out_degree[i])
    }

    /// Number of distinct parent layers.
    pub fn input_length(&self, id: &str) -> Option<usize> {
        self.position(id).map(|i| self.parents[i].len())
    }

    /// Number of distinct child layers.
    pub fn output_length(&self, id: &str) -> Option<usize> {
        self.position(id).map(|i| self.children[i].len())
    }

    /// Children of `id` in connection declaration order.
    pub fn adjacency(&self, id: &str) -> Option<Vec<&str>> {
        self.position(id).map(|i| self.children[i].iter().map(|&c| self.ids[c].as_str()).collect())
    }

    pub fn parents_of(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children_of(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn in_degrees(&self) -> &[usize] {
        &self.in_degree
    }

    pub fn out_degrees(&self) -> &[usize] {
        &self.out_degree
    }

    /// Back-edges found by a depth-first search that starts from every
    /// unvisited node in declaration order and follows children in
    /// declaration order.
    pub fn back_edges(&self) -> Vec<(usize, usize)> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let n = self.len();
        let mut mark = vec![Mark::White; n];
        let mut out = Vec::new();
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for root in 0..n {
            if mark[root] != Mark::White {
                continue;
            }
            mark[root] = Mark::Grey;
            stack.push((root, 0));
            while let Some(frame) = stack.last_mut() {
                let (node, next) = *frame;
                if let Some(&child) = self.children[node].get(next) {
                    frame.1 += 1;
                    match mark[child] {
                        Mark::White => {
                            mark[child] = Mark::Grey;
                            stack.push((child, 0));
                        }
                        Mark::Grey => out.push((node, child)),
                        Mark::Black => {}
                    }
                } else {
                    mark[node] = Mark::Black;
                    stack.pop();
                }
            }
        }
        out
    }

    /// Kahn order over the graph minus `excluded` edges, seeded with
    /// zero-in-degree nodes in declaration order. Returns `None` if a
    /// cycle remains.
    pub fn topological_order(&self, excluded: &HashSet<(usize, usize)>) -> Option<Vec<usize>> {
        let n = self.len();
        let mut remaining = vec![0usize; n];
        for (i, ps) in self.parents.iter().enumerate() {
            remaining[i] = ps.iter().filter(|&&p| !excluded.contains(&(p, i))).count();
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| remaining[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &c in &self.children[i] {
                if excluded.contains(&(i, c)) {
                    continue;
                }
                remaining[c] -= 1;
                if remaining[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Longest-path depth of every node from a source, ignoring back-edges.
    pub fn depths(&self) -> Vec<usize> {
        let back: HashSet<(usize, usize)> = self.back_edges().into_iter().collect();
        let order = self.topological_order(&back).expect("removing back-edges leaves a DAG");
        let mut depth = vec![0usize; self.len()];
        for i in order {
            for &c in &self.children[i] {
                if !back.contains(&(i, c)) {
                    depth[c] = depth[c].max(depth[i] + 1);
                }
            }
        }
        depth
    }
}

/// Back-edges as `(from, to)` id pairs; empty for an acyclic graph.
pub fn detect_cycles(index: &GraphIndex) -> Vec<(String, String)> {
    index.back_edges().into_iter().map(|(a, b)| (index.id(a).to_string(), index.id(b).to_string())).collect()
}
