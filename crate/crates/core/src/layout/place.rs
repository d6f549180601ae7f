use std::collections::{HashMap, HashSet};

use super::{LayoutConfig, Point, PositionMap};
use crate::ir::{GraphIndex, IrModel};

/// Layers sharing a grid cell, keyed by cell coordinates. A rectangle is
/// registered in every cell it touches.
struct OccupancyHash {
    cell_w: f64,
    cell_h: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl OccupancyHash {
    fn new(config: &LayoutConfig) -> Self {
        OccupancyHash { cell_w: config.column_width(), cell_h: config.row_height(), cells: HashMap::new() }
    }

    fn span(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> impl Iterator<Item = (i64, i64)> {
        let (cx0, cx1) = ((x0 / self.cell_w).floor() as i64, (x1 / self.cell_w).floor() as i64);
        let (cy0, cy1) = ((y0 / self.cell_h).floor() as i64, (y1 / self.cell_h).floor() as i64);
        (cx0..=cx1).flat_map(move |cx| (cy0..=cy1).map(move |cy| (cx, cy)))
    }

    fn insert(&mut self, id: usize, x0: f64, x1: f64, y0: f64, y1: f64) {
        let cells: Vec<(i64, i64)> = self.span(x0, x1, y0, y1).collect();
        for cell in cells {
            self.cells.entry(cell).or_default().push(id);
        }
    }
}

struct Placer<'a> {
    config: &'a LayoutConfig,
    /// Column in half-column units and top y in pixels, per layer.
    slot: Vec<Option<(i64, f64)>>,
    occupancy: OccupancyHash,
}

impl Placer<'_> {
    fn x(&self, half_col: i64) -> f64 {
        half_col as f64 * self.config.column_width() / 2.0
    }

    /// Whether a layer at this slot would come closer than half a gap to
    /// a placed layer, searched through neighbouring occupancy cells.
    fn collides(&self, half_col: i64, y: f64) -> bool {
        let c = self.config;
        let x = self.x(half_col);
        let (reach_x, reach_y) = (c.layer_width + c.hgap / 2.0, c.layer_height + c.vgap / 2.0);
        let (x0, x1) = (x - c.hgap / 2.0, x + c.layer_width + c.hgap / 2.0);
        let (y0, y1) = (y - c.vgap / 2.0, y + c.layer_height + c.vgap / 2.0);
        self.occupancy.span(x0, x1, y0, y1).any(|cell| {
            self.occupancy.cells.get(&cell).is_some_and(|ids| {
                ids.iter().any(|&other| {
                    let (oc, oy) = self.slot[other].expect("registered layers are placed");
                    (self.x(oc) - x).abs() < reach_x && (oy - y).abs() < reach_y
                })
            })
        })
    }

    /// Moves a row of layers down until none of them collides, then
    /// registers them.
    fn settle(&mut self, members: &[(usize, i64)], mut y: f64) {
        while members.iter().any(|&(_, hc)| self.collides(hc, y)) {
            y += self.config.overlap_step;
        }
        for &(id, hc) in members {
            self.slot[id] = Some((hc, y));
            let x = self.x(hc);
            self.occupancy.insert(id, x, x + self.config.layer_width, y, y + self.config.layer_height);
        }
    }
}

/// Assigns every layer the top-left corner of its rectangle.
///
/// Layers are visited depth-first from the sources. A layer with one
/// parent that has one child goes straight below it; the sole-parent
/// children of a branching layer share a row, one column apart and
/// centered on the parent; a layer with several parents sits a row below
/// the lowest of them at the mean of their columns. Colliding rows move
/// down by `overlap_step`. Back-edges take no part in placement.
pub fn compute_layout(model: &IrModel, config: &LayoutConfig) -> PositionMap {
    let index = GraphIndex::new(model);
    let n = index.len();
    let back: HashSet<(usize, usize)> = index.back_edges().into_iter().collect();

    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, kids) in children.iter_mut().enumerate() {
        for &c in index.children_of(i) {
            if !back.contains(&(i, c)) && !kids.contains(&c) {
                kids.push(c);
                parents[c].push(i);
            }
        }
    }

    let mut placer = Placer { config, slot: vec![None; n], occupancy: OccupancyHash::new(config) };
    let mut remaining: Vec<usize> = parents.iter().map(Vec::len).collect();
    let sources: Vec<usize> = (0..n).filter(|&i| remaining[i] == 0).collect();
    let source_col: HashMap<usize, i64> = sources.iter().enumerate().map(|(k, &s)| (s, 2 * k as i64)).collect();
    let mut stack: Vec<usize> = sources.iter().rev().copied().collect();
    let step = config.row_height();

    while let Some(id) = stack.pop() {
        if placer.slot[id].is_none() {
            match parents[id].as_slice() {
                [] => placer.settle(&[(id, source_col[&id])], 0.0),
                &[p] if children[p].len() == 1 => {
                    let (hc, y) = placer.slot[p].expect("parents are placed first");
                    placer.settle(&[(id, hc)], y + step);
                }
                &[p] => {
                    let (hc, y) = placer.slot[p].expect("parents are placed first");
                    let group: Vec<usize> = children[p].iter().copied().filter(|&c| parents[c].len() == 1).collect();
                    let width = group.len() as i64 - 1;
                    let members: Vec<(usize, i64)> =
                        group.iter().enumerate().map(|(i, &c)| (c, hc + 2 * i as i64 - width)).collect();
                    placer.settle(&members, y + step);
                }
                ps => {
                    let slots: Vec<(i64, f64)> =
                        ps.iter().map(|&p| placer.slot[p].expect("parents are placed first")).collect();
                    let mean = slots.iter().map(|s| s.0 as f64).sum::<f64>() / slots.len() as f64;
                    let bottom = slots.iter().map(|s| s.1).fold(f64::MIN, f64::max);
                    placer.settle(&[(id, mean.round() as i64)], bottom + step);
                }
            }
        }
        for &c in children[id].iter().rev() {
            remaining[c] -= 1;
            if remaining[c] == 0 {
                stack.push(c);
            }
        }
    }

    (0..n)
        .map(|i| {
            let (hc, y) = placer.slot[i].expect("every layer is reached once back-edges are removed");
            let p: Point = (placer.x(hc), y);
            (index.id(i).to_string(), p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Connection, IrLayer, LayerType};

    fn graph(nodes: &[&str], edges: &[(&str, &str)]) -> IrModel {
        IrModel::from_parts(
            "g",
            nodes.iter().map(|n| IrLayer::new(*n, LayerType::ReLU)).collect(),
            edges.iter().map(|(a, b)| Connection::new(*a, *b)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn chain_is_one_column() {
        let p = compute_layout(&graph(&["a", "b", "c"], &[("a", "b"), ("b", "c")]), &LayoutConfig::default());
        assert_eq!(p["a"], (0.0, 0.0));
        assert_eq!(p["b"], (0.0, 80.0));
        assert_eq!(p["c"], (0.0, 160.0));
    }

    #[test]
    fn fork_spreads_siblings() {
        let p = compute_layout(&graph(&["a", "b", "c"], &[("a", "b"), ("a", "c")]), &LayoutConfig::default());
        assert_eq!(p["b"].1, p["c"].1);
        assert_eq!(p["b"].0, -95.0);
        assert_eq!(p["c"].0, 95.0);
    }

    #[test]
    fn diamond_centers_join() {
        let m = graph(&["a", "b", "c", "d"], &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]);
        let p = compute_layout(&m, &LayoutConfig::default());
        assert_eq!(p["d"], (0.0, 160.0));
    }

    #[test]
    fn cycle_still_places() {
        let m = graph(&["a", "b", "c"], &[("a", "b"), ("b", "c"), ("c", "b")]);
        let p = compute_layout(&m, &LayoutConfig::default());
        assert_eq!(p.len(), 3);
        assert!(p["c"].1 > p["b"].1);
    }

    #[test]
    fn two_sources_side_by_side() {
        let m = graph(&["q", "i", "j"], &[("q", "j"), ("i", "j")]);
        let p = compute_layout(&m, &LayoutConfig::default());
        assert_eq!(p["q"], (0.0, 0.0));
        assert_eq!(p["i"], (190.0, 0.0));
        assert_eq!(p["j"], (95.0, 80.0));
    }
}
