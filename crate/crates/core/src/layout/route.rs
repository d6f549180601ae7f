use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use super::{ConnectionPath, LayoutConfig, Point, PositionMap, Rect};
use crate::ir::{GraphIndex, IrModel};

/// Routing treats rectangles as this much larger, so a path never merely
/// grazes a corner through rounding.
const CLEARANCE: f64 = 1e-6;

/// Whether the segment `a`–`b` passes through the open interior of `r`.
pub fn segment_crosses_rect(a: Point, b: Point, r: &Rect) -> bool {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for (p, d, min, max) in [(a.0, b.0 - a.0, r.x0, r.x1), (a.1, b.1 - a.1, r.y0, r.y1)] {
        if d == 0.0 {
            if !(p > min && p < max) {
                return false;
            }
        } else {
            let (t0, t1) = ((min - p) / d, (max - p) / d);
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
        }
    }
    lo < hi
}

/// Layer rectangles bucketed by grid cell for segment queries.
struct RectGrid {
    rects: Vec<Rect>,
    cell_w: f64,
    cell_h: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    bounds: Rect,
}

impl RectGrid {
    fn new(rects: Vec<Rect>, config: &LayoutConfig) -> Self {
        let mut grid = RectGrid {
            rects: Vec::new(),
            cell_w: config.column_width(),
            cell_h: config.row_height(),
            cells: HashMap::new(),
            bounds: Rect { x0: 0.0, y0: 0.0, x1: 0.0, y1: 0.0 },
        };
        if let Some(first) = rects.first() {
            grid.bounds = *first;
        }
        for (i, r) in rects.iter().enumerate() {
            grid.bounds.x0 = grid.bounds.x0.min(r.x0);
            grid.bounds.y0 = grid.bounds.y0.min(r.y0);
            grid.bounds.x1 = grid.bounds.x1.max(r.x1);
            grid.bounds.y1 = grid.bounds.y1.max(r.y1);
            for cell in grid.cells_of(r.x0, r.y0, r.x1, r.y1) {
                grid.cells.entry(cell).or_default().push(i);
            }
        }
        grid.rects = rects;
        grid
    }

    fn cells_of(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<(i64, i64)> {
        let (cx0, cx1) = ((x0 / self.cell_w).floor() as i64, (x1 / self.cell_w).floor() as i64);
        let (cy0, cy1) = ((y0 / self.cell_h).floor() as i64, (y1 / self.cell_h).floor() as i64);
        let mut out = Vec::with_capacity(((cx1 - cx0 + 1) * (cy1 - cy0 + 1)).max(0) as usize);
        for cx in cx0..=cx1 {
            for cy in cy0..=cy1 {
                out.push((cx, cy));
            }
        }
        out
    }

    fn segment_clear(&self, a: Point, b: Point, skip: &[usize]) -> bool {
        let (x0, x1) = (a.0.min(b.0), a.0.max(b.0));
        let (y0, y1) = (a.1.min(b.1), a.1.max(b.1));
        // Long segments are checked directly rather than cell by cell.
        let cells = ((x1 - x0) / self.cell_w + 1.0) * ((y1 - y0) / self.cell_h + 1.0);
        let hits = |i: usize| {
            if skip.contains(&i) {
                return false;
            }
            let r = self.rects[i];
            let grown = Rect { x0: r.x0 - CLEARANCE, y0: r.y0 - CLEARANCE, x1: r.x1 + CLEARANCE, y1: r.y1 + CLEARANCE };
            segment_crosses_rect(a, b, &grown)
        };
        if cells > self.rects.len() as f64 {
            return !(0..self.rects.len()).any(hits);
        }
        let mut seen = HashSet::new();
        for cell in self.cells_of(x0 - 1.0, y0 - 1.0, x1 + 1.0, y1 + 1.0) {
            for &i in self.cells.get(&cell).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(i) && hits(i) {
                    return false;
                }
            }
        }
        true
    }

    fn path_clear(&self, points: &[Point], skip: &[usize]) -> bool {
        points.windows(2).all(|w| self.segment_clear(w[0], w[1], skip))
    }
}

/// Drops repeated points and interior points of straight runs.
fn simplify(points: Vec<Point>) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(points.len());
    for p in points {
        if out.last() == Some(&p) {
            continue;
        }
        if out.len() >= 2 {
            let (a, b) = (out[out.len() - 2], out[out.len() - 1]);
            let collinear = (a.0 == b.0 && b.0 == p.0) || (a.1 == b.1 && b.1 == p.1);
            if collinear {
                out.pop();
            }
        }
        out.push(p);
    }
    out
}

/// Draws every connection, in declaration order.
///
/// A connection is a straight segment from the bottom-center of its
/// source to the top-center of its target when that crosses no other
/// rectangle. Otherwise it drops into the gap below the source, runs along
/// a free column gap and enters the target from the gap above it.
/// Back-edges run along the left margin of the drawing.
pub fn route_connections(model: &IrModel, positions: &PositionMap, config: &LayoutConfig) -> Vec<ConnectionPath> {
    let index = GraphIndex::new(model);
    let back: HashSet<(usize, usize)> = index.back_edges().into_iter().collect();
    let rects: Vec<Rect> = (0..index.len())
        .map(|i| {
            positions.get(index.id(i)).map_or(Rect { x0: 0.0, y0: 0.0, x1: 0.0, y1: 0.0 }, |&p| Rect::at(p, config))
        })
        .collect();
    let grid = RectGrid::new(rects, config);
    let (w, h) = (config.layer_width, config.layer_height);

    let mut out = Vec::with_capacity(model.connections().len());
    for c in model.connections() {
        let (Some(s), Some(t)) = (index.position(&c.from), index.position(&c.to)) else { continue };
        if !positions.contains_key(&c.from) || !positions.contains_key(&c.to) {
            continue;
        }
        let (rs, rt) = (grid.rects[s], grid.rects[t]);
        let start = (rs.x0 + w / 2.0, rs.y0 + h);
        let end = (rt.x0 + w / 2.0, rt.y0);
        let skip = [s, t];
        let below = start.1 + config.vgap / 2.0;
        let above = end.1 - config.vgap / 2.0;

        let points = if back.contains(&(s, t)) || end.1 <= start.1 {
            let margin = grid.bounds.x0 - config.hgap / 2.0;
            let path = simplify(vec![start, (start.0, below), (margin, below), (margin, above), (end.0, above), end]);
            if grid.path_clear(&path, &skip) {
                path
            } else {
                grid_route(&grid, config, start, end, &skip).unwrap_or(path)
            }
        } else if grid.path_clear(&[start, end], &skip) {
            vec![start, end]
        } else {
            gap_detour(&grid, config, start, end, below, above, &skip)
                .or_else(|| grid_route(&grid, config, start, end, &skip))
                .unwrap_or_else(|| {
                    let margin = grid.bounds.x0 - config.hgap / 2.0;
                    simplify(vec![start, (start.0, below), (margin, below), (margin, above), (end.0, above), end])
                })
        };
        out.push(ConnectionPath { from: c.from.clone(), to: c.to.clone(), points });
    }
    out
}

/// Tries the vertical gap midlines between columns, nearest first, with
/// the left margin last.
fn gap_detour(
    grid: &RectGrid,
    config: &LayoutConfig,
    start: Point,
    end: Point,
    below: f64,
    above: f64,
    skip: &[usize],
) -> Option<Vec<Point>> {
    let cw = config.column_width();
    let offset = config.layer_width + config.hgap / 2.0;
    let first = ((grid.bounds.x0 - offset) / cw).floor() as i64 - 1;
    let last = ((grid.bounds.x1 - offset) / cw).ceil() as i64 + 1;
    let mid = (start.0 + end.0) / 2.0;
    let mut lines: Vec<f64> = (first..=last).map(|c| c as f64 * cw + offset).collect();
    lines.sort_by(|a, b| (a - mid).abs().total_cmp(&(b - mid).abs()).then(a.total_cmp(b)));
    lines.push(grid.bounds.x0 - config.hgap / 2.0);
    lines.into_iter().find_map(|gx| {
        let path = simplify(vec![start, (start.0, below), (gx, below), (gx, above), (end.0, above), end]);
        grid.path_clear(&path, skip).then_some(path)
    })
}

#[derive(PartialEq)]
struct Visit {
    cost: f64,
    node: (usize, usize, u8),
}

impl Eq for Visit {}

impl Ord for Visit {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Visit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest orthogonal path over lines hugging every rectangle, with a
/// penalty per bend. Used when the simple shapes are blocked.
fn grid_route(grid: &RectGrid, config: &LayoutConfig, start: Point, end: Point, skip: &[usize]) -> Option<Vec<Point>> {
    let (qx, qy) = (config.hgap / 4.0, config.vgap / 4.0);
    let from = (start.0, start.1 + qy);
    let to = (end.0, end.1 - qy);
    let b = grid.bounds;
    let mut xs = vec![from.0, to.0, b.x0 - 2.0 * qx, b.x1 + 2.0 * qx];
    let mut ys = vec![from.1, to.1, b.y0 - 2.0 * qy, b.y1 + 2.0 * qy];
    for r in &grid.rects {
        xs.extend([r.x0 - qx, r.x1 + qx]);
        ys.extend([r.y0 - qy, r.y1 + qy]);
    }
    for v in [&mut xs, &mut ys] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let xi = |x: f64| xs.iter().position(|&v| v == x);
    let yi = |y: f64| ys.iter().position(|&v| v == y);
    let source = (xi(from.0)?, yi(from.1)?);
    let target = (xi(to.0)?, yi(to.1)?);
    let bend = config.column_width();

    let mut best: HashMap<(usize, usize, u8), f64> = HashMap::new();
    let mut prev: HashMap<(usize, usize, u8), (usize, usize, u8)> = HashMap::new();
    let mut heap = BinaryHeap::new();
    let start_node = (source.0, source.1, 4u8);
    best.insert(start_node, 0.0);
    heap.push(Visit { cost: 0.0, node: start_node });
    let mut reached = None;
    while let Some(Visit { cost, node }) = heap.pop() {
        if best.get(&node).is_some_and(|&c| c < cost) {
            continue;
        }
        let (i, j, dir) = node;
        if (i, j) == target {
            reached = Some(node);
            break;
        }
        let steps: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        for (d, (di, dj)) in steps.iter().enumerate() {
            let (ni, nj) = (i as i64 + di, j as i64 + dj);
            if ni < 0 || nj < 0 || ni as usize >= xs.len() || nj as usize >= ys.len() {
                continue;
            }
            let (ni, nj) = (ni as usize, nj as usize);
            let a = (xs[i], ys[j]);
            let p = (xs[ni], ys[nj]);
            if !grid.segment_clear(a, p, skip) {
                continue;
            }
            let turn = if dir != 4 && dir != d as u8 { bend } else { 0.0 };
            let next = (ni, nj, d as u8);
            let c = cost + (p.0 - a.0).abs() + (p.1 - a.1).abs() + turn;
            if best.get(&next).is_none_or(|&old| c < old) {
                best.insert(next, c);
                prev.insert(next, node);
                heap.push(Visit { cost: c, node: next });
            }
        }
    }
    let mut node = reached?;
    let mut points = vec![end, (xs[node.0], ys[node.1])];
    while let Some(&p) = prev.get(&node) {
        points.push((xs[p.0], ys[p.1]));
        node = p;
    }
    points.push(start);
    points.reverse();
    let path = simplify(points);
    grid.path_clear(&path, skip).then_some(path)
}
