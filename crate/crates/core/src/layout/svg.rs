use std::fmt::Write;

use super::{ConnectionPath, LayoutConfig, PositionMap};
use crate::ir::IrModel;

const MARGIN: f64 = 20.0;

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(ch),
        }
    }
    out
}

/// Renders a placed and routed model as a standalone SVG document. The
/// drawing is shifted so its top-left corner sits at a small margin.
pub fn layout_to_svg(
    model: &IrModel,
    positions: &PositionMap,
    paths: &[ConnectionPath],
    config: &LayoutConfig,
) -> String {
    let points = positions
        .values()
        .flat_map(|&(x, y)| [(x, y), (x + config.layer_width, y + config.layer_height)])
        .chain(paths.iter().flat_map(|p| p.points.iter().copied()));
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in points {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, y0, x1, y1) = (0.0, 0.0, 0.0, 0.0);
    }
    let (dx, dy) = (MARGIN - x0, MARGIN - y0);
    let (width, height) = (x1 - x0 + 2.0 * MARGIN, y1 - y0 + 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"##
    );
    svg.push_str(concat!(
        r##"<defs><marker id="arrow" viewBox="0 0 10 10" refX="10" refY="5" markerWidth="6" markerHeight="6" orient="auto">"##,
        r##"<path d="M0,0 L10,5 L0,10 z" fill="#555"/></marker></defs>"##,
        "\n"
    ));
    for path in paths {
        let pts: Vec<String> = path.points.iter().map(|&(x, y)| format!("{},{}", x + dx, y + dy)).collect();
        let _ = writeln!(
            svg,
            r##"<polyline class="connection" data-from="{}" data-to="{}" points="{}" fill="none" stroke="#555" stroke-width="1.5" marker-end="url(#arrow)"/>"##,
            escape(&path.from),
            escape(&path.to),
            pts.join(" ")
        );
    }
    for layer in model.layers() {
        let Some(&(x, y)) = positions.get(&layer.id) else { continue };
        let (x, y) = (x + dx, y + dy);
        let _ = writeln!(
            svg,
            r##"<g class="layer" data-id="{}"><rect x="{x}" y="{y}" width="{}" height="{}" rx="4" fill="{}" stroke="#333"/><text x="{}" y="{}" text-anchor="middle" dominant-baseline="middle" font-family="sans-serif" font-size="12" fill="#fff">{}</text></g>"##,
            escape(&layer.id),
            config.layer_width,
            config.layer_height,
            layer.spec().color,
            x + config.layer_width / 2.0,
            y + config.layer_height / 2.0,
            escape(layer.label())
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Connection, IrLayer, LayerType};
    use crate::layout::layout_model;

    #[test]
    fn one_rect_per_layer_and_escaped_labels() {
        let m = IrModel::from_parts(
            "g",
            vec![IrLayer::new("a<b", LayerType::ReLU), IrLayer::new("c", LayerType::ReLU)],
            vec![Connection::new("a<b", "c")],
        )
        .unwrap();
        let c = LayoutConfig::default();
        let l = layout_model(&m, &c);
        let svg = layout_to_svg(&m, &l.positions, &l.paths, &c);
        assert_eq!(svg.matches("<rect").count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("a&lt;b"));
        assert!(!svg.contains("a<b"));
        assert!(svg.contains(r##"x="20" y="20""##));
    }
}
