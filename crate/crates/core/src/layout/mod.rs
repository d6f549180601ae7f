//! Canvas placement and connection routing.
//!
//! [`compute_layout`] assigns every layer a rectangle; [`route_connections`]
//! draws polylines between them that never cut through a third rectangle.

mod place;
mod route;
mod svg;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::IrModel;

pub use place::compute_layout;
pub use route::{route_connections, segment_crosses_rect};
pub use svg::layout_to_svg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub layer_width: f64,
    pub layer_height: f64,
    pub hgap: f64,
    pub vgap: f64,
    /// Downward displacement applied while a rectangle collides.
    pub overlap_step: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig { layer_width: 130.0, layer_height: 40.0, hgap: 60.0, vgap: 40.0, overlap_step: 80.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("layout setting '{0}' must be a positive finite number")]
pub struct InvalidLayoutConfig(pub &'static str);

impl LayoutConfig {
    pub fn validate(&self) -> Result<(), InvalidLayoutConfig> {
        for (name, v) in [
            ("layer_width", self.layer_width),
            ("layer_height", self.layer_height),
            ("hgap", self.hgap),
            ("vgap", self.vgap),
            ("overlap_step", self.overlap_step),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(InvalidLayoutConfig(name));
            }
        }
        Ok(())
    }

    pub fn column_width(&self) -> f64 {
        self.layer_width + self.hgap
    }

    pub fn row_height(&self) -> f64 {
        self.layer_height + self.vgap
    }
}

/// Canvas point in pixels.
pub type Point = (f64, f64);

/// Top-left corner of every layer rectangle, in model order.
pub type PositionMap = IndexMap<String, Point>;

/// An axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn at(p: Point, config: &LayoutConfig) -> Rect {
        Rect { x0: p.0, y0: p.1, x1: p.0 + config.layer_width, y1: p.1 + config.layer_height }
    }

    /// Whether the open interiors intersect.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionPath {
    pub from: String,
    pub to: String,
    pub points: Vec<Point>,
}

/// Positions plus routed connections: the UI's layout document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub positions: PositionMap,
    pub paths: Vec<ConnectionPath>,
}

impl Layout {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("layout serializes")
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("layout serializes")
    }
}

/// Places and routes `model` in one call.
pub fn layout_model(model: &IrModel, config: &LayoutConfig) -> Layout {
    let positions = compute_layout(model, config);
    let paths = route_connections(model, &positions, config);
    Layout { positions, paths }
}
