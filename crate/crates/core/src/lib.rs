//! Framework-neutral neural-network model graphs.
//!
//! Models are imported from Caffe prototxt or Keras JSON into an [`IrModel`],
//! edited, laid out and exported back. Every conversion goes through the IR.

pub mod batch;
pub mod frontends;
pub mod ir;
pub mod layout;
pub mod synth;
pub mod textproto;
pub mod zoo;

pub use frontends::{convert, export, import, ExportOptions, FrontendError, Imported};
pub use ir::{Framework, IrLayer, IrModel, LayerType};
