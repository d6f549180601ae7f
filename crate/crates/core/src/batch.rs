//! Whole-collection operations: many conversions, layouts or parameter
//! counts at once. Items are independent, so with the `parallel` feature
//! they run on the rayon pool; [`sequential`] always runs in order on the
//! calling thread. Results keep input order either way.

use crate::frontends::{convert, ConvertError, Converted, ExportOptions};
use crate::ir::{total_parameters, Framework, IrModel, ShapeMap};
use crate::layout::{layout_model, Layout, LayoutConfig};

#[derive(Debug, Clone)]
pub struct ConvertJob {
    pub text: String,
    pub source: Framework,
    pub target: Framework,
}

pub use crate::ir::CountError;

fn count_one(model: &IrModel) -> Result<u64, CountError> {
    total_parameters(model, &ShapeMap::new())
}

fn convert_one(job: &ConvertJob, options: &ExportOptions) -> Result<Converted, ConvertError> {
    convert(&job.text, job.source, job.target, options)
}

#[cfg(feature = "parallel")]
mod imp {
    use rayon::prelude::*;

    pub fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
        items.par_iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    pub fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
        items.iter().map(f).collect()
    }
}

pub fn convert_all(jobs: &[ConvertJob], options: &ExportOptions) -> Vec<Result<Converted, ConvertError>> {
    imp::map(jobs, |j| convert_one(j, options))
}

pub fn layout_all(models: &[IrModel], config: &LayoutConfig) -> Vec<Layout> {
    imp::map(models, |m| layout_model(m, config))
}

/// Parameter totals using each model's declared input shapes.
pub fn count_all(models: &[IrModel]) -> Vec<Result<u64, CountError>> {
    imp::map(models, count_one)
}

/// The same operations, in order on the calling thread.
pub mod sequential {
    use super::*;

    pub fn convert_all(jobs: &[ConvertJob], options: &ExportOptions) -> Vec<Result<Converted, ConvertError>> {
        jobs.iter().map(|j| convert_one(j, options)).collect()
    }

    pub fn layout_all(models: &[IrModel], config: &LayoutConfig) -> Vec<Layout> {
        models.iter().map(|m| layout_model(m, config)).collect()
    }

    pub fn count_all(models: &[IrModel]) -> Vec<Result<u64, CountError>> {
        models.iter().map(count_one).collect()
    }
}
