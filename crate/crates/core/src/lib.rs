//! Land-cover map validation: stratified sample design, label retrieval from
//! harmonized raster products, two-expert ground-truth annotation and
//! confidence-weighted accuracy statistics.

pub mod annotation;
pub mod grid;
pub mod metrics;
pub mod nomenclature;
pub mod reference;
pub mod retrieval;
pub mod sampling;
pub mod synth;

use thiserror::Error;

/// Any error raised by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] grid::GridError),
    #[error(transparent)]
    Nomenclature(#[from] nomenclature::NomenclatureError),
    #[error(transparent)]
    Sampling(#[from] sampling::SamplingError),
    #[error(transparent)]
    Retrieval(#[from] retrieval::RetrievalError),
    #[error(transparent)]
    Annotation(#[from] annotation::AnnotationError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
}
