//! Wasserstein concentration of empirical measures: exact transport, covering
//! dimension, dyadic multiscale bounds, ring decompositions, tail integrals,
//! the catalog of concentration bounds, and a seeded Monte Carlo harness that
//! checks them.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

pub mod bounds;
pub mod decomposition;
pub mod error;
pub mod harness;
pub mod measures;
pub mod metric;
pub mod multiscale;
pub mod ot;
pub mod quad;
pub mod sampler;
pub mod scalar;
pub mod tail;

pub use error::{Error, Result};
pub use measures::{
    mix, restrict, restrict_to, Atom, EmpiricalMeasure, MeasureRecord, Restriction,
};
pub use metric::{validate_metric, Point, ValidationReport};
pub use ot::{
    wpp_1d, wpp_1d_samples, wpp_1d_vs_quantile, wpp_exact, wpp_mcf, TransportPlan, WppMethod,
    WppValue,
};
pub use sampler::{Family, SamplerMetadata, SyntheticSampler, TailLaw};
pub use scalar::Scalar;

pub type MetricSpace = metric::FiniteMetricSpace<f64>;
pub type Measure = measures::DiscreteMeasure<f64>;
pub type MetricSpace32 = metric::FiniteMetricSpace<f32>;
pub type Measure32 = measures::DiscreteMeasure<f32>;
