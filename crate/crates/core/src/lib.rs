//! Few-label self-training of a joint task classifier and token-level
//! rationale extractor.
//!
//! A teacher is fitted on a handful of labeled documents (task labels plus
//! token rationales), pseudo-labels an unlabeled pool, and a student is
//! trained on those pseudo-labels with confidence weighting and auxiliary
//! objectives that make rationales sufficient, complete and coherent. The
//! student then becomes the next teacher.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root pick a concrete precision.

pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod optim;
pub mod rundir;
pub mod scalar;
pub mod selftrain;

pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};

pub type EncoderF32 = encoder::Encoder<f32>;
pub type EncoderF64 = encoder::Encoder<f64>;
pub type ModelF32 = model::MultiTaskModel<f32>;
pub type ModelF64 = model::MultiTaskModel<f64>;
pub type ModelGradsF32 = model::ModelGrads<f32>;
pub type ModelGradsF64 = model::ModelGrads<f64>;
pub type SelfTrainerF32 = selftrain::SelfTrainer<f32>;
pub type SelfTrainerF64 = selftrain::SelfTrainer<f64>;
pub type SelfTrainOutcomeF32 = selftrain::SelfTrainOutcome<f32>;
pub type SelfTrainOutcomeF64 = selftrain::SelfTrainOutcome<f64>;
