//! Noisy low-rank symmetric tensor completion with entrywise uncertainty
//! quantification.
//!
//! The crate is `no_std` (it needs `alloc`). It provides the symmetric tensor
//! data model ([`tensor`]), a synthetic instance generator ([`synth`]), the
//! two-stage spectral-initialization plus gradient-descent estimator
//! ([`estimator`]), and plug-in covariance estimation with confidence
//! intervals ([`uq`]).

#![no_std]

extern crate alloc;

pub mod error;
pub mod estimator;
pub mod linalg;
pub mod normal;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod uq;

pub use error::{Error, Result};
pub use tensor::{CanonicalTriple, DenseSymTensor, FactorMatrix, ObservationSet};
