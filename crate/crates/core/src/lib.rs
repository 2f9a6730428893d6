//! Contract-based trust evaluation for black-box models.
//!
//! A [`Contract`](contract::Contract) states what a model is trusted to do.
//! Models are driven through a [`ModelHandle`](runner::ModelHandle) over a
//! line-delimited JSON protocol; certificate generators in [`certgen`] turn
//! model runs and design metadata into graded
//! [`BehaviorCertificate`](certificate::BehaviorCertificate)s; [`scoring`]
//! turns contracts and certificates into [`TrustScore`](trust::TrustScore)s.

pub mod access;
pub mod canonical;
pub mod certgen;
pub mod certificate;
pub mod contract;
pub mod data;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod reporting;
pub mod scoring;
pub mod search;
pub mod selection;
pub mod runner;
pub mod trust;

pub use error::{Error, Result};
