//! Antidote-data generation and individually fair classifier training for
//! tabular classification.
//!
//! The pipeline: declare a [`schema::FeatureSchema`] for a dataset, ingest and
//! encode it ([`data`]), mine comparable pairs ([`comparability`]), train a
//! conditional generator of comparable samples with altered sensitive
//! attributes ([`gan`]), then train classifiers with the generated antidote
//! data by augmentation or distributionally robust optimization ([`train`])
//! and report utility plus individual-fairness metrics ([`metrics`]).

pub mod bundle;
pub mod comparability;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gan;
pub mod gmm;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod schema;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
