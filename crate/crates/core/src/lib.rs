//! Limit-order-book snapshot embeddings, small convolutional / recurrent
//! mid-price forecasters and an automated market-making backtester.
//!
//! The pipeline is: [`lob`] (tape ingestion) → [`embedding`] (snapshot to
//! image-like frames) → [`sampling`] (supervised samples) → [`models`]
//! (training and prediction on top of [`nn`]) → [`backtest`] → [`metrics`].
//!
//! Data-parallel loops (line parsing, embedding, sample construction and
//! batch gradients) go through [`par`], which uses rayon when the default
//! `parallel` feature is enabled and plain iterators otherwise. Results do
//! not depend on the worker count.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod embedding;
mod error;
pub mod lob;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod par;
pub mod sampling;
pub mod synthetic;

pub use error::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Absolute tolerance used for monetary comparisons.
pub const PRICE_EPS: f64 = 1e-9;
