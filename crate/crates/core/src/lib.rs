//! RSSI fingerprint localization across indoor Wi-Fi and outdoor LoRaWAN
//! environments.
//!
//! The pipeline: [`dataset`] ingest and splitting, [`preprocess`] feature
//! cleaning and normalization, the [`nn`] engine, the [`models`] built from it
//! (encoder/base/head localizer and the unified multitask MLP), [`training`]
//! loops including base-block transfer, [`metrics`] and [`persistence`].

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod persistence;
pub mod preprocess;
pub mod training;

pub use error::{Error, Result};
