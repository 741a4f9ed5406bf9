//! Command-line front end for the `geoloc` pipeline: synthetic data,
//! preprocessing, training, transfer, evaluation and reporting.

pub mod commands;
pub mod config;
pub mod pipeline;
