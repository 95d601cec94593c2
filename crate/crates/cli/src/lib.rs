//! Command-line front end for the `nestmc` estimators.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;
