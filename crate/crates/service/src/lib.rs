//! HTTP API and command-line front end for the fusionrag engine.

pub mod api;
pub mod cli;
pub mod config;
pub mod ops;
pub mod store;
