//! HTTP API, scripted mock endpoint and the `vaxtract` CLI.

pub mod api;
pub mod cli;
pub mod config;
pub mod mock;
