//! Data-stewardship gateway for biological sequence datasets.

pub mod cli;
pub mod config;
pub mod error;
pub mod files;
pub mod http;
pub mod keys;
pub mod service;
pub mod store;

pub use gatekeeper_core;
