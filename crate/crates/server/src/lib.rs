//! HTTP service and CLI over the structa core.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod http;
pub mod schema;
