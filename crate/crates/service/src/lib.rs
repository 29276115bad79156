//! HTTP service and command-line front end over `rexcbr-core`.

pub mod api;
pub mod cli;
