//! Library side of the `hsrl` command: configuration, the data and model
//! pipeline, and one function per subcommand.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
