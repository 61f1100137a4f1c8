//! Command-line lab around `relaxctl-core`: config parsing, a rayon
//! executor, CSV/JSON artifacts and run manifests.

mod cli;
pub mod config;
pub mod exec;
pub mod io;

pub use cli::dispatch;
