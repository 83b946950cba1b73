//! Driver for the `dpdag` command: configuration, file formats, seeding and
//! the four subcommands.

pub mod bench;
pub mod cli;
pub mod config;
pub mod fit;
pub mod io;
pub mod seeds;
pub mod simulate;
pub mod summarize;

pub use cli::{run, Cli};
