//! The `dtmapf` command line: map generation, expert planning, corpus
//! building, training, evaluation and self-verification. Every command that
//! writes an artifact also writes a manifest with its resolved configuration
//! and the content hashes of its inputs and outputs.

pub mod commands;
pub mod manifest;
pub mod pipeline;
pub mod verify;

pub use commands::{run, Cli, Command};
