//! Library surface of the command-line harness, kept separate from the
//! binary so the subcommands and experiment grids are testable in-process.

pub mod commands;
pub mod experiments;
pub mod plot;
