//! Experiment harness, file formats and command-line interface on top of
//! `tensorciq-core`.

pub mod cli;
pub mod harness;
pub mod io;
