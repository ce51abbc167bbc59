//! File formats and the command-line front end for `henn-core`.

pub mod cli;
pub mod io;
