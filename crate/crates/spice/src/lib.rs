//! File formats, IO and the command-line front end for `spice-core`.

pub mod cli;
pub mod io;
pub mod manifest;
pub mod render;
pub mod synth;

pub use cli::run;
