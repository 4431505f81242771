//! Command implementations behind the `voxseg` binary.

pub mod cmd;
pub mod config;
pub mod io;
