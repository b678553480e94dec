//! Session server and command-line front end for the conductor engine.

pub mod cli;
pub mod server;
