//! Service and command-line front end for the strata workspace.

pub mod server;
pub mod session;
pub mod tools;
