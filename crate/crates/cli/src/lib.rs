//! Command line front end and HTTP classify service for `intent-core`.

pub mod app;
pub mod config;
pub mod http;
pub mod model;
pub mod service;

use intent_core::{Error, ErrorKind};

/// Process exit status for an error: 2 validation, 3 I/O, 4 remote service.
pub fn exit_code(error: &Error) -> i32 {
    match error.kind() {
        ErrorKind::Validation => 2,
        ErrorKind::Io => 3,
        ErrorKind::Remote => 4,
    }
}
