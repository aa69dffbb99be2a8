//! Command implementations and experiment harness behind the `uma` binary.

pub mod commands;
pub mod config;
pub mod harness;
pub mod verify;

use uma_core::Error;

/// 2 for usage, parse and config problems, 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } | Error::Config(_) => 2,
        _ => 1,
    }
}
