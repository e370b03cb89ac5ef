//! Library surface of the `mrdib` command-line tool: run configuration
//! and the command implementations, kept callable so the test suites can
//! drive full runs in-process.

pub mod commands;
pub mod config;

use mrdib_core::Error;

/// Process exit codes: 0 success, 1 usage/config error, 2 data error,
/// 3 numerical abort.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Io { .. } | Error::Parse { .. } | Error::Data(_) => 2,
        Error::Numerical(_) => 3,
    }
}
