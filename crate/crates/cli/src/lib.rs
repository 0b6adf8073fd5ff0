//! Experiment front-end for `epidg`: configuration files, run directories,
//! evaluations and sweeps. The `epidg` binary is a thin layer over this.

pub mod config;
pub mod evaluate;
pub mod gen;
pub mod manifest;
pub mod run;
pub mod sweep;

use epidg::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_INTERNAL: i32 = 1;

/// Process exit status for an error: configuration problems, data problems
/// and numerical aborts each get their own code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Parse { .. }
        | Error::LabelOutOfRange { .. }
        | Error::Checkpoint(_)
        | Error::Io(_)
        | Error::Shape { .. } => EXIT_DATA,
        Error::NonFinite(_) | Error::Diverged { .. } => EXIT_NUMERICAL,
        Error::NoForwardCache => EXIT_INTERNAL,
    }
}
